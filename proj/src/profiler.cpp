// SPDX-License-Identifier: Apache-2.0
#include "nadl/profiler.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "nadl/error.hpp"

namespace nadl {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::array<double, kScaleBins + 1> scale_bin_edges() {
  std::array<double, kScaleBins + 1> edges{};
  const double ratio = kScaleMaxPx / kScaleMinPx;
  for (int i = 0; i <= kScaleBins; ++i) edges[i] = kScaleMinPx * std::pow(ratio, static_cast<double>(i) / kScaleBins);
  edges[kScaleBins] = kScaleMaxPx;
  return edges;
}

int scale_bin(double side) {
  static const auto edges = scale_bin_edges();
  if (side < edges[1]) return 0;
  for (int i = 1; i < kScaleBins; ++i) {
    if (side < edges[i + 1]) return i;
  }
  return kScaleBins - 1;
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view token, T& value) {
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, value);
  return ec == std::errc() && ptr == end;
}

}  // namespace

std::vector<Box> parse_label_text(const std::string& text, const std::string& source_name) {
  std::vector<Box> boxes;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    const std::string where = source_name + ":" + std::to_string(line_no);
    if (tokens.size() != 5) {
      fail(ErrorCode::Format, where + ": expected 5 fields 'class cx cy w h', got " + std::to_string(tokens.size()));
    }
    Box b;
    if (!parse_number(tokens[0], b.class_id) || b.class_id < 0) {
      fail(ErrorCode::Format, where + ": class '" + std::string(tokens[0]) + "' is not a non-negative integer");
    }
    double* fields[] = {&b.cx, &b.cy, &b.w, &b.h};
    const char* names[] = {"cx", "cy", "w", "h"};
    for (int f = 0; f < 4; ++f) {
      if (!parse_number(tokens[f + 1], *fields[f]) || !std::isfinite(*fields[f])) {
        fail(ErrorCode::Format, where + ": " + names[f] + " '" + std::string(tokens[f + 1]) + "' is not numeric");
      }
    }
    auto check = [&](double v, const char* name, bool open_low) {
      const bool ok = open_low ? (v > 0.0 && v <= 1.0) : (v >= 0.0 && v <= 1.0);
      if (!ok) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%g", v);
        fail(ErrorCode::Format, where + ": " + name + " " + buf + " out of range");
      }
    };
    check(b.cx, "cx", false);
    check(b.cy, "cy", false);
    check(b.w, "w", true);
    check(b.h, "h", true);
    boxes.push_back(b);
  }
  return boxes;
}

std::map<std::string, std::pair<int, int>> load_dims_manifest(const fs::path& path) {
  const auto text = read_file(path);
  std::map<std::string, std::pair<int, int>> dims;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(line_no);
    int w = 0, h = 0;
    if (tokens.size() != 3 || !parse_number(tokens[1], w) || !parse_number(tokens[2], h) || w < 1 || h < 1) {
      fail(ErrorCode::Format, where + ": expected 'image_id width height' with positive integer dimensions");
    }
    dims[std::string(tokens[0])] = {w, h};
  }
  return dims;
}

std::vector<AnnotationRecord> load_annotations(const fs::path& label_dir, const DimsSource& dims) {
  if (!fs::is_directory(label_dir)) fail(ErrorCode::Io, "label directory '" + label_dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(label_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    if (entry.path().filename() == "classes.txt") continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::map<std::string, std::pair<int, int>> manifest;
  if (dims.manifest) manifest = load_dims_manifest(*dims.manifest);

  std::vector<AnnotationRecord> records;
  records.reserve(files.size());
  for (const auto& file : files) {
    AnnotationRecord r;
    r.image_id = file.stem().string();
    if (auto it = manifest.find(r.image_id); it != manifest.end()) {
      std::tie(r.width_px, r.height_px) = it->second;
    } else if (auto image = dims.images_dir ? find_image(*dims.images_dir, r.image_id) : std::nullopt) {
      std::tie(r.width_px, r.height_px) = read_image_dims(*image);
    } else {
      fail(ErrorCode::MissingDims, "no dimensions for image '" + r.image_id +
                                       "' (not in the dims manifest and no decodable image found)");
    }
    r.boxes = parse_label_text(read_file(file), file.filename().string());
    records.push_back(std::move(r));
  }
  return records;
}

ImageStats compute_image_stats(const Raster& raster, std::string image_id) {
  const auto w = static_cast<std::size_t>(std::max(raster.width, 0));
  const auto h = static_cast<std::size_t>(std::max(raster.height, 0));
  if (w == 0 || h == 0 || (raster.channels != 1 && raster.channels != 3) ||
      raster.pixels.size() < w * h * static_cast<std::size_t>(raster.channels)) {
    fail(ErrorCode::EmptyImage, "image '" + image_id + "' has no pixel data");
  }
  std::vector<double> luma(w * h);
  for (std::size_t i = 0; i < w * h; ++i) {
    if (raster.channels == 1) {
      luma[i] = raster.pixels[i];
    } else {
      const auto* p = &raster.pixels[i * 3];
      luma[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  }
  ImageStats s;
  s.image_id = std::move(image_id);
  const double n = static_cast<double>(luma.size());
  s.mean_luma = std::accumulate(luma.begin(), luma.end(), 0.0) / n;
  double var = 0.0;
  for (double v : luma) var += (v - s.mean_luma) * (v - s.mean_luma);
  s.luma_stddev = std::sqrt(var / n);

  if (w >= 3 && h >= 3) {
    std::size_t edges = 0;
    auto at = [&](std::size_t x, std::size_t y) { return luma[y * w + x]; };
    for (std::size_t y = 1; y + 1 < h; ++y) {
      for (std::size_t x = 1; x + 1 < w; ++x) {
        const double gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)) -
                          (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
        const double gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)) -
                          (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
        if (std::sqrt(gx * gx + gy * gy) > kEdgeThreshold) ++edges;
      }
    }
    s.edge_density = static_cast<double>(edges) / static_cast<double>((w - 2) * (h - 2));
  }
  return s;
}

void ProfileAccumulator::add(const AnnotationRecord& record) {
  ++images_;
  const auto count = static_cast<std::int64_t>(record.boxes.size());
  if (count <= 1) ++sparse_images_;
  max_objects_ = std::max(max_objects_, count);
  for (const auto& b : record.boxes) {
    ++class_counts_[b.class_id];
    const double area = (b.w * record.width_px) * (b.h * record.height_px);
    if (area < kSmallAreaMax) {
      ++small_;
    } else if (area < kMediumAreaMax) {
      ++medium_;
    } else {
      ++large_;
    }
    const double side = std::sqrt(area);
    ++histogram_[scale_bin(side)];
    sides_.push_back(side);
  }
}

void ProfileAccumulator::add(const ImageStats& stats) { stats_.push_back(stats); }

void ProfileAccumulator::merge(const ProfileAccumulator& other) {
  images_ += other.images_;
  sparse_images_ += other.sparse_images_;
  max_objects_ = std::max(max_objects_, other.max_objects_);
  small_ += other.small_;
  medium_ += other.medium_;
  large_ += other.large_;
  for (const auto& [c, n] : other.class_counts_) class_counts_[c] += n;
  for (int i = 0; i < kScaleBins; ++i) histogram_[i] += other.histogram_[i];
  sides_.insert(sides_.end(), other.sides_.begin(), other.sides_.end());
  stats_.insert(stats_.end(), other.stats_.begin(), other.stats_.end());
}

double percentile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  const double rank = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  return sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - static_cast<double>(lo));
}

DatasetProfile ProfileAccumulator::finish(const std::string& dataset_id) const {
  DatasetProfile p;
  p.dataset_id = dataset_id;
  p.num_images = images_;
  p.class_counts = class_counts_;
  for (const auto& [_, n] : class_counts_) p.num_boxes += n;
  p.num_classes = class_counts_.empty() ? 0 : class_counts_.rbegin()->first + 1;
  for (int c = 0; c < p.num_classes; ++c) {
    if (!class_counts_.count(c)) p.absent_classes.push_back(c);
  }
  if (!class_counts_.empty()) {
    std::int64_t lo = class_counts_.begin()->second, hi = lo;
    for (const auto& [_, n] : class_counts_) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    p.imbalance_ratio = static_cast<double>(hi) / static_cast<double>(lo);
  }
  p.objects_per_image_mean = images_ ? static_cast<double>(p.num_boxes) / static_cast<double>(images_) : 0.0;
  p.objects_per_image_max = max_objects_;
  p.scale_histogram = histogram_;
  if (p.num_boxes > 0) {
    const double total = static_cast<double>(p.num_boxes);
    p.small_fraction = static_cast<double>(small_) / total;
    p.medium_fraction = static_cast<double>(medium_) / total;
    p.large_fraction = static_cast<double>(large_) / total;
    auto sides = sides_;
    std::sort(sides.begin(), sides.end());
    const double p10 = percentile_sorted(sides, 0.10);
    const double p90 = percentile_sorted(sides, 0.90);
    p.scale_variation_ratio = std::max(1.0, p90 / p10);
  }
  p.sparse_scene_fraction = images_ ? static_cast<double>(sparse_images_) / static_cast<double>(images_) : 0.0;

  if (!stats_.empty()) {
    auto stats = stats_;
    std::sort(stats.begin(), stats.end(), [](const ImageStats& a, const ImageStats& b) {
      return std::tie(a.image_id, a.mean_luma, a.luma_stddev, a.edge_density) <
             std::tie(b.image_id, b.mean_luma, b.luma_stddev, b.edge_density);
    });
    double bright = 0, contrast = 0, edges = 0;
    for (const auto& s : stats) {
      bright += s.mean_luma;
      contrast += s.luma_stddev;
      edges += s.edge_density;
    }
    const double n = static_cast<double>(stats.size());
    p.mean_brightness = bright / n;
    p.mean_contrast = contrast / n;
    p.mean_edge_density = edges / n;
  }
  return p;
}

DatasetProfile compute_profile(const std::vector<AnnotationRecord>& records,
                               const std::optional<std::vector<ImageStats>>& image_stats,
                               const ProfileOptions& options) {
  if (records.empty()) fail(ErrorCode::EmptyDataset, "no annotation records to profile");
  ProfileAccumulator total;
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(records.size())));
  if (threads == 1) {
    for (const auto& r : records) total.add(r);
  } else {
    std::vector<ProfileAccumulator> parts(threads);
    std::vector<std::thread> workers;
    const std::size_t chunk = (records.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(records.size(), begin + chunk);
        for (std::size_t i = begin; i < end; ++i) parts[t].add(records[i]);
      });
    }
    for (auto& w : workers) w.join();
    for (const auto& part : parts) total.merge(part);
  }
  if (image_stats) {
    for (const auto& s : *image_stats) total.add(s);
  }
  return total.finish(options.dataset_id);
}

DatasetProfile profile_directory(const fs::path& label_dir, const DimsSource& dims, bool image_stats,
                                 const ProfileOptions& options) {
  const auto records = load_annotations(label_dir, dims);
  std::optional<std::vector<ImageStats>> stats;
  if (image_stats && dims.images_dir) {
    stats.emplace();
    for (const auto& r : records) {
      if (auto path = find_image(*dims.images_dir, r.image_id)) {
        stats->push_back(compute_image_stats(decode_image(*path), r.image_id));
      }
    }
    if (stats->empty()) stats.reset();
  }
  return compute_profile(records, stats, options);
}

// ---- reports ----

namespace {

ojson opt(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("unavailable"); }

}  // namespace

std::string profile_to_json(const DatasetProfile& p) {
  ojson out;
  out["dataset_id"] = p.dataset_id;
  out["num_images"] = p.num_images;
  out["num_boxes"] = p.num_boxes;
  out["num_classes"] = p.num_classes;
  ojson counts = ojson::object();
  for (const auto& [c, n] : p.class_counts) counts[std::to_string(c)] = n;
  out["class_counts"] = counts;
  out["absent_classes"] = p.absent_classes;
  out["imbalance_ratio"] = p.imbalance_ratio;
  out["objects_per_image_mean"] = p.objects_per_image_mean;
  out["objects_per_image_max"] = p.objects_per_image_max;
  const auto edges = scale_bin_edges();
  out["scale_histogram"] = ojson{{"edges_px", std::vector<double>(edges.begin(), edges.end())},
                                 {"counts", std::vector<std::int64_t>(p.scale_histogram.begin(), p.scale_histogram.end())}};
  out["small_fraction"] = p.small_fraction;
  out["medium_fraction"] = p.medium_fraction;
  out["large_fraction"] = p.large_fraction;
  out["scale_variation_ratio"] = p.scale_variation_ratio;
  out["sparse_scene_fraction"] = p.sparse_scene_fraction;
  out["mean_brightness"] = opt(p.mean_brightness);
  out["mean_contrast"] = opt(p.mean_contrast);
  out["mean_edge_density"] = opt(p.mean_edge_density);
  return out.dump(2) + "\n";
}

std::string profile_to_markdown(const DatasetProfile& p) {
  std::ostringstream out;
  out << "# Dataset profile: " << p.dataset_id << "\n\n";
  out << "- num_images: " << p.num_images << "\n";
  out << "- num_boxes: " << p.num_boxes << "\n";
  out << "- num_classes: " << p.num_classes << "\n";
  out << "- class_counts:";
  if (p.class_counts.empty()) out << " none";
  for (const auto& [c, n] : p.class_counts) out << " " << c << "=" << n;
  out << "\n- absent_classes:";
  if (p.absent_classes.empty()) out << " none";
  for (int c : p.absent_classes) out << " " << c;
  out << "\n";
  out << "- imbalance_ratio: " << fmt(p.imbalance_ratio) << "\n";
  out << "- objects_per_image_mean: " << fmt(p.objects_per_image_mean) << "\n";
  out << "- objects_per_image_max: " << p.objects_per_image_max << "\n";
  const auto edges = scale_bin_edges();
  out << "- scale_histogram (sqrt area px):";
  for (int i = 0; i < kScaleBins; ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, " [%.1f,%.1f)=%lld", edges[i], edges[i + 1],
                  static_cast<long long>(p.scale_histogram[i]));
    out << buf;
  }
  out << "\n";
  out << "- small_fraction: " << fmt(p.small_fraction) << "\n";
  out << "- medium_fraction: " << fmt(p.medium_fraction) << "\n";
  out << "- large_fraction: " << fmt(p.large_fraction) << "\n";
  out << "- scale_variation_ratio: " << fmt(p.scale_variation_ratio) << "\n";
  out << "- sparse_scene_fraction: " << fmt(p.sparse_scene_fraction) << "\n";
  out << "- mean_brightness: " << fmt_opt(p.mean_brightness) << "\n";
  out << "- mean_contrast: " << fmt_opt(p.mean_contrast) << "\n";
  out << "- mean_edge_density: " << fmt_opt(p.mean_edge_density) << "\n";
  return out.str();
}

ProfileReport render_report(const DatasetProfile& profile) {
  return {profile_to_json(profile), profile_to_markdown(profile)};
}

DatasetProfile profile_from_json(const std::string& text) {
  json v;
  try {
    v = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Syntax, std::string("malformed profile: ") + e.what());
  }
  if (!v.is_object()) fail(ErrorCode::Schema, "profile: expected an object");
  auto need = [&](const char* key) -> const json& {
    if (!v.contains(key)) fail(ErrorCode::Schema, std::string("profile: missing field '") + key + "'");
    return v.at(key);
  };
  auto num = [&](const char* key, double lo, double hi) {
    const auto& x = need(key);
    if (!x.is_number()) fail(ErrorCode::Schema, std::string("profile: '") + key + "' must be a number");
    const double d = x.get<double>();
    if (!(d >= lo && d <= hi)) fail(ErrorCode::Schema, std::string("profile: '") + key + "' out of range");
    return d;
  };
  auto count = [&](const char* key) {
    const auto& x = need(key);
    if (!x.is_number_integer() || x.get<std::int64_t>() < 0) {
      fail(ErrorCode::Schema, std::string("profile: '") + key + "' must be a non-negative integer");
    }
    return x.get<std::int64_t>();
  };
  auto optional_num = [&](const char* key, double hi) -> std::optional<double> {
    if (!v.contains(key) || v.at(key).is_null()) return std::nullopt;
    return num(key, 0.0, hi);
  };
  constexpr double inf = std::numeric_limits<double>::infinity();

  DatasetProfile p;
  if (v.contains("dataset_id")) {
    if (!v.at("dataset_id").is_string()) fail(ErrorCode::Schema, "profile: 'dataset_id' must be a string");
    p.dataset_id = v.at("dataset_id").get<std::string>();
  }
  p.num_images = count("num_images");
  p.num_boxes = v.contains("num_boxes") ? count("num_boxes") : 0;
  p.num_classes = count("num_classes");
  if (v.contains("class_counts")) {
    const auto& cc = v.at("class_counts");
    if (!cc.is_object()) fail(ErrorCode::Schema, "profile: 'class_counts' must be an object");
    for (const auto& [k, n] : cc.items()) {
      int c = 0;
      if (!parse_number(std::string_view(k), c) || !n.is_number_integer()) {
        fail(ErrorCode::Schema, "profile: bad class_counts entry '" + k + "'");
      }
      p.class_counts[c] = n.get<std::int64_t>();
    }
  }
  if (!v.contains("num_boxes")) {
    for (const auto& [_, n] : p.class_counts) p.num_boxes += n;
  }
  if (v.contains("absent_classes")) p.absent_classes = v.at("absent_classes").get<std::vector<int>>();
  p.imbalance_ratio = num("imbalance_ratio", 1.0, inf);
  p.objects_per_image_mean = num("objects_per_image_mean", 0.0, inf);
  p.objects_per_image_max = count("objects_per_image_max");
  if (v.contains("scale_histogram")) {
    const auto& h = v.at("scale_histogram");
    if (!h.is_object() || !h.contains("counts") || !h.at("counts").is_array() || h.at("counts").size() != kScaleBins) {
      fail(ErrorCode::Schema, "profile: scale_histogram.counts must list " + std::to_string(kScaleBins) + " bins");
    }
    for (int i = 0; i < kScaleBins; ++i) p.scale_histogram[i] = h.at("counts")[i].get<std::int64_t>();
  }
  p.small_fraction = num("small_fraction", 0.0, 1.0);
  p.medium_fraction = num("medium_fraction", 0.0, 1.0);
  p.large_fraction = num("large_fraction", 0.0, 1.0);
  p.scale_variation_ratio = num("scale_variation_ratio", 1.0, inf);
  p.sparse_scene_fraction = num("sparse_scene_fraction", 0.0, 1.0);
  p.mean_brightness = optional_num("mean_brightness", 255.0);
  p.mean_contrast = optional_num("mean_contrast", inf);
  p.mean_edge_density = optional_num("mean_edge_density", 1.0);
  return p;
}

}  // namespace nadl
