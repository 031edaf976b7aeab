// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <png.h>
#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "nadl/error.hpp"
#include "nadl/pipeline.hpp"
#include "nadl/prompts.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace nadl::testing {

fs::path source_dir() { return NADL_SOURCE_DIR; }
fs::path fixture_dir() { return source_dir() / "tests" / "fixtures"; }
fs::path seed_kb_path() { return source_dir() / "data" / "kb" / "seed.jsonl"; }
fs::path tool_dir() { return NADL_TOOL_DIR; }

const KnowledgeBase& seed_kb() {
  static const KnowledgeBase kb = KnowledgeBase::load(seed_kb_path());
  return kb;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

TempDir::TempDir(const std::string& tag) {
  std::string templ = (fs::temp_directory_path() / ("nadl-" + tag + "-XXXXXX")).string();
  if (!mkdtemp(templ.data())) throw std::runtime_error("mkdtemp failed");
  path_ = templ;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

// ---- golden blueprints ----

std::vector<std::string> golden_names() {
  return {"tiny_detect", "fpn_detect", "obb_aerial", "rtdetr_fire", "dense_afpn"};
}

fs::path golden_path(const std::string& name) { return fixture_dir() / "golden" / (name + ".nadl.json"); }

NadlDocument load_golden(const std::string& name) { return parse_nadl(read_text(golden_path(name))); }

GoldenTrace load_golden_trace(const std::string& name) {
  const auto v = json::parse(read_text(fixture_dir() / "golden" / (name + ".trace.json")));
  return {v.at("c_out").get<std::vector<std::int64_t>>(), v.at("stride").get<std::vector<std::int64_t>>()};
}

std::optional<OracleTrace> run_param_oracle(const fs::path& blueprint, std::string* error) {
  const std::string cmd = "python3 " + shell_quote((source_dir() / "tools" / "param_oracle.py").string()) + " --kb " +
                          shell_quote(seed_kb_path().string()) + " " + shell_quote(blueprint.string());
  const auto r = run_command(cmd);
  if (r.exit_code != 0) {
    if (error) *error = r.output;
    return std::nullopt;
  }
  try {
    const auto v = json::parse(r.output).at(blueprint.string());
    OracleTrace t;
    t.c_out = v.at("c_out").get<std::vector<std::int64_t>>();
    t.stride = v.at("stride").get<std::vector<std::int64_t>>();
    t.params = v.at("params").get<std::vector<std::int64_t>>();
    t.total = v.at("total").get<std::int64_t>();
    return t;
  } catch (const std::exception& e) {
    if (error) *error = std::string(e.what()) + ": " + r.output;
    return std::nullopt;
  }
}

// ---- mutation suite ----

std::string_view to_string(MutationClass m) {
  switch (m) {
    case MutationClass::RefOutOfRange: return "ref-out-of-range";
    case MutationClass::RefToSelf: return "ref-to-self";
    case MutationClass::UnknownKind: return "unknown-kind";
    case MutationClass::ArityChange: return "arity-change";
    case MutationClass::UnequalElementwise: return "unequal-elementwise";
  }
  return "?";
}

DiagnosticKind expected_kind(MutationClass m) {
  switch (m) {
    case MutationClass::RefOutOfRange: return DiagnosticKind::BrokenConnection;
    case MutationClass::RefToSelf: return DiagnosticKind::Cycle;
    case MutationClass::UnknownKind: return DiagnosticKind::UnknownModule;
    case MutationClass::ArityChange: return DiagnosticKind::ArityMismatch;
    case MutationClass::UnequalElementwise: return DiagnosticKind::ChannelConflict;
  }
  return DiagnosticKind::BrokenConnection;
}

namespace {

int resolve(int layer, LayerRef r) { return r == kPrevious ? layer - 1 : r; }

}  // namespace

std::vector<Mutant> make_mutants(const std::string& name, const NadlDocument& doc, const GoldenTrace& trace,
                                 const KnowledgeBase& kb) {
  std::vector<Mutant> out;
  const int n = static_cast<int>(doc.layers.size());
  const int head = n - 1;
  auto add = [&](MutationClass m, const std::string& what, const NadlDocument& d) {
    out.push_back({name + "/" + std::string(to_string(m)) + "/" + what, m, d});
  };

  // reference out of range: past the end, far past the end, on the head
  for (auto [layer, ref] : std::array<std::pair<int, int>, 3>{{{n / 3, n}, {2 * n / 3, n + 7}, {head, n + 1}}}) {
    auto d = doc;
    d.layers[layer].from.back() = ref;
    add(MutationClass::RefOutOfRange, "layer" + std::to_string(layer) + "->" + std::to_string(ref), d);
  }
  // reference to self
  for (int layer : {n / 2, head}) {
    auto d = doc;
    d.layers[layer].from.front() = layer;
    add(MutationClass::RefToSelf, "layer" + std::to_string(layer), d);
  }
  // unknown module kind
  const std::array<std::pair<int, const char*>, 3> unknown{{{0, "FooBlock"}, {n / 2, "Conv3D"}, {head, "DetectX"}}};
  for (auto [layer, kind] : unknown) {
    auto d = doc;
    d.layers[layer].module_kind = kind;
    add(MutationClass::UnknownKind, "layer" + std::to_string(layer) + "=" + kind, d);
  }
  // arity change: extra input on a single-input layer, dropped input on the element-wise merge
  int merge = -1;
  for (int i = 0; i < n; ++i) {
    if (doc.layers[i].module_kind == "Add") merge = i;
  }
  for (int i = 2; i < n; ++i) {
    const auto* r = kb.find(doc.layers[i].module_kind);
    if (r && !r->arity.variadic && r->arity.count == 1 && i != merge) {
      auto d = doc;
      d.layers[i].from.push_back(i - 2);
      add(MutationClass::ArityChange, "layer" + std::to_string(i) + "+input", d);
      break;
    }
  }
  if (merge >= 0) {
    auto d = doc;
    d.layers[merge].from.pop_back();
    add(MutationClass::ArityChange, "layer" + std::to_string(merge) + "-input", d);

    // unequal element-wise inputs: rewire one input to the nearest earlier
    // layer whose hand-traced width differs from the other input
    const auto& from = doc.layers[merge].from;
    for (std::size_t slot = 0; slot < from.size() && slot < 2; ++slot) {
      const int other = resolve(merge, from[1 - slot]);
      for (int j = merge - 1; j >= 0; --j) {
        if (j == other || trace.c_out[j] == trace.c_out[other]) continue;
        auto m = doc;
        m.layers[merge].from[slot] = j;
        add(MutationClass::UnequalElementwise, "layer" + std::to_string(merge) + ".from[" + std::to_string(slot) +
                                                   "]->" + std::to_string(j),
            m);
        break;
      }
    }
  }
  return out;
}

// ---- random blueprints ----

namespace {

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& v) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

int uniform(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
bool coin(std::mt19937_64& rng) { return uniform(rng, 0, 1) == 1; }

}  // namespace

NadlDocument random_blueprint(std::mt19937_64& rng, const KnowledgeBase& kb) {
  (void)kb;
  NadlDocument doc;
  doc.task = uniform(rng, 0, 4) == 0 ? Task::Obb : Task::Detect;
  doc.input_spec.num_classes = uniform(rng, 1, 120);
  doc.metadata.dataset_id = "random";
  doc.metadata.created_at = "2026-01-01T00:00:00Z";
  auto& L = doc.layers;
  auto push = [&](std::vector<LayerRef> from, std::string kind, std::vector<Scalar> args, Role role, int repeats = 1) {
    const int index = static_cast<int>(L.size());
    // absolute predecessor references are as valid as the relative form
    for (auto& r : from) {
      if (r == kPrevious && index > 0 && coin(rng)) r = index - 1;
    }
    L.push_back({index, std::move(from), repeats, std::move(kind), std::move(args), role});
    return index;
  };
  auto width = [&](int lo, int hi) { return static_cast<std::int64_t>(16 * uniform(rng, lo, hi)); };

  const std::vector<std::string> blocks{"C2f", "C3k2", "hgnetv2_b0", "CSWin_tiny"};
  push({kNetworkInput}, "Conv", {width(1, 4), std::int64_t{3}, std::int64_t{2}}, Role::Backbone);
  const int stages = uniform(rng, 3, 5);
  std::vector<std::pair<int, std::int64_t>> levels;  // (layer, channels) per stage output
  for (int s = 0; s < stages; ++s) {
    const auto c = width(2 + 2 * s, 4 + 4 * s);
    push({kPrevious}, "Conv", {c, std::int64_t{3}, std::int64_t{2}}, Role::Backbone);
    const std::string block = pick(rng, blocks);
    int out = push({kPrevious}, block, {c}, Role::Backbone, uniform(rng, 1, 3));
    if (uniform(rng, 0, 2) == 0) {
      push({kPrevious}, "Conv", {c, std::int64_t{1}, std::int64_t{1}}, Role::Backbone);
      out = push({kPrevious, out}, "Add", {}, Role::Backbone);
    }
    levels.push_back({out, c});
  }
  if (coin(rng)) {
    const auto c = levels.back().second;
    levels.back().first = push({kPrevious}, "SPPF", {c, std::int64_t{5}}, Role::Backbone);
  }

  // neck over the last three levels
  std::vector<std::pair<int, std::int64_t>> tops(levels.end() - 3, levels.end());
  const std::vector<std::string> aux{"TransformerEncoderBlock", "AIFI_DyT", "SimAM", "CBAM"};
  if (coin(rng)) {
    const auto kind = pick(rng, aux);
    std::vector<Scalar> args;
    if (kind == "TransformerEncoderBlock" || kind == "AIFI_DyT") args = {std::int64_t{1024}, std::int64_t{8}};
    if (kind == "CBAM") args = {std::int64_t{7}};
    tops[2].first = push({tops[2].first}, kind, args, Role::Neck);
  }
  if (coin(rng)) {
    const std::vector<std::string> fuse{"C2f", "RepC3", "BiFusion"};
    std::vector<Scalar> up{std::string("None"), std::int64_t{2}};
    if (coin(rng)) up.push_back(std::string("nearest"));
    auto deep = tops[2];
    for (int lvl = 1; lvl >= 0; --lvl) {
      push({deep.first}, "Upsample", up, Role::Neck);
      std::vector<Scalar> cat_args;
      if (coin(rng)) cat_args.push_back(std::int64_t{1});
      push({kPrevious, tops[lvl].first}, "Concat", cat_args, Role::Neck);
      const auto c = width(4, 16);
      deep = {push({kPrevious}, pick(rng, fuse), {c}, Role::Neck, uniform(rng, 1, 2)), c};
      tops[lvl] = deep;
    }
  }

  const std::vector<LayerRef> feeds{tops[0].first, tops[1].first, tops[2].first};
  const std::int64_t nc = doc.input_spec.num_classes;
  if (doc.task == Task::Obb) {
    push(feeds, "OBB", {nc, std::int64_t{1}}, Role::Head);
  } else {
    switch (uniform(rng, 0, 2)) {
      case 0: push(feeds, "Detect", {nc}, Role::Head); break;
      case 1: push(feeds, "Detect_AFPN", {nc}, Role::Head); break;
      default:
        push(feeds, "RTDETRDecoder",
             {nc, std::int64_t{256}, std::int64_t{300}, std::int64_t{4}, std::int64_t{8}, std::int64_t{3}}, Role::Head);
    }
  }
  return doc;
}

bool graph_identical(const NadlDocument& a, const NadlDocument& b, std::string* why) {
  auto fail_with = [&](const std::string& m) {
    if (why) *why = m;
    return false;
  };
  if (a.task != b.task) return fail_with("task differs");
  if (!(a.input_spec == b.input_spec)) return fail_with("input_spec differs");
  const auto na = normalize_refs(a), nb = normalize_refs(b);
  if (na.layers.size() != nb.layers.size()) {
    return fail_with("layer count " + std::to_string(na.layers.size()) + " vs " + std::to_string(nb.layers.size()));
  }
  for (std::size_t i = 0; i < na.layers.size(); ++i) {
    const auto& x = na.layers[i];
    const auto& y = nb.layers[i];
    if (x.from != y.from) return fail_with("layer " + std::to_string(i) + ": from differs");
    if (x.repeats != y.repeats) return fail_with("layer " + std::to_string(i) + ": repeats differ");
    if (x.module_kind != y.module_kind) return fail_with("layer " + std::to_string(i) + ": kind differs");
    if (x.args != y.args) return fail_with("layer " + std::to_string(i) + ": args differ");
    if (x.role != y.role) return fail_with("layer " + std::to_string(i) + ": role differs");
  }
  const auto ga = graph_of(na), gb = graph_of(nb);
  if (ga.edges != gb.edges) return fail_with("edge lists differ");
  return true;
}

// ---- profiler corpora ----

namespace {

Box box_px(int class_id, double w_px, double h_px, int width, int height, double cx = 0.5, double cy = 0.5) {
  return {class_id, cx, cy, w_px / width, h_px / height};
}

}  // namespace

std::vector<Corpus> oracle_corpora() {
  std::vector<Corpus> out;
  {
    // i % 6 boxes per image, varied image sizes and box shapes
    Corpus c{"mixed_scales", {}, 600, 80.0 / 240.0, 5};
    for (int i = 0; i < 240; ++i) {
      AnnotationRecord r;
      r.image_id = "m" + std::to_string(1000 + i);
      r.width_px = 320 + 32 * (i % 11);
      r.height_px = 240 + 16 * (i % 7);
      for (int j = 0; j < i % 6; ++j) {
        r.boxes.push_back(box_px((i * 3 + j) % 5, 4 + (i * 37 + j * 11) % 300, 4 + (i * 13 + j * 29) % 200,
                                 r.width_px, r.height_px, 0.25 + 0.1 * (j % 5), 0.5));
      }
      c.records.push_back(std::move(r));
    }
    out.push_back(std::move(c));
  }
  {
    // mostly negatives; class 1 never appears
    Corpus c{"sparse_negatives", {}, 120, 270.0 / 300.0, 2};
    for (int i = 0; i < 300; ++i) {
      AnnotationRecord r;
      r.image_id = "s" + std::to_string(1000 + i);
      r.width_px = 1280;
      r.height_px = 720;
      const int k = i % 10;
      const int count = k < 7 ? 0 : (k < 9 ? 1 : 2);
      for (int j = 0; j < count; ++j) {
        const int cls = (i % 30 == 9 && j == 1) ? 2 : 0;
        r.boxes.push_back(box_px(cls, 40 + (i * 7 + j) % 600, 30 + (i * 3 + j) % 400, 1280, 720));
      }
      c.records.push_back(std::move(r));
    }
    out.push_back(std::move(c));
  }
  {
    // 30..50 tiny boxes per image
    Corpus c{"dense_small", {}, 7945, 0.0, 50};
    for (int i = 0; i < 200; ++i) {
      AnnotationRecord r;
      r.image_id = "d" + std::to_string(1000 + i);
      r.width_px = 1920;
      r.height_px = 1080;
      for (int j = 0; j < 30 + i % 21; ++j) {
        r.boxes.push_back(box_px(j % 3, 2 + (i + j) % 40, 2 + (i * j) % 35, 1920, 1080, 0.02 * (1 + j % 49), 0.3));
      }
      c.records.push_back(std::move(r));
    }
    out.push_back(std::move(c));
  }
  return out;
}

Corpus scale_corpus(int images, int boxes_per_image) {
  Corpus c{"scale_" + std::to_string(images), {}, static_cast<std::int64_t>(images) * boxes_per_image,
           boxes_per_image <= 1 ? 1.0 : 0.0, boxes_per_image};
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> side(0.01, 0.5);
  for (int i = 0; i < images; ++i) {
    AnnotationRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "img%06d", i);
    r.image_id = id;
    r.width_px = 1280;
    r.height_px = 960;
    for (int j = 0; j < boxes_per_image; ++j) r.boxes.push_back({j % 20, 0.5, 0.5, side(rng), side(rng)});
    c.records.push_back(std::move(r));
  }
  return c;
}

void write_corpus(const fs::path& dir, const Corpus& corpus) {
  fs::create_directories(dir / "labels");
  std::ofstream dims(dir / "dims.txt");
  dims << "# image_id width height\n";
  char buf[160];
  for (const auto& r : corpus.records) {
    dims << r.image_id << " " << r.width_px << " " << r.height_px << "\n";
    std::ofstream f(dir / "labels" / (r.image_id + ".txt"));
    for (const auto& b : r.boxes) {
      std::snprintf(buf, sizeof buf, "%d %.17g %.17g %.17g %.17g\n", b.class_id, b.cx, b.cy, b.w, b.h);
      f << buf;
    }
  }
}

Raster synthetic_raster(int width, int height, int channels, std::uint32_t seed) {
  Raster r{width, height, channels, {}};
  r.pixels.resize(static_cast<std::size_t>(width) * height * channels);
  std::mt19937 rng(seed);
  const int block = 2 + static_cast<int>(seed % 5);
  const int base = static_cast<int>(rng() % 160);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const bool on = ((x / block) + (y / block)) % 2 == 0;
      for (int c = 0; c < channels; ++c) {
        int v = base + (on ? 60 : 0) + static_cast<int>(rng() % 24) + 10 * c;
        r.pixels[(static_cast<std::size_t>(y) * width + x) * channels + c] = static_cast<std::uint8_t>(std::min(v, 255));
      }
    }
  }
  return r;
}

void write_png(const fs::path& path, const Raster& raster) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(raster.width);
  image.height = static_cast<png_uint_32>(raster.height);
  image.format = raster.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, raster.pixels.data(), 0, nullptr)) {
    throw std::runtime_error("png write failed: " + path.string() + ": " + image.message);
  }
}

DatasetProfile oracle_profile(const std::vector<AnnotationRecord>& records,
                              const std::optional<std::vector<ImageStats>>& stats, const std::string& dataset_id) {
  DatasetProfile p;
  p.dataset_id = dataset_id;
  p.num_images = static_cast<std::int64_t>(records.size());
  std::vector<double> sides;
  std::int64_t small = 0, medium = 0, large = 0, sparse = 0;
  for (const auto& r : records) {
    const auto n = static_cast<std::int64_t>(r.boxes.size());
    p.num_boxes += n;
    if (n <= 1) ++sparse;
    if (n > p.objects_per_image_max) p.objects_per_image_max = n;
    for (const auto& b : r.boxes) {
      p.class_counts[b.class_id] += 1;
      const double area = (b.w * r.width_px) * (b.h * r.height_px);
      if (area < 32.0 * 32.0) {
        ++small;
      } else if (area < 96.0 * 96.0) {
        ++medium;
      } else {
        ++large;
      }
      const double side = std::sqrt(area);
      sides.push_back(side);
      // bin i covers [4 * 256^(i/10), 4 * 256^((i+1)/10)); ends clamp
      int bin = 0;
      for (int i = 1; i < 10; ++i) {
        if (side >= 4.0 * std::pow(256.0, i / 10.0)) bin = i;
      }
      p.scale_histogram[bin] += 1;
    }
  }
  int max_class = -1;
  for (const auto& [c, _] : p.class_counts) max_class = std::max(max_class, c);
  p.num_classes = max_class + 1;
  for (int c = 0; c <= max_class; ++c) {
    if (!p.class_counts.count(c)) p.absent_classes.push_back(c);
  }
  if (!p.class_counts.empty()) {
    std::int64_t lo = INT64_MAX, hi = 0;
    for (const auto& [_, n] : p.class_counts) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    p.imbalance_ratio = static_cast<double>(hi) / static_cast<double>(lo);
  }
  p.objects_per_image_mean = p.num_images ? static_cast<double>(p.num_boxes) / static_cast<double>(p.num_images) : 0;
  p.sparse_scene_fraction = p.num_images ? static_cast<double>(sparse) / static_cast<double>(p.num_images) : 0;
  if (p.num_boxes > 0) {
    const double t = static_cast<double>(p.num_boxes);
    p.small_fraction = small / t;
    p.medium_fraction = medium / t;
    p.large_fraction = large / t;
    std::sort(sides.begin(), sides.end());
    // numpy "linear": value at fractional rank q * (n - 1)
    auto pct = [&](double q) {
      const double rank = q * static_cast<double>(sides.size() - 1);
      const auto below = static_cast<std::size_t>(std::floor(rank));
      const auto above = std::min(below + 1, sides.size() - 1);
      const double t_frac = rank - static_cast<double>(below);
      return sides[below] * (1.0 - t_frac) + sides[above] * t_frac;
    };
    p.scale_variation_ratio = std::max(1.0, pct(0.9) / pct(0.1));
  }
  if (stats && !stats->empty()) {
    double b = 0, c = 0, e = 0;
    for (const auto& s : *stats) {
      b += s.mean_luma;
      c += s.luma_stddev;
      e += s.edge_density;
    }
    const double n = static_cast<double>(stats->size());
    p.mean_brightness = b / n;
    p.mean_contrast = c / n;
    p.mean_edge_density = e / n;
  }
  return p;
}

ImageStats oracle_image_stats(const Raster& raster, const std::string& image_id) {
  const int w = raster.width, h = raster.height;
  auto luma = [&](int x, int y) -> double {
    const auto* px = &raster.pixels[(static_cast<std::size_t>(y) * w + x) * raster.channels];
    return raster.channels == 1 ? px[0] : 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
  };
  ImageStats s;
  s.image_id = image_id;
  double sum = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) sum += luma(x, y);
  }
  s.mean_luma = sum / (static_cast<double>(w) * h);
  double var = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) var += (luma(x, y) - s.mean_luma) * (luma(x, y) - s.mean_luma);
  }
  s.luma_stddev = std::sqrt(var / (static_cast<double>(w) * h));
  static const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  long edges = 0, interior = 0;
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      double gx = 0, gy = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          gx += kx[dy + 1][dx + 1] * luma(x + dx, y + dy);
          gy += ky[dy + 1][dx + 1] * luma(x + dx, y + dy);
        }
      }
      ++interior;
      if (std::hypot(gx, gy) > 32.0) ++edges;
    }
  }
  s.edge_density = interior ? static_cast<double>(edges) / static_cast<double>(interior) : 0.0;
  return s;
}

std::vector<std::string> compare_profiles(const DatasetProfile& got, const DatasetProfile& want, double tol) {
  std::vector<std::string> diffs;
  auto exact = [&](const char* name, auto a, auto b) {
    if (a != b) diffs.push_back(std::string(name) + " differs");
  };
  auto close = [&](const char* name, double a, double b) {
    if (!(std::fabs(a - b) <= tol)) {
      std::ostringstream m;
      m.precision(17);
      m << name << ": got " << a << ", want " << b;
      diffs.push_back(m.str());
    }
  };
  auto close_opt = [&](const char* name, const std::optional<double>& a, const std::optional<double>& b) {
    if (a.has_value() != b.has_value()) {
      diffs.push_back(std::string(name) + ": presence differs");
    } else if (a) {
      close(name, *a, *b);
    }
  };
  exact("dataset_id", got.dataset_id, want.dataset_id);
  exact("num_images", got.num_images, want.num_images);
  exact("num_boxes", got.num_boxes, want.num_boxes);
  exact("num_classes", got.num_classes, want.num_classes);
  exact("class_counts", got.class_counts, want.class_counts);
  exact("absent_classes", got.absent_classes, want.absent_classes);
  exact("objects_per_image_max", got.objects_per_image_max, want.objects_per_image_max);
  exact("scale_histogram", got.scale_histogram, want.scale_histogram);
  close("imbalance_ratio", got.imbalance_ratio, want.imbalance_ratio);
  close("objects_per_image_mean", got.objects_per_image_mean, want.objects_per_image_mean);
  close("small_fraction", got.small_fraction, want.small_fraction);
  close("medium_fraction", got.medium_fraction, want.medium_fraction);
  close("large_fraction", got.large_fraction, want.large_fraction);
  close("scale_variation_ratio", got.scale_variation_ratio, want.scale_variation_ratio);
  close("sparse_scene_fraction", got.sparse_scene_fraction, want.sparse_scene_fraction);
  close_opt("mean_brightness", got.mean_brightness, want.mean_brightness);
  close_opt("mean_contrast", got.mean_contrast, want.mean_contrast);
  close_opt("mean_edge_density", got.mean_edge_density, want.mean_edge_density);
  return diffs;
}

// ---- architect profiles ----

namespace {

struct Shape {
  std::string id;
  int num_classes = 3;
  double sparse = 0.3;
  double scale_variation = 2.5;
  std::optional<double> edge;
  double small = 0.2;
  std::int64_t max_objects = 8;
  double imbalance = 2.0;
};

DatasetProfile make_profile(const Shape& s) {
  DatasetProfile p;
  p.dataset_id = s.id;
  p.num_images = 1000;
  p.num_classes = s.num_classes;
  // class 0 carries the imbalance, the rest share the remainder evenly
  const std::int64_t minority = 100;
  std::int64_t total = 0;
  for (int c = 0; c < s.num_classes; ++c) {
    const auto n = c == 0 ? static_cast<std::int64_t>(std::llround(minority * s.imbalance)) : minority;
    p.class_counts[c] = n;
    total += n;
  }
  p.num_boxes = total;
  p.imbalance_ratio = s.num_classes > 1 ? s.imbalance : 1.0;
  p.objects_per_image_mean = static_cast<double>(total) / static_cast<double>(p.num_images);
  p.objects_per_image_max = std::max<std::int64_t>(s.max_objects, static_cast<std::int64_t>(std::ceil(p.objects_per_image_mean)));
  p.small_fraction = s.small;
  p.large_fraction = (1.0 - s.small) * 0.4;
  p.medium_fraction = 1.0 - p.small_fraction - p.large_fraction;
  std::int64_t left = total;
  for (int i = 0; i < kScaleBins; ++i) {
    const auto n = i == kScaleBins - 1 ? left : total / kScaleBins;
    p.scale_histogram[i] = n;
    left -= n;
  }
  p.scale_variation_ratio = s.scale_variation;
  p.sparse_scene_fraction = s.sparse;
  if (s.edge) {
    p.mean_brightness = 110.0;
    p.mean_contrast = 45.0;
    p.mean_edge_density = *s.edge;
  }
  return p;
}

}  // namespace

DatasetProfile fire_profile() {
  DatasetProfile p;
  p.dataset_id = "fire";
  p.num_images = 1200;
  p.num_boxes = 1350;
  p.num_classes = 2;
  p.class_counts = {{0, 800}, {1, 550}};
  p.imbalance_ratio = 800.0 / 550.0;
  p.objects_per_image_mean = 1350.0 / 1200.0;
  p.objects_per_image_max = 9;
  p.scale_histogram = {20, 60, 110, 150, 200, 230, 240, 190, 110, 40};
  p.small_fraction = 0.35;
  p.medium_fraction = 0.40;
  p.large_fraction = 0.25;
  p.scale_variation_ratio = 9.0;
  p.sparse_scene_fraction = 0.62;
  p.mean_brightness = 96.0;
  p.mean_contrast = 48.0;
  p.mean_edge_density = 0.12;
  return p;
}

DatasetProfile neutral_profile() { return make_profile({"neutral", 3, 0.3, 2.5, std::nullopt, 0.2, 8, 2.0}); }

std::vector<DatasetProfile> sweep_profiles() {
  const std::array<std::optional<double>, 4> edges{std::nullopt, 0.03, 0.12, 0.31};
  std::vector<DatasetProfile> out;
  for (int i = 0; i < 20; ++i) {
    Shape s;
    s.id = "sweep" + std::to_string(i);
    s.num_classes = 1 + (i * 3) % 16;
    s.sparse = (i & 1) ? 0.72 : 0.18;
    s.scale_variation = (i & 2) ? 7.5 + i : 1.8 + 0.05 * i;
    s.small = (i & 4) ? 0.55 : 0.12;
    s.max_objects = (i & 8) ? 64 : 6;
    s.edge = edges[(i / 2 + i) % 4];
    s.imbalance = (i % 3 == 0) ? 24.0 : 1.5;
    out.push_back(make_profile(s));
  }
  return out;
}

// ---- simulated model ----

namespace {

std::string section(const std::string& text, const std::string& open, const std::string& close) {
  const auto a = text.find(open);
  if (a == std::string::npos) return {};
  const auto start = a + open.size();
  const auto b = text.find(close, start);
  return text.substr(start, b == std::string::npos ? std::string::npos : b - start);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

ScriptedTransport::Handler simulated_model(const DatasetProfile& profile, const KnowledgeBase& kb,
                                           const PipelineConfig& config) {
  const auto options = agent_options_from(config);
  RuleReasoner rules(kb, options);
  const auto preferred = run_agent(profile, kb, rules, options).trace.final_candidates;
  const auto table = rule_reasoner_decision_table(profile, options.thresholds, options.assembly.task);

  return [preferred, table](const ChatRequest& request) {
    TransportResult out;
    out.http_status = 200;
    std::string user = request.user_text;
    // a repair prompt quotes the original request; answer that again
    if (user.rfind("Your previous answer could not be used", 0) == 0) {
      user = section(user, "Original request:\n", "\n\nAnswer the original request again");
    }
    if (request.response_schema_id == "query-list") {
      json qs = json::array();
      for (const auto& r : table) {
        if (r.slot == Slot::None) continue;
        json q{{"text_terms", r.query.text_terms},
               {"required_tags", r.query.required_tags},
               {"purpose", lower(std::string(nadl::to_string(r.slot)))}};
        q["category_filter"] = r.query.category_filter ? json(std::string(nadl::to_string(*r.query.category_filter)))
                                                       : json(nullptr);
        qs.push_back(q);
      }
      if (qs.empty()) {
        qs.push_back({{"text_terms", {"standard"}}, {"category_filter", "Backbone"}, {"purpose", "backbone"}});
      }
      out.text = json{{"queries", qs}}.dump();
    } else if (request.response_schema_id == "candidate-set") {
      std::set<std::string> offered;
      static const std::regex line(R"(\n  (\S+) \[(Backbone|Neck|Head)\] score)");
      for (auto it = std::sregex_iterator(user.begin(), user.end(), line); it != std::sregex_iterator(); ++it) {
        offered.insert((*it)[1]);
      }
      auto keep = [&](const std::string& id) { return offered.count(id) ? id : std::string(); };
      json necks = json::array(), aux = json::array(), why = json::object();
      for (const auto& id : preferred.neck_choices) {
        if (offered.count(id)) necks.push_back(id);
      }
      for (const auto& id : preferred.auxiliary) {
        if (offered.count(id)) aux.push_back(id);
      }
      for (const auto& [id, text] : preferred.rationale) {
        if (offered.count(id)) why[id] = text;
      }
      out.text = json{{"backbone_choice", keep(preferred.backbone_choice)},
                      {"neck_choices", necks},
                      {"head_choice", keep(preferred.head_choice)},
                      {"auxiliary", aux},
                      {"rationale", why}}
                     .dump();
    } else if (request.response_schema_id == "nadl-document") {
      out.text = "```json\n" +
                 section(user, "Reference layout that already satisfies every constraint:\n", "\n\nRespond with") +
                 "\n```";
    } else {
      out.status = TransportResult::Status::Failure;
      out.http_status = 400;
      out.text = "unexpected schema";
    }
    return out;
  };
}

// ---- recorded LLM fixtures ----

fs::path llm_fixture(const std::string& name) { return fixture_dir() / "llm" / name; }
fs::path fire_profile_fixture() { return fixture_dir() / "profiles" / "fire.profile.json"; }

namespace {

ChatRequest fixture_request(const LlmSettings& s) {
  ChatRequest r;
  r.model_id = s.model_id;
  r.system_text = std::string(prompt_template("system"));
  r.user_text = "Propose retrieval queries for a two-class smoke and flame dataset.";
  r.response_schema_id = "query-list";
  r.temperature = s.temperature;
  r.max_output_tokens = s.max_output_tokens;
  return r;
}

/// Client that answers from `replies` in order and appends to `path`.
void record_scripted(const fs::path& path, const ChatRequest& request, std::vector<std::string> replies) {
  auto next = std::make_shared<std::size_t>(0);
  auto transport = std::make_shared<ScriptedTransport>([replies, next](const ChatRequest&) {
    TransportResult r;
    r.http_status = 200;
    r.text = replies.at(std::min(*next, replies.size() - 1));
    ++*next;
    return r;
  });
  LlmClient client(transport);
  client.set_transcript_path(path);
  try {
    client.complete_structured(request);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SchemaViolation) throw;
  }
}

}  // namespace

void write_llm_fixtures(const fs::path& root) {
  fs::create_directories(root / "llm");
  fs::create_directories(root / "profiles");
  const auto profile = fire_profile();
  write_text(root / "profiles" / "fire.profile.json", profile_to_json(profile));

  PipelineConfig config;
  config.reasoner = "llm";
  const auto synthesis = root / "llm" / "fire_synthesis.jsonl";
  fs::remove(synthesis);
  {
    auto client = std::make_shared<LlmClient>(std::make_shared<ScriptedTransport>(simulated_model(profile, seed_kb(), config)));
    client->set_transcript_path(synthesis);
    const auto options = agent_options_from(config);
    LlmReasoner reasoner(seed_kb(), options, client, config.llm);
    run_agent(profile, seed_kb(), reasoner, options);
  }

  const auto request = fixture_request(config.llm);
  const std::string good =
      R"({"queries": [{"text_terms": ["transformer encoder"], "required_tags": ["background-suppression"], )"
      R"("category_filter": "Neck", "purpose": "aux"}]})";
  fs::remove(root / "llm" / "schema_repair.jsonl");
  record_scripted(root / "llm" / "schema_repair.jsonl", request,
                  {"Here are the queries: transformer encoder, background suppression.", good});
  fs::remove(root / "llm" / "schema_violation.jsonl");
  record_scripted(root / "llm" / "schema_violation.jsonl", request,
                  {R"({"queries": "transformer encoder"})", R"({"queries": [{"purpose": 7}]})"});
}

// ---- processes ----

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

CommandResult run_command(const std::string& command) {
  CommandResult r;
  FILE* pipe = popen((command + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace nadl::testing
