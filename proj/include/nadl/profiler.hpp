// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nadl {

struct Box {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;  // normalized to [0, 1]

  bool operator==(const Box&) const = default;
};

struct AnnotationRecord {
  std::string image_id;
  int width_px = 1;
  int height_px = 1;
  std::vector<Box> boxes;

  bool operator==(const AnnotationRecord&) const = default;
};

/// Interleaved 8-bit raster with 1 (gray) or 3 (RGB) channels.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;
};

struct ImageStats {
  std::string image_id;
  double mean_luma = 0;
  double luma_stddev = 0;
  double edge_density = 0;

  bool operator==(const ImageStats&) const = default;
};

/// COCO area thresholds, in squared pixels.
inline constexpr double kSmallAreaMax = 32.0 * 32.0;
inline constexpr double kMediumAreaMax = 96.0 * 96.0;
/// Sobel magnitude threshold on the 0..255 luma scale.
inline constexpr double kEdgeThreshold = 32.0;
/// Log-spaced histogram over sqrt(area): kScaleBins bins from 4 px to 1024 px.
inline constexpr int kScaleBins = 10;
inline constexpr double kScaleMinPx = 4.0;
inline constexpr double kScaleMaxPx = 1024.0;

std::array<double, kScaleBins + 1> scale_bin_edges();
/// Bin of a box side length; values outside [4, 1024] clamp to the end bins.
int scale_bin(double sqrt_area);

struct DatasetProfile {
  std::string dataset_id = "dataset";
  std::int64_t num_images = 0;
  std::int64_t num_boxes = 0;
  std::int64_t num_classes = 0;  // highest class id + 1
  std::map<int, std::int64_t> class_counts;
  std::vector<int> absent_classes;
  double imbalance_ratio = 1.0;
  double objects_per_image_mean = 0.0;
  std::int64_t objects_per_image_max = 0;
  std::array<std::int64_t, kScaleBins> scale_histogram{};
  double small_fraction = 0.0;
  double medium_fraction = 0.0;
  double large_fraction = 0.0;
  double scale_variation_ratio = 1.0;
  double sparse_scene_fraction = 0.0;
  std::optional<double> mean_brightness;
  std::optional<double> mean_contrast;
  std::optional<double> mean_edge_density;

  bool operator==(const DatasetProfile&) const = default;
};

// ---- ingestion ----

/// "image_id width height" per line; '#' starts a comment.
std::map<std::string, std::pair<int, int>> load_dims_manifest(const std::filesystem::path& path);

struct DimsSource {
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> images_dir;
};

/// One record per "*.txt" label file (sorted by name; classes.txt skipped).
/// Throws Error{Format} with file:line, Error{MissingDims}, Error{Io}.
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& label_dir, const DimsSource& dims);

/// Parses the lines of one label file.
std::vector<Box> parse_label_text(const std::string& text, const std::string& source_name);

/// Finds <images_dir>/<image_id>.{png,jpg,jpeg} (any case).
std::optional<std::filesystem::path> find_image(const std::filesystem::path& images_dir, const std::string& image_id);

/// PNG / JPEG decoding to gray or RGB (alpha dropped).
Raster decode_image(const std::filesystem::path& path);
std::pair<int, int> read_image_dims(const std::filesystem::path& path);

// ---- statistics ----

/// Throws Error{EmptyImage}.
ImageStats compute_image_stats(const Raster& raster, std::string image_id = {});

/// Associative accumulator behind compute_profile. Merging partial
/// accumulators in any grouping gives the same finished profile.
class ProfileAccumulator {
 public:
  void add(const AnnotationRecord& record);
  void add(const ImageStats& stats);
  void merge(const ProfileAccumulator& other);
  DatasetProfile finish(const std::string& dataset_id) const;

 private:
  std::int64_t images_ = 0;
  std::int64_t sparse_images_ = 0;
  std::int64_t max_objects_ = 0;
  std::int64_t small_ = 0, medium_ = 0, large_ = 0;
  std::map<int, std::int64_t> class_counts_;
  std::array<std::int64_t, kScaleBins> histogram_{};
  std::vector<double> sides_;  // sqrt(pixel area) per box
  std::vector<ImageStats> stats_;
};

struct ProfileOptions {
  std::string dataset_id = "dataset";
  unsigned threads = 1;  // >1 splits records into chunks and merges
};

/// Throws Error{EmptyDataset} when records is empty.
DatasetProfile compute_profile(const std::vector<AnnotationRecord>& records,
                               const std::optional<std::vector<ImageStats>>& image_stats = std::nullopt,
                               const ProfileOptions& options = {});

/// Loads labels and, when `image_stats` is set and dims.images_dir is
/// given, decodes every image that exists for photometrics.
DatasetProfile profile_directory(const std::filesystem::path& label_dir, const DimsSource& dims,
                                 bool image_stats = false, const ProfileOptions& options = {});

/// Linear-interpolation percentile (numpy default) over sorted values.
double percentile_sorted(const std::vector<double>& sorted, double p);

struct ProfileReport {
  std::string json;      // machine-readable, stable key names
  std::string markdown;  // one labeled line per meta-feature
};

ProfileReport render_report(const DatasetProfile& profile);
std::string profile_to_json(const DatasetProfile& profile);
std::string profile_to_markdown(const DatasetProfile& profile);
/// Throws Error{Schema} on missing keys or out-of-range values.
DatasetProfile profile_from_json(const std::string& text);

}  // namespace nadl
