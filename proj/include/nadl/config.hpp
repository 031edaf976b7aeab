// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "nadl/document.hpp"

namespace nadl {

/// Decision-table thresholds.
struct Thresholds {
  double sparse_scene_fraction = 0.5;   // P1 fires above
  double scale_variation_ratio = 4.0;   // P2 fires above
  double low_texture_edge_density = 0.05;
  double moderate_texture_edge_density = 0.20;  // below: lightweight backbone, else global context
  double small_fraction = 0.4;          // P4 fires above
  std::int64_t dense_objects_per_image = 30;  // P5 fires above
  double imbalance_ratio = 10.0;        // rationale note only

  bool operator==(const Thresholds&) const = default;
};

struct LlmSettings {
  std::string model_id = "gemini-2.5-pro";
  std::string endpoint = "https://generativelanguage.googleapis.com/v1beta/openai";
  std::string api_key_env = "NADL_LLM_API_KEY";
  double temperature = 0.0;
  int max_output_tokens = 8192;
  int max_calls = 20;
  int max_attempts = 4;
  int backoff_ms = 500;
  int timeout_s = 120;
  std::string record_path;  // append the transcript here when set
  std::string replay_path;  // serve responses from this transcript when set

  bool operator==(const LlmSettings&) const = default;
};

struct PipelineConfig {
  Thresholds thresholds;
  int max_iterations = 4;
  std::int64_t param_budget = 7'000'000;
  Task task = Task::Detect;
  std::string reasoner = "rule";  // "rule" or "llm"
  std::string created_at = "1970-01-01T00:00:00Z";
  std::string dataset_id;  // empty: derived from the labels directory name
  unsigned profiler_threads = 1;
  bool image_stats = true;  // compute photometrics when images are available
  LlmSettings llm;

  bool operator==(const PipelineConfig&) const = default;
};

/// JSON config. Missing keys keep their defaults; unknown keys and bad
/// values raise Error{Schema}. Malformed text raises Error{Syntax}.
PipelineConfig parse_config(std::string_view json_text);
/// Applies the keys of `json_patch` over `base` with the same rules.
PipelineConfig apply_config_patch(const PipelineConfig& base, std::string_view json_patch);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& config);

}  // namespace nadl
