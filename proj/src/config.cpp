// SPDX-License-Identifier: Apache-2.0
#include "nadl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "nadl/error.hpp"

namespace nadl {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

void reject_unknown(const json& v, const std::string& where, const std::set<std::string>& known) {
  if (!v.is_object()) fail(ErrorCode::Schema, "config: '" + where + "' must be an object");
  for (const auto& [k, _] : v.items()) {
    if (!known.count(k)) fail(ErrorCode::Schema, "config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

template <typename T>
void take(const json& v, const char* key, T& out, const std::string& where) {
  if (!v.contains(key)) return;
  const auto& x = v.at(key);
  const std::string name = where.empty() ? key : where + "." + key;
  if constexpr (std::is_same_v<T, std::string>) {
    if (!x.is_string()) fail(ErrorCode::Schema, "config: '" + name + "' must be a string");
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!x.is_boolean()) fail(ErrorCode::Schema, "config: '" + name + "' must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!x.is_number_integer()) fail(ErrorCode::Schema, "config: '" + name + "' must be an integer");
  } else {
    if (!x.is_number()) fail(ErrorCode::Schema, "config: '" + name + "' must be a number");
  }
  out = x.get<T>();
}

void require(bool ok, const std::string& message) {
  if (!ok) fail(ErrorCode::Schema, "config: " + message);
}

PipelineConfig apply_keys(PipelineConfig c, const json& v) {
  reject_unknown(v, "", {"thresholds", "max_iterations", "param_budget", "task", "reasoner", "created_at",
                         "dataset_id", "profiler_threads", "image_stats", "llm"});
  if (v.contains("thresholds")) {
    const auto& t = v.at("thresholds");
    reject_unknown(t, "thresholds",
                   {"sparse_scene_fraction", "scale_variation_ratio", "low_texture_edge_density",
                    "moderate_texture_edge_density", "small_fraction", "dense_objects_per_image", "imbalance_ratio"});
    auto& th = c.thresholds;
    take(t, "sparse_scene_fraction", th.sparse_scene_fraction, "thresholds");
    take(t, "scale_variation_ratio", th.scale_variation_ratio, "thresholds");
    take(t, "low_texture_edge_density", th.low_texture_edge_density, "thresholds");
    take(t, "moderate_texture_edge_density", th.moderate_texture_edge_density, "thresholds");
    take(t, "small_fraction", th.small_fraction, "thresholds");
    take(t, "dense_objects_per_image", th.dense_objects_per_image, "thresholds");
    take(t, "imbalance_ratio", th.imbalance_ratio, "thresholds");
  }
  take(v, "max_iterations", c.max_iterations, "");
  take(v, "param_budget", c.param_budget, "");
  if (v.contains("task")) {
    std::string task;
    take(v, "task", task, "");
    require(task == "detect" || task == "obb", "task must be \"detect\" or \"obb\"");
    c.task = task == "obb" ? Task::Obb : Task::Detect;
  }
  take(v, "reasoner", c.reasoner, "");
  take(v, "created_at", c.created_at, "");
  take(v, "dataset_id", c.dataset_id, "");
  take(v, "profiler_threads", c.profiler_threads, "");
  take(v, "image_stats", c.image_stats, "");
  if (v.contains("llm")) {
    const auto& l = v.at("llm");
    reject_unknown(l, "llm",
                   {"model_id", "endpoint", "api_key_env", "temperature", "max_output_tokens", "max_calls",
                    "max_attempts", "backoff_ms", "timeout_s", "record_path", "replay_path"});
    auto& s = c.llm;
    take(l, "model_id", s.model_id, "llm");
    take(l, "endpoint", s.endpoint, "llm");
    take(l, "api_key_env", s.api_key_env, "llm");
    take(l, "temperature", s.temperature, "llm");
    take(l, "max_output_tokens", s.max_output_tokens, "llm");
    take(l, "max_calls", s.max_calls, "llm");
    take(l, "max_attempts", s.max_attempts, "llm");
    take(l, "backoff_ms", s.backoff_ms, "llm");
    take(l, "timeout_s", s.timeout_s, "llm");
    take(l, "record_path", s.record_path, "llm");
    take(l, "replay_path", s.replay_path, "llm");
  }

  require(c.max_iterations >= 1, "max_iterations must be >= 1");
  require(c.param_budget >= 1, "param_budget must be positive");
  require(c.reasoner == "rule" || c.reasoner == "llm", "reasoner must be \"rule\" or \"llm\"");
  require(is_valid_timestamp(c.created_at), "created_at must be an ISO-8601 UTC timestamp");
  require(c.profiler_threads >= 1, "profiler_threads must be >= 1");
  require(c.thresholds.low_texture_edge_density <= c.thresholds.moderate_texture_edge_density,
          "low_texture_edge_density must not exceed moderate_texture_edge_density");
  require(!c.llm.model_id.empty(), "llm.model_id must not be empty");
  require(!c.llm.api_key_env.empty(), "llm.api_key_env must not be empty");
  require(c.llm.temperature >= 0.0 && c.llm.temperature <= 2.0, "llm.temperature must be in [0, 2]");
  require(c.llm.max_output_tokens >= 1, "llm.max_output_tokens must be >= 1");
  require(c.llm.max_calls >= 1, "llm.max_calls must be >= 1");
  require(c.llm.max_attempts >= 1, "llm.max_attempts must be >= 1");
  require(c.llm.backoff_ms >= 0, "llm.backoff_ms must be >= 0");
  require(c.llm.timeout_s >= 1, "llm.timeout_s must be >= 1");
  return c;
}

json parse_object(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Syntax, std::string("config: ") + e.what());
  }
}

}  // namespace

PipelineConfig parse_config(std::string_view json_text) { return apply_keys(PipelineConfig{}, parse_object(json_text)); }

PipelineConfig apply_config_patch(const PipelineConfig& base, std::string_view json_patch) {
  return apply_keys(base, parse_object(json_patch));
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot read config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_to_json(const PipelineConfig& c) {
  const auto& t = c.thresholds;
  const auto& l = c.llm;
  ojson v{{"thresholds",
           {{"sparse_scene_fraction", t.sparse_scene_fraction},
            {"scale_variation_ratio", t.scale_variation_ratio},
            {"low_texture_edge_density", t.low_texture_edge_density},
            {"moderate_texture_edge_density", t.moderate_texture_edge_density},
            {"small_fraction", t.small_fraction},
            {"dense_objects_per_image", t.dense_objects_per_image},
            {"imbalance_ratio", t.imbalance_ratio}}},
          {"max_iterations", c.max_iterations},
          {"param_budget", c.param_budget},
          {"task", std::string(to_string(c.task))},
          {"reasoner", c.reasoner},
          {"created_at", c.created_at},
          {"dataset_id", c.dataset_id},
          {"profiler_threads", c.profiler_threads},
          {"image_stats", c.image_stats},
          {"llm",
           {{"model_id", l.model_id},
            {"endpoint", l.endpoint},
            {"api_key_env", l.api_key_env},
            {"temperature", l.temperature},
            {"max_output_tokens", l.max_output_tokens},
            {"max_calls", l.max_calls},
            {"max_attempts", l.max_attempts},
            {"backoff_ms", l.backoff_ms},
            {"timeout_s", l.timeout_s},
            {"record_path", l.record_path},
            {"replay_path", l.replay_path}}}};
  return v.dump(2) + "\n";
}

}  // namespace nadl
