// SPDX-License-Identifier: Apache-2.0
#include "nadl/nadl.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "nadl/compiler.hpp"
#include "nadl/config.hpp"
#include "nadl/error.hpp"
#include "nadl/pipeline.hpp"
#include "nadl/profiler.hpp"
#include "nadl/validator.hpp"

struct nadl_kb {
  nadl::KnowledgeBase kb;
};
struct nadl_document {
  nadl::NadlDocument doc;
};
struct nadl_profile {
  nadl::DatasetProfile profile;
};
struct nadl_report {
  nadl::ValidationReport report;
};
struct nadl_config {
  nadl::PipelineConfig config;
};

namespace {

thread_local std::string g_last_error;

nadl_status set_error(nadl_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
nadl_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return NADL_OK;
  } catch (const nadl::Error& e) {
    return set_error(static_cast<nadl_status>(e.code()),
                     std::string(nadl::error_name(e.code())) + ": " + e.what());
  } catch (const std::exception& e) {
    return set_error(NADL_E_INTERNAL, std::string("internal error: ") + e.what());
  } catch (...) {
    return set_error(NADL_E_INTERNAL, "internal error");
  }
}

void require(const void* p, const char* name) {
  if (p == nullptr) nadl::fail(nadl::ErrorCode::InvalidArgument, std::string(name) + " must not be NULL");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string read_text(const char* path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) nadl::fail(nadl::ErrorCode::Io, std::string("cannot read '") + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

extern "C" {

const char* nadl_version(void) { return "1.0.0"; }

const char* nadl_status_name(nadl_status status) {
  if (status == NADL_OK) return "Ok";
  if (status == NADL_E_INTERNAL) return "InternalError";
  if (status < NADL_E_SYNTAX || status > NADL_E_INVALID_ARGUMENT) return "UnknownStatus";
  return nadl::error_name(static_cast<nadl::ErrorCode>(status)).data();
}

const char* nadl_last_error(void) { return g_last_error.c_str(); }

void nadl_string_free(char* s) { std::free(s); }

// ---- knowledge base ----

nadl_status nadl_kb_load(const char* path, nadl_kb** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new nadl_kb{nadl::KnowledgeBase::load(path)};
  });
}

nadl_status nadl_kb_parse(const char* text, nadl_kb** out) {
  return guarded([&] {
    require(text, "jsonl_text");
    require(out, "out");
    *out = new nadl_kb{nadl::KnowledgeBase::parse(text)};
  });
}

size_t nadl_kb_size(const nadl_kb* kb) { return kb ? kb->kb.size() : 0; }

nadl_status nadl_kb_search(const nadl_kb* kb, const char* query_json, size_t k, char** out_json) {
  return guarded([&] {
    require(kb, "kb");
    require(query_json, "query_json");
    require(out_json, "out_json");
    nlohmann::json q;
    try {
      q = nlohmann::json::parse(query_json);
    } catch (const nlohmann::json::parse_error& e) {
      nadl::fail(nadl::ErrorCode::Syntax, std::string("query: ") + e.what());
    }
    nadl::Query query;
    try {
      query.text_terms = q.value("text_terms", std::vector<std::string>{});
      const auto tags = q.value("required_tags", std::vector<std::string>{});
      query.required_tags.insert(tags.begin(), tags.end());
      if (q.contains("category_filter") && !q.at("category_filter").is_null()) {
        const auto c = nadl::category_from_string(q.at("category_filter").get<std::string>());
        if (!c) nadl::fail(nadl::ErrorCode::Schema, "query: unknown category_filter");
        query.category_filter = c;
      }
    } catch (const nlohmann::json::exception& e) {
      nadl::fail(nadl::ErrorCode::Schema, std::string("query: ") + e.what());
    }
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& c : kb->kb.search(query, k)) {
      out.push_back({{"id", c.record->id},
                     {"score", c.score},
                     {"matched_tags", c.matched_tags},
                     {"matched_terms", c.matched_terms}});
    }
    *out_json = dup(out.dump());
  });
}

void nadl_kb_free(nadl_kb* kb) { delete kb; }

// ---- documents ----

nadl_status nadl_document_parse(const char* text, nadl_document** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = new nadl_document{nadl::parse_nadl(text)};
  });
}

nadl_status nadl_document_load(const char* path, nadl_document** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new nadl_document{nadl::parse_nadl(read_text(path))};
  });
}

nadl_status nadl_document_serialize(const nadl_document* doc, char** out_text) {
  return guarded([&] {
    require(doc, "doc");
    require(out_text, "out_text");
    *out_text = dup(nadl::serialize_nadl(doc->doc));
  });
}

size_t nadl_document_layer_count(const nadl_document* doc) { return doc ? doc->doc.layers.size() : 0; }

void nadl_document_free(nadl_document* doc) { delete doc; }

// ---- profiler ----

nadl_status nadl_profile_dataset(const char* labels_dir, const char* dims_manifest, const char* images_dir,
                                 const char* dataset_id, unsigned threads, int compute_image_stats,
                                 nadl_profile** out) {
  return guarded([&] {
    require(labels_dir, "labels_dir");
    require(out, "out");
    nadl::DimsSource dims;
    if (dims_manifest) dims.manifest = dims_manifest;
    if (images_dir) dims.images_dir = images_dir;
    nadl::ProfileOptions options;
    options.threads = threads == 0 ? 1 : threads;
    if (dataset_id && *dataset_id) options.dataset_id = dataset_id;
    *out = new nadl_profile{nadl::profile_directory(labels_dir, dims, compute_image_stats != 0, options)};
  });
}

nadl_status nadl_profile_parse(const char* json_text, nadl_profile** out) {
  return guarded([&] {
    require(json_text, "json_text");
    require(out, "out");
    *out = new nadl_profile{nadl::profile_from_json(json_text)};
  });
}

nadl_status nadl_profile_load(const char* path, nadl_profile** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new nadl_profile{nadl::profile_from_json(read_text(path))};
  });
}

nadl_status nadl_profile_to_json(const nadl_profile* profile, char** out_text) {
  return guarded([&] {
    require(profile, "profile");
    require(out_text, "out_text");
    *out_text = dup(nadl::profile_to_json(profile->profile));
  });
}

nadl_status nadl_profile_to_markdown(const nadl_profile* profile, char** out_text) {
  return guarded([&] {
    require(profile, "profile");
    require(out_text, "out_text");
    *out_text = dup(nadl::profile_to_markdown(profile->profile));
  });
}

void nadl_profile_free(nadl_profile* profile) { delete profile; }

// ---- validator ----

nadl_status nadl_validate(const nadl_document* doc, const nadl_kb* kb, nadl_report** out) {
  return guarded([&] {
    require(doc, "doc");
    require(kb, "kb");
    require(out, "out");
    *out = new nadl_report{nadl::validate(doc->doc, kb->kb)};
  });
}

int nadl_report_severity(const nadl_report* report) { return report ? report->report.severity() : 2; }

size_t nadl_report_error_count(const nadl_report* report) { return report ? report->report.errors.size() : 0; }

size_t nadl_report_warning_count(const nadl_report* report) { return report ? report->report.warnings.size() : 0; }

int64_t nadl_report_total_params(const nadl_report* report) { return report ? report->report.total_params : 0; }

nadl_status nadl_report_to_json(const nadl_report* report, char** out_text) {
  return guarded([&] {
    require(report, "report");
    require(out_text, "out_text");
    *out_text = dup(nadl::report_to_json(report->report));
  });
}

nadl_status nadl_report_to_table(const nadl_report* report, const nadl_document* doc, char** out_text) {
  return guarded([&] {
    require(report, "report");
    require(doc, "doc");
    require(out_text, "out_text");
    *out_text = dup(nadl::report_to_table(report->report, doc->doc));
  });
}

void nadl_report_free(nadl_report* report) { delete report; }

// ---- configuration ----

nadl_status nadl_config_load(const char* path, nadl_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new nadl_config{path ? nadl::load_config(path) : nadl::PipelineConfig{}};
  });
}

nadl_status nadl_config_apply(nadl_config* config, const char* json_patch) {
  return guarded([&] {
    require(config, "config");
    require(json_patch, "json_patch");
    config->config = nadl::apply_config_patch(config->config, json_patch);
  });
}

nadl_status nadl_config_to_json(const nadl_config* config, char** out_text) {
  return guarded([&] {
    require(config, "config");
    require(out_text, "out_text");
    *out_text = dup(nadl::config_to_json(config->config));
  });
}

void nadl_config_free(nadl_config* config) { delete config; }

// ---- architect ----

nadl_status nadl_synthesize(const nadl_profile* profile, const nadl_kb* kb, const nadl_config* config,
                            nadl_document** out_doc, char** out_trace_json) {
  return guarded([&] {
    require(profile, "profile");
    require(kb, "kb");
    require(config, "config");
    require(out_doc, "out_doc");
    auto result = nadl::synthesize(profile->profile, kb->kb, config->config);
    std::string trace = nadl::trace_to_json(result.trace);
    *out_doc = new nadl_document{std::move(result.doc)};
    if (out_trace_json) *out_trace_json = dup(trace);
  });
}

// ---- compiler ----

nadl_status nadl_compile_yaml(const nadl_document* doc, const nadl_kb* kb, char** out_text) {
  return guarded([&] {
    require(doc, "doc");
    require(kb, "kb");
    require(out_text, "out_text");
    *out_text = dup(nadl::compile_to_yaml(doc->doc, kb->kb));
  });
}

nadl_status nadl_parse_yaml(const char* text, const nadl_kb* kb, nadl_document** out) {
  return guarded([&] {
    require(text, "text");
    require(kb, "kb");
    require(out, "out");
    *out = new nadl_document{nadl::parse_yaml_back(text, kb->kb)};
  });
}

nadl_status nadl_compile_graph(const nadl_document* doc, const nadl_report* report, char** out_text) {
  return guarded([&] {
    require(doc, "doc");
    require(out_text, "out_text");
    *out_text = dup(nadl::compile_to_graph_export(doc->doc, report ? &report->report : nullptr));
  });
}

nadl_status nadl_emit_bundle(const nadl_document* doc, const nadl_profile* profile, const nadl_kb* kb,
                             const char* out_dir) {
  return guarded([&] {
    require(doc, "doc");
    require(profile, "profile");
    require(kb, "kb");
    require(out_dir, "out_dir");
    nadl::emit_codegen_bundle(doc->doc, profile->profile, kb->kb, out_dir);
  });
}

// ---- files ----

nadl_status nadl_read_file(const char* path, char** out_text) {
  return guarded([&] {
    require(path, "path");
    require(out_text, "out_text");
    *out_text = dup(read_text(path));
  });
}

nadl_status nadl_write_file(const char* path, const char* text) {
  return guarded([&] {
    require(path, "path");
    require(text, "text");
    nadl::write_file_atomic(path, text);
  });
}

}  // extern "C"
