/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface of libnadl. Every object is an opaque handle released with
 * its *_free function. Functions return a status; on failure the message
 * is available from nadl_last_error() on the calling thread. Strings
 * returned through char** are heap-allocated and released with
 * nadl_string_free().
 */
#ifndef NADL_NADL_H
#define NADL_NADL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define NADL_API __declspec(dllexport)
#else
#define NADL_API __attribute__((visibility("default")))
#endif

typedef enum nadl_status {
  NADL_OK = 0,
  NADL_E_SYNTAX = 1,
  NADL_E_SCHEMA = 2,
  NADL_E_REF = 3,
  NADL_E_FORMAT = 4,
  NADL_E_MISSING_DIMS = 5,
  NADL_E_EMPTY_IMAGE = 6,
  NADL_E_EMPTY_DATASET = 7,
  NADL_E_DUPLICATE_ID = 8,
  NADL_E_EMPTY_QUERY = 9,
  NADL_E_UNKNOWN_MODULE = 10,
  NADL_E_REASONER_FAILURE = 11,
  NADL_E_NO_VIABLE_HEAD = 12,
  NADL_E_ASSEMBLY = 13,
  NADL_E_COMPILE = 14,
  NADL_E_IO = 15,
  NADL_E_TRANSPORT = 16,
  NADL_E_AUTH = 17,
  NADL_E_BUDGET_EXCEEDED = 18,
  NADL_E_SCHEMA_VIOLATION = 19,
  NADL_E_INVALID_ARGUMENT = 20,
  NADL_E_INTERNAL = 99
} nadl_status;

typedef struct nadl_kb nadl_kb;
typedef struct nadl_document nadl_document;
typedef struct nadl_profile nadl_profile;
typedef struct nadl_report nadl_report;
typedef struct nadl_config nadl_config;

NADL_API const char* nadl_version(void);
/* Error name such as "SchemaError"; "Ok" for NADL_OK. */
NADL_API const char* nadl_status_name(nadl_status status);
/* Message of the last failed call on this thread; "" when none. */
NADL_API const char* nadl_last_error(void);
NADL_API void nadl_string_free(char* s);

/* ---- knowledge base ---- */
NADL_API nadl_status nadl_kb_load(const char* path, nadl_kb** out);
NADL_API nadl_status nadl_kb_parse(const char* jsonl_text, nadl_kb** out);
NADL_API size_t nadl_kb_size(const nadl_kb* kb);
/* query_json: {"text_terms": [...], "required_tags": [...], "category_filter": "Head"|null}.
 * Result: JSON array of {"id", "score", "matched_tags", "matched_terms"}. */
NADL_API nadl_status nadl_kb_search(const nadl_kb* kb, const char* query_json, size_t k, char** out_json);
NADL_API void nadl_kb_free(nadl_kb* kb);

/* ---- NADL documents ---- */
NADL_API nadl_status nadl_document_parse(const char* text, nadl_document** out);
NADL_API nadl_status nadl_document_load(const char* path, nadl_document** out);
NADL_API nadl_status nadl_document_serialize(const nadl_document* doc, char** out_text);
NADL_API size_t nadl_document_layer_count(const nadl_document* doc);
NADL_API void nadl_document_free(nadl_document* doc);

/* ---- profiler ---- */
/* dims_manifest and images_dir may be NULL. With compute_image_stats set,
 * photometrics come from images_dir. */
NADL_API nadl_status nadl_profile_dataset(const char* labels_dir, const char* dims_manifest, const char* images_dir,
                                          const char* dataset_id, unsigned threads, int compute_image_stats,
                                          nadl_profile** out);
NADL_API nadl_status nadl_profile_parse(const char* json_text, nadl_profile** out);
NADL_API nadl_status nadl_profile_load(const char* path, nadl_profile** out);
NADL_API nadl_status nadl_profile_to_json(const nadl_profile* profile, char** out_text);
NADL_API nadl_status nadl_profile_to_markdown(const nadl_profile* profile, char** out_text);
NADL_API void nadl_profile_free(nadl_profile* profile);

/* ---- validator ---- */
NADL_API nadl_status nadl_validate(const nadl_document* doc, const nadl_kb* kb, nadl_report** out);
/* 0 clean, 1 warnings only, 2 errors. */
NADL_API int nadl_report_severity(const nadl_report* report);
NADL_API size_t nadl_report_error_count(const nadl_report* report);
NADL_API size_t nadl_report_warning_count(const nadl_report* report);
NADL_API int64_t nadl_report_total_params(const nadl_report* report);
NADL_API nadl_status nadl_report_to_json(const nadl_report* report, char** out_text);
NADL_API nadl_status nadl_report_to_table(const nadl_report* report, const nadl_document* doc, char** out_text);
NADL_API void nadl_report_free(nadl_report* report);

/* ---- configuration ---- */
/* path may be NULL for built-in defaults. */
NADL_API nadl_status nadl_config_load(const char* path, nadl_config** out);
/* Overrides keys with a JSON object of the same shape as the config file. */
NADL_API nadl_status nadl_config_apply(nadl_config* config, const char* json_patch);
NADL_API nadl_status nadl_config_to_json(const nadl_config* config, char** out_text);
NADL_API void nadl_config_free(nadl_config* config);

/* ---- architect ---- */
/* Runs the agent with config's reasoner. out_trace_json may be NULL. */
NADL_API nadl_status nadl_synthesize(const nadl_profile* profile, const nadl_kb* kb, const nadl_config* config,
                                     nadl_document** out_doc, char** out_trace_json);

/* ---- compiler ---- */
NADL_API nadl_status nadl_compile_yaml(const nadl_document* doc, const nadl_kb* kb, char** out_text);
NADL_API nadl_status nadl_parse_yaml(const char* text, const nadl_kb* kb, nadl_document** out);
/* report may be NULL. */
NADL_API nadl_status nadl_compile_graph(const nadl_document* doc, const nadl_report* report, char** out_text);
NADL_API nadl_status nadl_emit_bundle(const nadl_document* doc, const nadl_profile* profile, const nadl_kb* kb,
                                      const char* out_dir);

/* ---- files ---- */
NADL_API nadl_status nadl_read_file(const char* path, char** out_text);
/* Atomic replace through a temporary file. */
NADL_API nadl_status nadl_write_file(const char* path, const char* text);

#ifdef __cplusplus
}
#endif

#endif /* NADL_NADL_H */
