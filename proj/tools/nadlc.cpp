// SPDX-License-Identifier: Apache-2.0
// nadlc: dataset profiling, blueprint synthesis, validation and compilation.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "nadl/nadl.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitWarn = 1;
constexpr int kExitError = 2;

struct Failure {
  nadl_status status;
  std::string message;
};

void check(nadl_status st) {
  if (st != NADL_OK) throw Failure{st, nadl_last_error()};
}

struct Deleter {
  void operator()(nadl_kb* p) const { nadl_kb_free(p); }
  void operator()(nadl_document* p) const { nadl_document_free(p); }
  void operator()(nadl_profile* p) const { nadl_profile_free(p); }
  void operator()(nadl_report* p) const { nadl_report_free(p); }
  void operator()(nadl_config* p) const { nadl_config_free(p); }
};
template <typename T>
using Handle = std::unique_ptr<T, Deleter>;

std::string take_string(char* s) {
  std::string out = s ? s : "";
  nadl_string_free(s);
  return out;
}

Handle<nadl_kb> load_kb(const std::string& path) {
  nadl_kb* kb = nullptr;
  check(nadl_kb_load(path.c_str(), &kb));
  return Handle<nadl_kb>(kb);
}

Handle<nadl_document> load_doc(const std::string& path) {
  nadl_document* doc = nullptr;
  check(nadl_document_load(path.c_str(), &doc));
  return Handle<nadl_document>(doc);
}

Handle<nadl_profile> load_profile(const std::string& path) {
  nadl_profile* p = nullptr;
  check(nadl_profile_load(path.c_str(), &p));
  return Handle<nadl_profile>(p);
}

Handle<nadl_report> validate(const nadl_document* doc, const nadl_kb* kb) {
  nadl_report* r = nullptr;
  check(nadl_validate(doc, kb, &r));
  return Handle<nadl_report>(r);
}

void write_text(const std::string& path, const std::string& text) { check(nadl_write_file(path.c_str(), text.c_str())); }

int severity_exit(const nadl_report* report) {
  switch (nadl_report_severity(report)) {
    case 0:
      return kExitOk;
    case 1:
      return kExitWarn;
    default:
      return kExitError;
  }
}

// Flags override the config file, which overrides built-in defaults.
struct ConfigFlags {
  std::string path;
  std::optional<std::string> reasoner;
  std::optional<std::int64_t> budget;
  std::optional<int> max_iterations;
  std::optional<std::string> task;
  std::optional<std::string> replay;
  std::optional<std::string> record;
  std::optional<unsigned> threads;
  std::optional<std::string> dataset_id;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f, bool agent) {
  cmd->add_option("--config", f.path, "JSON config file")->check(CLI::ExistingFile);
  if (agent) {
    cmd->add_option("--reasoner", f.reasoner, "rule or llm")->check(CLI::IsMember({"rule", "llm"}));
    cmd->add_option("--budget", f.budget, "parameter budget");
    cmd->add_option("--max-iterations", f.max_iterations, "agent iteration cap");
    cmd->add_option("--task", f.task, "detect or obb")->check(CLI::IsMember({"detect", "obb"}));
    cmd->add_option("--replay", f.replay, "serve LLM responses from a transcript");
    cmd->add_option("--record", f.record, "append LLM calls to a transcript");
  }
}

Handle<nadl_config> build_config(const ConfigFlags& f) {
  nadl_config* c = nullptr;
  check(nadl_config_load(f.path.empty() ? nullptr : f.path.c_str(), &c));
  Handle<nadl_config> config(c);
  json patch = json::object();
  if (f.reasoner) patch["reasoner"] = *f.reasoner;
  if (f.budget) patch["param_budget"] = *f.budget;
  if (f.max_iterations) patch["max_iterations"] = *f.max_iterations;
  if (f.task) patch["task"] = *f.task;
  if (f.replay) patch["llm"]["replay_path"] = *f.replay;
  if (f.record) patch["llm"]["record_path"] = *f.record;
  if (f.threads) patch["profiler_threads"] = *f.threads;
  if (f.dataset_id) patch["dataset_id"] = *f.dataset_id;
  if (!patch.empty()) check(nadl_config_apply(config.get(), patch.dump().c_str()));
  return config;
}

json config_json(const nadl_config* config) {
  char* text = nullptr;
  check(nadl_config_to_json(config, &text));
  return json::parse(take_string(text));
}

// "data/fire/labels" -> "fire"; "data/fire" -> "fire".
std::string dataset_id_from(const std::string& labels_dir) {
  fs::path p = fs::path(labels_dir).lexically_normal();
  if (!p.has_filename()) p = p.parent_path();
  std::string name = p.filename().string();
  if ((name == "labels" || name == "train" || name == "val") && p.has_parent_path()) {
    name = p.parent_path().filename().string();
  }
  return name.empty() || name == "." ? "dataset" : name;
}

// ---- profile ----

struct ProfileArgs {
  std::string labels, dims, images, out, format = "json";
  ConfigFlags config;
};

Handle<nadl_profile> run_profile(const ProfileArgs& a, const json& cfg) {
  std::string id = cfg.at("dataset_id").get<std::string>();
  if (id.empty()) id = dataset_id_from(a.labels);
  const bool stats = cfg.at("image_stats").get<bool>() && !a.images.empty();
  nadl_profile* p = nullptr;
  check(nadl_profile_dataset(a.labels.c_str(), a.dims.empty() ? nullptr : a.dims.c_str(),
                             a.images.empty() ? nullptr : a.images.c_str(), id.c_str(),
                             cfg.at("profiler_threads").get<unsigned>(), stats ? 1 : 0, &p));
  return Handle<nadl_profile>(p);
}

int cmd_profile(const ProfileArgs& a) {
  auto config = build_config(a.config);
  auto profile = run_profile(a, config_json(config.get()));
  char* text = nullptr;
  check(a.format == "markdown" ? nadl_profile_to_markdown(profile.get(), &text)
                               : nadl_profile_to_json(profile.get(), &text));
  write_text(a.out, take_string(text));
  return kExitOk;
}

// ---- synthesize ----

struct SynthesizeArgs {
  std::string profile, kb, out_blueprint, out_trace;
  ConfigFlags config;
};

int cmd_synthesize(const SynthesizeArgs& a) {
  auto config = build_config(a.config);
  auto kb = load_kb(a.kb);
  auto profile = load_profile(a.profile);
  nadl_document* d = nullptr;
  char* trace = nullptr;
  check(nadl_synthesize(profile.get(), kb.get(), config.get(), &d, &trace));
  Handle<nadl_document> doc(d);
  const std::string trace_text = take_string(trace);
  char* text = nullptr;
  check(nadl_document_serialize(doc.get(), &text));
  write_text(a.out_blueprint, take_string(text));
  if (!a.out_trace.empty()) write_text(a.out_trace, trace_text);
  return severity_exit(validate(doc.get(), kb.get()).get());
}

// ---- validate ----

struct ValidateArgs {
  std::string blueprint, kb, format = "table", out;
};

int cmd_validate(const ValidateArgs& a) {
  auto kb = load_kb(a.kb);
  auto doc = load_doc(a.blueprint);
  auto report = validate(doc.get(), kb.get());
  char* text = nullptr;
  check(a.format == "json" ? nadl_report_to_json(report.get(), &text)
                           : nadl_report_to_table(report.get(), doc.get(), &text));
  const std::string out = take_string(text);
  if (a.out.empty()) {
    std::cout << out;
  } else {
    write_text(a.out, out);
  }
  return severity_exit(report.get());
}

// ---- compile ----

struct CompileArgs {
  std::string blueprint, kb, target = "yaml", out, profile;
};

int cmd_compile(const CompileArgs& a) {
  auto kb = load_kb(a.kb);
  auto doc = load_doc(a.blueprint);
  char* text = nullptr;
  if (a.target == "yaml") {
    check(nadl_compile_yaml(doc.get(), kb.get(), &text));
    write_text(a.out, take_string(text));
  } else if (a.target == "graph") {
    auto report = validate(doc.get(), kb.get());
    check(nadl_compile_graph(doc.get(), report.get(), &text));
    write_text(a.out, take_string(text));
  } else {
    if (a.profile.empty()) throw Failure{NADL_E_INVALID_ARGUMENT, "InvalidArgument: --target bundle needs --profile"};
    auto profile = load_profile(a.profile);
    check(nadl_emit_bundle(doc.get(), profile.get(), kb.get(), a.out.c_str()));
  }
  return kExitOk;
}

// ---- pipeline ----

struct PipelineArgs {
  std::string labels, dims, images, kb, out;
  ConfigFlags config;
};

int cmd_pipeline(const PipelineArgs& a) {
  auto config = build_config(a.config);
  const json cfg = config_json(config.get());
  auto kb = load_kb(a.kb);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw Failure{NADL_E_IO, "IoError: cannot create '" + a.out + "': " + ec.message()};
  const fs::path out(a.out);

  ProfileArgs pa{a.labels, a.dims, a.images, "", "json", {}};
  auto profile = run_profile(pa, cfg);
  char* text = nullptr;
  check(nadl_profile_to_json(profile.get(), &text));
  write_text((out / "profile.json").string(), take_string(text));

  nadl_document* d = nullptr;
  char* trace = nullptr;
  check(nadl_synthesize(profile.get(), kb.get(), config.get(), &d, &trace));
  Handle<nadl_document> doc(d);
  write_text((out / "trace.json").string(), take_string(trace));
  check(nadl_document_serialize(doc.get(), &text));
  write_text((out / "blueprint.nadl.json").string(), take_string(text));

  auto report = validate(doc.get(), kb.get());
  check(nadl_report_to_json(report.get(), &text));
  write_text((out / "validation_report.json").string(), take_string(text));
  const int code = severity_exit(report.get());
  if (code == kExitError) return code;

  check(nadl_compile_yaml(doc.get(), kb.get(), &text));
  write_text((out / "model.yaml").string(), take_string(text));
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nadlc: dataset-driven detector blueprint synthesis"};
  app.set_version_flag("--version", std::string(nadl_version()));
  app.require_subcommand(1);

  ProfileArgs pa;
  auto* profile = app.add_subcommand("profile", "Profile a YOLO-format label directory");
  profile->add_option("--labels", pa.labels, "label directory")->required();
  profile->add_option("--dims", pa.dims, "image dimensions manifest");
  profile->add_option("--images", pa.images, "image directory");
  profile->add_option("--out", pa.out, "report path")->required();
  profile->add_option("--format", pa.format, "json or markdown")->check(CLI::IsMember({"json", "markdown"}));
  profile->add_option("--threads", pa.config.threads, "worker threads");
  profile->add_option("--dataset-id", pa.config.dataset_id, "dataset identifier");
  add_config_flags(profile, pa.config, false);

  SynthesizeArgs sa;
  auto* synth = app.add_subcommand("synthesize", "Synthesize a blueprint from a profile");
  synth->add_option("--profile", sa.profile, "profile report (JSON)")->required();
  synth->add_option("--kb", sa.kb, "knowledge base (JSONL)")->required();
  synth->add_option("--out-blueprint", sa.out_blueprint, "blueprint path")->required();
  synth->add_option("--out-trace", sa.out_trace, "trace path");
  add_config_flags(synth, sa.config, true);

  ValidateArgs va;
  auto* val = app.add_subcommand("validate", "Validate a blueprint");
  val->add_option("--blueprint", va.blueprint, "blueprint path")->required();
  val->add_option("--kb", va.kb, "knowledge base (JSONL)")->required();
  val->add_option("--format", va.format, "table or json")->check(CLI::IsMember({"table", "json"}));
  val->add_option("--out", va.out, "write the report here instead of stdout");

  CompileArgs ca;
  auto* comp = app.add_subcommand("compile", "Compile a blueprint");
  comp->add_option("--blueprint", ca.blueprint, "blueprint path")->required();
  comp->add_option("--kb", ca.kb, "knowledge base (JSONL)")->required();
  comp->add_option("--target", ca.target, "yaml, graph or bundle")
      ->check(CLI::IsMember({"yaml", "graph", "bundle"}));
  comp->add_option("--out", ca.out, "output file, or directory for bundle")->required();
  comp->add_option("--profile", ca.profile, "profile report (bundle only)");

  PipelineArgs pl;
  auto* pipe = app.add_subcommand("pipeline", "Profile, synthesize, validate and compile");
  pipe->add_option("--labels", pl.labels, "label directory")->required();
  pipe->add_option("--dims", pl.dims, "image dimensions manifest");
  pipe->add_option("--images", pl.images, "image directory");
  pipe->add_option("--kb", pl.kb, "knowledge base (JSONL)")->required();
  pipe->add_option("--out", pl.out, "output directory")->required();
  pipe->add_option("--threads", pl.config.threads, "profiler threads");
  pipe->add_option("--dataset-id", pl.config.dataset_id, "dataset identifier");
  add_config_flags(pipe, pl.config, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitError;
  }

  try {
    if (*profile) return cmd_profile(pa);
    if (*synth) return cmd_synthesize(sa);
    if (*val) return cmd_validate(va);
    if (*comp) return cmd_compile(ca);
    if (*pipe) return cmd_pipeline(pl);
  } catch (const Failure& f) {
    std::cerr << "nadlc: " << f.message << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "nadlc: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
