// SPDX-License-Identifier: Apache-2.0
// Fixtures, generators and brute-force oracles shared by the unit tests and
// the acceptance binary.
#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nadl/architect.hpp"
#include "nadl/config.hpp"
#include "nadl/document.hpp"
#include "nadl/knowledge_base.hpp"
#include "nadl/llm_client.hpp"
#include "nadl/profiler.hpp"
#include "nadl/validator.hpp"

namespace nadl::testing {

std::filesystem::path source_dir();
std::filesystem::path fixture_dir();
std::filesystem::path seed_kb_path();
const KnowledgeBase& seed_kb();
/// Directory holding the nadlc binary.
std::filesystem::path tool_dir();
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// ---- golden blueprints ----

struct GoldenTrace {
  std::vector<std::int64_t> c_out;
  std::vector<std::int64_t> stride;
};

std::vector<std::string> golden_names();
NadlDocument load_golden(const std::string& name);
GoldenTrace load_golden_trace(const std::string& name);
std::filesystem::path golden_path(const std::string& name);

struct OracleTrace {
  std::vector<std::int64_t> c_out;
  std::vector<std::int64_t> stride;
  std::vector<std::int64_t> params;
  std::int64_t total = 0;
};

/// Runs tools/param_oracle.py (python3) over one blueprint file.
std::optional<OracleTrace> run_param_oracle(const std::filesystem::path& blueprint, std::string* error = nullptr);

// ---- mutation suite ----

enum class MutationClass { RefOutOfRange, RefToSelf, UnknownKind, ArityChange, UnequalElementwise };
std::string_view to_string(MutationClass m);
DiagnosticKind expected_kind(MutationClass m);

struct Mutant {
  std::string label;
  MutationClass mutation;
  NadlDocument doc;
};

/// Single-field mutants of one golden blueprint; the hand trace picks the
/// rewiring targets for the element-wise class.
std::vector<Mutant> make_mutants(const std::string& golden_name, const NadlDocument& doc, const GoldenTrace& trace,
                                 const KnowledgeBase& kb);

// ---- random blueprints ----

/// Valid blueprint drawn from stage/neck/head templates over the seed KB.
NadlDocument random_blueprint(std::mt19937_64& rng, const KnowledgeBase& kb);

/// Structural equality after resolving relative references: task, input
/// spec and every layer field. Metadata is not compared.
bool graph_identical(const NadlDocument& a, const NadlDocument& b, std::string* why = nullptr);

// ---- profiler corpora ----

struct Corpus {
  std::string name;
  std::vector<AnnotationRecord> records;
  /// Hand-derived values asserted in addition to the oracle comparison.
  std::int64_t expected_boxes = 0;
  double expected_sparse_fraction = 0;
  std::int64_t expected_max_objects = 0;
};

/// Three corpora of at least 200 images each with different shape profiles.
std::vector<Corpus> oracle_corpora();
/// `images` label files with `boxes_per_image` boxes each.
Corpus scale_corpus(int images, int boxes_per_image);
/// Writes "<dir>/labels/*.txt" and "<dir>/dims.txt".
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);

/// Deterministic small rasters for photometric checks.
Raster synthetic_raster(int width, int height, int channels, std::uint32_t seed);
/// Writes an 8-bit PNG (gray or RGB).
void write_png(const std::filesystem::path& path, const Raster& raster);

/// Brute-force reference computed straight from the field definitions.
DatasetProfile oracle_profile(const std::vector<AnnotationRecord>& records,
                              const std::optional<std::vector<ImageStats>>& stats, const std::string& dataset_id);
ImageStats oracle_image_stats(const Raster& raster, const std::string& image_id);

/// Empty when equal; otherwise one line per differing field.
std::vector<std::string> compare_profiles(const DatasetProfile& got, const DatasetProfile& want, double tol = 1e-9);

// ---- architect profiles ----

/// Sparse, scale-varied, moderately textured two-class corpus.
DatasetProfile fire_profile();
/// No decision-table rule fires.
DatasetProfile neutral_profile();
/// Twenty profiles spanning the decision table.
std::vector<DatasetProfile> sweep_profiles();

/// Chat model stand-in that answers every prompt of the LLM reasoner with a
/// schema-valid reply derived from the rule reasoner's decisions.
ScriptedTransport::Handler simulated_model(const DatasetProfile& profile, const KnowledgeBase& kb,
                                           const PipelineConfig& config);

// ---- recorded LLM fixtures ----

/// Files under tests/fixtures: llm/fire_synthesis.jsonl, llm/schema_repair.jsonl,
/// llm/schema_violation.jsonl and profiles/fire.profile.json.
std::filesystem::path llm_fixture(const std::string& name);
std::filesystem::path fire_profile_fixture();

/// Regenerates every LLM fixture under `fixture_root` (same layout as
/// tests/fixtures) with the simulated model and the default config.
void write_llm_fixtures(const std::filesystem::path& fixture_root);

// ---- processes ----

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr
};
CommandResult run_command(const std::string& command);
std::string shell_quote(const std::string& s);

}  // namespace nadl::testing
