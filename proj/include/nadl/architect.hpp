// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "nadl/config.hpp"
#include "nadl/document.hpp"
#include "nadl/knowledge_base.hpp"
#include "nadl/profiler.hpp"

namespace nadl {

class LlmClient;

/// Slot a query or rule serves. Aux blocks are width-preserving extras
/// placed in the head stage ahead of the detection head.
enum class Slot { Backbone, Neck, Head, Aux, None };
std::string_view to_string(Slot s);

struct CandidateSet {
  std::string backbone_choice;  // empty: not chosen yet
  std::vector<std::string> neck_choices;
  std::string head_choice;      // empty: not chosen yet
  std::vector<std::string> auxiliary;
  std::map<std::string, std::string> rationale;

  bool operator==(const CandidateSet&) const = default;
};

struct GapNote {
  std::string feature;  // DatasetProfile field name
  std::string need;     // applicability tag that closes the gap
  std::optional<std::string> satisfied_by;
  std::string rule;     // decision-table rule id
  Slot slot = Slot::None;

  bool operator==(const GapNote&) const = default;
};

struct FiredRule {
  std::string rule;     // "P1", "P2", ...
  std::string feature;  // DatasetProfile field that triggered it
  double value = 0.0;
  std::string decision;
  Slot slot = Slot::None;  // None: rationale note only, no query
  Query query;
  std::set<std::string> preferred_tags;
};

/// Evaluates the decision table in fixed order; lists every fired rule.
std::vector<FiredRule> rule_reasoner_decision_table(const DatasetProfile& profile, const Thresholds& thresholds = {},
                                                    Task task = Task::Detect);

struct Retrieval {
  Query query;
  std::vector<RankedCandidate> results;
};

struct IterationRecord {
  std::vector<Query> queries;
  std::vector<std::vector<std::pair<std::string, double>>> retrieved;  // per query, in query order
  std::vector<std::string> selected;
  CandidateSet candidate_set;
  std::vector<GapNote> gap_notes;
};

enum class StopReason { GapsClosed, MaxIterations };
std::string_view to_string(StopReason r);

struct ArchitectTrace {
  std::vector<IterationRecord> iterations;
  StopReason stop_reason = StopReason::GapsClosed;
  Generator reasoner_kind = Generator::Rule;
  int max_iterations = 4;
  std::vector<FiredRule> decision_table;
  std::vector<std::string> fallbacks;  // primitive substitutions after the loop
  CandidateSet final_candidates;
  std::int64_t param_budget = 0;
  std::int64_t estimated_params = 0;
  int width_halvings = 0;
  std::optional<double> temperature;  // LLM runs only
  std::string model_id;               // LLM runs only
};

std::string trace_to_json(const ArchitectTrace& trace);

struct AssemblyOptions {
  std::int64_t param_budget = 7'000'000;
  Task task = Task::Detect;
  std::string created_at = "1970-01-01T00:00:00Z";
  Generator generator = Generator::Rule;
  int fusion_levels = 3;  // scale levels the neck fuses and hands to the head
  std::vector<std::string> rationale_notes;
};

/// Channel widths of the assembly template.
struct WidthSchedule {
  int stem = 32;
  std::array<int, 4> stages{64, 128, 256, 512};  // strides 4, 8, 16, 32
  std::array<int, 3> neck{128, 256, 512};        // fused outputs at strides 8, 16, 32
  /// Halves the next width in the order s4, s3, s2, s1, stem, n5, n4, n3
  /// (cyclic), skipping widths already at the minimum. False when every
  /// width is at the minimum.
  bool halve_next(int& cursor);
};
inline constexpr int kMinWidth = 16;

struct AssemblyResult {
  NadlDocument doc;
  WidthSchedule widths;
  int halvings = 0;
  std::int64_t estimated_params = 0;
};

/// Builds the blueprint for a candidate set: stem, four backbone stages,
/// SPPF, a top-down then bottom-up neck over the last `fusion_levels`
/// stages, optional aux blocks and the head. Widths are halved until the
/// estimate fits the budget. An empty backbone or head choice means the
/// default (C2f; Detect, or OBB for the obb task). Throws Error{Assembly}.
AssemblyResult assemble_blueprint_detailed(const DatasetProfile& profile, const CandidateSet& candidates,
                                           const KnowledgeBase& kb, const AssemblyOptions& options = {});
NadlDocument assemble_blueprint(const DatasetProfile& profile, const CandidateSet& candidates, const KnowledgeBase& kb,
                                const AssemblyOptions& options = {});

/// Throws Error{Assembly} when the set breaks the category invariants.
void check_candidate_set(const CandidateSet& candidates, const KnowledgeBase& kb);

struct AgentOptions {
  Thresholds thresholds;
  int max_iterations = 4;
  std::size_t top_k = 5;
  AssemblyOptions assembly;
};

class Reasoner {
 public:
  virtual ~Reasoner() = default;
  virtual Generator kind() const = 0;
  virtual std::vector<Query> propose_queries(const DatasetProfile& profile, const std::vector<GapNote>& open_gaps,
                                             int iteration) = 0;
  virtual CandidateSet select_modules(const DatasetProfile& profile, const std::vector<Retrieval>& retrievals,
                                      const CandidateSet& current) = 0;
  virtual std::vector<GapNote> assess_gaps(const DatasetProfile& profile, const CandidateSet& candidates) = 0;
  virtual NadlDocument assemble_blueprint(const DatasetProfile& profile, const CandidateSet& candidates) = 0;
  /// Budget bookkeeping of the last assemble_blueprint call.
  virtual std::pair<std::int64_t, int> last_assembly_stats() const { return {0, 0}; }
};

/// Deterministic reasoner driven by the decision table.
class RuleReasoner : public Reasoner {
 public:
  RuleReasoner(const KnowledgeBase& kb, AgentOptions options);

  Generator kind() const override { return Generator::Rule; }
  std::vector<Query> propose_queries(const DatasetProfile& profile, const std::vector<GapNote>& open_gaps,
                                     int iteration) override;
  CandidateSet select_modules(const DatasetProfile& profile, const std::vector<Retrieval>& retrievals,
                              const CandidateSet& current) override;
  std::vector<GapNote> assess_gaps(const DatasetProfile& profile, const CandidateSet& candidates) override;
  NadlDocument assemble_blueprint(const DatasetProfile& profile, const CandidateSet& candidates) override;
  std::pair<std::int64_t, int> last_assembly_stats() const override { return last_stats_; }

 private:
  const KnowledgeBase& kb_;
  AgentOptions options_;
  std::pair<std::int64_t, int> last_stats_{0, 0};
};

/// Reasoner backed by a chat-completion model. Gap assessment stays on the
/// decision table so that the stopping test is the same for both kinds.
/// Unusable answers are retried twice with a repair prompt, then
/// Error{ReasonerFailure}.
class LlmReasoner : public Reasoner {
 public:
  LlmReasoner(const KnowledgeBase& kb, AgentOptions options, std::shared_ptr<LlmClient> client, LlmSettings settings);

  Generator kind() const override { return Generator::Llm; }
  std::vector<Query> propose_queries(const DatasetProfile& profile, const std::vector<GapNote>& open_gaps,
                                     int iteration) override;
  CandidateSet select_modules(const DatasetProfile& profile, const std::vector<Retrieval>& retrievals,
                              const CandidateSet& current) override;
  std::vector<GapNote> assess_gaps(const DatasetProfile& profile, const CandidateSet& candidates) override;
  NadlDocument assemble_blueprint(const DatasetProfile& profile, const CandidateSet& candidates) override;
  std::pair<std::int64_t, int> last_assembly_stats() const override { return last_stats_; }

  static constexpr int kMaxRetries = 2;

 private:
  const KnowledgeBase& kb_;
  AgentOptions options_;
  std::shared_ptr<LlmClient> client_;
  LlmSettings settings_;
  RuleReasoner rules_;
  std::pair<std::int64_t, int> last_stats_{0, 0};
};

struct AgentResult {
  NadlDocument doc;
  ArchitectTrace trace;
};

/// propose -> search -> select -> assess until no gap is open or
/// max_iterations is reached, then primitive fallbacks and assembly.
/// Throws Error{NoViableHead}, Error{ReasonerFailure}, Error{Assembly}.
AgentResult run_agent(const DatasetProfile& profile, const KnowledgeBase& kb, Reasoner& reasoner,
                      const AgentOptions& options = {});

/// Helpers shared with the LLM prompts and the CLI.
std::string candidate_set_to_json(const CandidateSet& c);
CandidateSet candidate_set_from_json(const std::string& text);
std::string query_to_json(const Query& q);

}  // namespace nadl
