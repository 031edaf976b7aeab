// SPDX-License-Identifier: Apache-2.0
#include "nadl/architect.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "nadl/error.hpp"
#include "nadl/validator.hpp"

namespace nadl {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string_view to_string(Slot s) {
  switch (s) {
    case Slot::Backbone: return "backbone";
    case Slot::Neck: return "neck";
    case Slot::Head: return "head";
    case Slot::Aux: return "aux";
    case Slot::None: return "none";
  }
  return "none";
}

std::string_view to_string(StopReason r) { return r == StopReason::GapsClosed ? "gaps_closed" : "max_iterations"; }

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Query make_query(std::vector<std::string> terms, std::set<std::string> tags, std::optional<Category> category,
                 std::string purpose) {
  Query q;
  q.text_terms = std::move(terms);
  q.required_tags = std::move(tags);
  q.category_filter = category;
  q.purpose = std::move(purpose);
  return q;
}

FiredRule make_rule(std::string id, std::string feature, double value, std::string decision, Slot slot,
                    std::string need, std::vector<std::string> terms, std::optional<Category> category) {
  FiredRule r;
  r.rule = std::move(id);
  r.feature = std::move(feature);
  r.value = value;
  r.decision = std::move(decision);
  r.slot = slot;
  if (slot != Slot::None) {
    r.preferred_tags = {need};
    r.query = make_query(std::move(terms), {need}, category, r.rule + "/" + std::string(to_string(slot)));
  }
  return r;
}

/// Slot encoded in a query purpose of the form "<rule>/<slot>[/...]".
Slot slot_of(const Query& q) {
  const auto first = q.purpose.find('/');
  std::string s = first == std::string::npos ? q.purpose : q.purpose.substr(first + 1);
  if (auto second = s.find('/'); second != std::string::npos) s.resize(second);
  if (s == "backbone") return Slot::Backbone;
  if (s == "neck") return Slot::Neck;
  if (s == "head") return Slot::Head;
  if (s == "aux") return Slot::Aux;
  return Slot::None;
}

std::string rule_of(const Query& q) { return q.purpose.substr(0, q.purpose.find('/')); }

const ModuleRecord& require_record(const KnowledgeBase& kb, const std::string& id, const char* what) {
  const auto* r = kb.find(id);
  if (!r) fail(ErrorCode::Assembly, std::string(what) + " '" + id + "' is not in the knowledge base");
  return *r;
}

bool is_stage_block(const ModuleRecord& r) {
  return !r.arity.variadic && r.arity.count == 1 && r.channel_rule.kind == ChannelRule::Kind::FixedOut &&
         r.stride.kind == StrideRule::Kind::Fixed && r.stride.value == 1;
}

bool is_aux_block(const ModuleRecord& r) {
  return r.category == Category::Neck && !r.arity.variadic && r.arity.count == 1 &&
         r.channel_rule.kind == ChannelRule::Kind::SameAsInput && r.stride.kind == StrideRule::Kind::Fixed &&
         r.stride.value == 1;
}

bool head_fits_task(const ModuleRecord& r, Task task) {
  return task == Task::Obb ? r.has_tag("oriented-boxes") : !r.has_tag("oriented-boxes");
}

bool slot_accepts(const ModuleRecord& r, Slot slot, Task task, int fusion_levels) {
  switch (slot) {
    case Slot::Backbone: return r.category == Category::Backbone && is_stage_block(r);
    case Slot::Neck: return r.category == Category::Neck && is_stage_block(r);
    case Slot::Aux: return is_aux_block(r);
    case Slot::Head:
      return r.category == Category::Head && head_fits_task(r, task) &&
             r.arity.accepts(static_cast<std::size_t>(fusion_levels));
    case Slot::None: return false;
  }
  return false;
}

std::string default_head(Task task) { return task == Task::Obb ? "OBB" : "Detect"; }

}  // namespace

// ---- decision table ----

std::vector<FiredRule> rule_reasoner_decision_table(const DatasetProfile& p, const Thresholds& t, Task task) {
  std::vector<FiredRule> rules;
  if (p.sparse_scene_fraction > t.sparse_scene_fraction) {
    rules.push_back(make_rule("P1", "sparse_scene_fraction", p.sparse_scene_fraction,
                              "sparse scenes: add a transformer encoder in the head path to suppress background",
                              Slot::Aux, "background-suppression", {"transformer encoder", "background", "global"},
                              Category::Neck));
  }
  if (p.scale_variation_ratio > t.scale_variation_ratio) {
    rules.push_back(make_rule("P2", "scale_variation_ratio", p.scale_variation_ratio,
                              "extreme scale variation: cross-attention decoder that fuses all scales", Slot::Head,
                              "multi-scale-fusion", {"cross-attention", "decoder", "scale"}, Category::Head));
  }
  if (p.mean_edge_density) {
    const double e = *p.mean_edge_density;
    if (e < t.moderate_texture_edge_density) {
      const char* level = e < t.low_texture_edge_density ? "low" : "moderate";
      rules.push_back(make_rule("P3", "mean_edge_density", e,
                                std::string(level) +
                                    " texture complexity: keep a lightweight backbone, spend the budget on the head",
                                Slot::Backbone, "lightweight", {"lightweight", "efficient", "low parameter"},
                                Category::Backbone));
    } else {
      rules.push_back(make_rule("P3H", "mean_edge_density", e,
                                "high texture complexity: backbone with global context", Slot::Backbone,
                                "global-context", {"global context", "texture"}, Category::Backbone));
    }
  }
  if (p.small_fraction > t.small_fraction) {
    rules.push_back(make_rule("P4", "small_fraction", p.small_fraction,
                              "small-object heavy: high-resolution multi-scale fusion neck", Slot::Neck, "small-object",
                              {"small object", "high-resolution", "fusion"}, Category::Neck));
  }
  if (p.objects_per_image_max > t.dense_objects_per_image) {
    rules.push_back(make_rule("P5", "objects_per_image_max", static_cast<double>(p.objects_per_image_max),
                              "dense scenes: head suited to crowded images", Slot::Head, "dense-scene", {"dense"},
                              Category::Head));
  }
  if (p.imbalance_ratio > t.imbalance_ratio) {
    rules.push_back(make_rule("P6", "imbalance_ratio", p.imbalance_ratio,
                              "class imbalance: address in the training loss; architecture unchanged", Slot::None, "",
                              {}, std::nullopt));
  }
  if (task == Task::Obb) {
    rules.push_back(make_rule("OBB-TASK", "num_boxes", static_cast<double>(p.num_boxes),
                              "oriented-box task: head with an angle branch", Slot::Head, "oriented-boxes",
                              {"oriented", "rotation"}, Category::Head));
  }
  return rules;
}

// ---- assembly ----

bool WidthSchedule::halve_next(int& cursor) {
  int* order[] = {&stages[3], &stages[2], &stages[1], &stages[0], &stem, &neck[2], &neck[1], &neck[0]};
  constexpr int n = 8;
  for (int tried = 0; tried < n; ++tried) {
    int* w = order[cursor % n];
    cursor = (cursor + 1) % n;
    if (*w > kMinWidth) {
      *w = std::max(kMinWidth, *w / 2);
      return true;
    }
  }
  return false;
}

void check_candidate_set(const CandidateSet& c, const KnowledgeBase& kb) {
  if (!c.backbone_choice.empty() &&
      require_record(kb, c.backbone_choice, "backbone").category != Category::Backbone) {
    fail(ErrorCode::Assembly, "backbone choice '" + c.backbone_choice + "' is not a Backbone module");
  }
  if (!c.head_choice.empty() && require_record(kb, c.head_choice, "head").category != Category::Head) {
    fail(ErrorCode::Assembly, "head choice '" + c.head_choice + "' is not a Head module");
  }
  for (const auto& id : c.neck_choices) {
    const auto& r = require_record(kb, id, "neck");
    if (r.category != Category::Neck && !r.primitive) {
      fail(ErrorCode::Assembly, "neck choice '" + id + "' is neither a Neck module nor a structural primitive");
    }
  }
  for (const auto& id : c.auxiliary) {
    if (require_record(kb, id, "auxiliary").category != Category::Neck) {
      fail(ErrorCode::Assembly, "auxiliary choice '" + id + "' is not a Neck module");
    }
  }
}

namespace {

struct ArgValues {
  std::int64_t c_out = 0;
  std::int64_t k = 3;
  std::int64_t s = 1;
  std::int64_t nc = 1;
};

std::vector<Scalar> fill_args(const ModuleRecord& r, const ArgValues& v) {
  std::vector<Scalar> out;
  for (const auto& a : r.arg_template) {
    if (const auto* s = std::get_if<std::string>(&a)) {
      if (*s == "$c_out") {
        out.emplace_back(v.c_out);
        continue;
      }
      if (*s == "$k") {
        out.emplace_back(v.k);
        continue;
      }
      if (*s == "$s") {
        out.emplace_back(v.s);
        continue;
      }
      if (*s == "$nc") {
        out.emplace_back(v.nc);
        continue;
      }
    }
    out.push_back(a);
  }
  return out;
}

struct Builder {
  NadlDocument doc;
  int add(std::vector<LayerRef> from, int repeats, const ModuleRecord& r, std::vector<Scalar> args, Role role) {
    LayerSpec l;
    l.index = static_cast<int>(doc.layers.size());
    l.from = std::move(from);
    l.repeats = repeats;
    l.module_kind = r.id;
    l.args = std::move(args);
    l.role = role;
    doc.layers.push_back(std::move(l));
    return static_cast<int>(doc.layers.size()) - 1;
  }
};

struct Parts {
  const ModuleRecord* conv;
  const ModuleRecord* upsample;
  const ModuleRecord* concat;
  const ModuleRecord* sppf;
  const ModuleRecord* backbone;
  const ModuleRecord* neck_td;
  const ModuleRecord* neck_bu;
  std::vector<const ModuleRecord*> aux;
  const ModuleRecord* head;
};

constexpr std::array<int, 4> kStageRepeats{1, 2, 2, 1};

NadlDocument build(const Parts& parts, const WidthSchedule& w, const DatasetProfile& profile,
                   const AssemblyOptions& options) {
  Builder b;
  b.doc.task = options.task;
  b.doc.input_spec.num_classes = static_cast<int>(std::max<std::int64_t>(1, profile.num_classes));
  b.doc.metadata.dataset_id = profile.dataset_id;
  b.doc.metadata.generator = options.generator;
  b.doc.metadata.created_at = options.created_at;
  b.doc.metadata.rationale_notes = options.rationale_notes;
  const std::int64_t nc = b.doc.input_spec.num_classes;

  auto conv = [&](int width, int stride, LayerRef from, Role role) {
    return b.add({from}, 1, *parts.conv, fill_args(*parts.conv, {width, 3, stride, nc}), role);
  };
  auto block = [&](const ModuleRecord& r, int width, int repeats, Role role) {
    return b.add({kPrevious}, repeats, r, fill_args(r, {width, 3, 1, nc}), role);
  };

  conv(w.stem, 2, kNetworkInput, Role::Backbone);
  std::array<int, 4> stage_out{};
  for (int s = 0; s < 4; ++s) {
    conv(w.stages[s], 2, kPrevious, Role::Backbone);
    stage_out[s] = block(*parts.backbone, w.stages[s], kStageRepeats[s], Role::Backbone);
  }
  stage_out[3] = b.add({kPrevious}, 1, *parts.sppf, fill_args(*parts.sppf, {w.stages[3], 5, 1, nc}), Role::Backbone);

  // Levels 1..3 are strides 8/16/32; the neck fuses the top `fusion_levels`.
  const int top = 3;
  const int low = top - options.fusion_levels + 1;
  std::array<int, 4> td{};
  td[top] = stage_out[top];
  int cur = td[top];
  for (int lvl = top - 1; lvl >= low; --lvl) {
    const int up = b.add({cur}, 1, *parts.upsample, fill_args(*parts.upsample, {0, 3, 1, nc}), Role::Neck);
    b.add({up, stage_out[lvl]}, 1, *parts.concat, fill_args(*parts.concat, {0, 3, 1, nc}), Role::Neck);
    cur = block(*parts.neck_td, w.neck[lvl - 1], 1, Role::Neck);
    td[lvl] = cur;
  }
  std::array<int, 4> out{};
  out[low] = td[low];
  for (int lvl = low + 1; lvl <= top; ++lvl) {
    conv(w.neck[lvl - 2], 2, out[lvl - 1], Role::Neck);
    b.add({kPrevious, td[lvl]}, 1, *parts.concat, fill_args(*parts.concat, {0, 3, 1, nc}), Role::Neck);
    out[lvl] = block(*parts.neck_bu, w.neck[lvl - 1], 1, Role::Neck);
  }
  int deepest = out[top];
  for (const auto* aux : parts.aux) {
    deepest = b.add({deepest}, 1, *aux, fill_args(*aux, {0, 3, 1, nc}), Role::Head);
  }
  std::vector<LayerRef> head_in;
  for (int lvl = low; lvl < top; ++lvl) head_in.push_back(out[lvl]);
  head_in.push_back(deepest);
  b.add(head_in, 1, *parts.head, fill_args(*parts.head, {nc, 3, 1, nc}), Role::Head);

  // Relative form wherever a layer reads its predecessor.
  for (auto& l : b.doc.layers) {
    for (auto& r : l.from) {
      if (r == l.index - 1) r = kPrevious;
    }
  }
  return b.doc;
}

}  // namespace

AssemblyResult assemble_blueprint_detailed(const DatasetProfile& profile, const CandidateSet& candidates,
                                           const KnowledgeBase& kb, const AssemblyOptions& options) {
  check_candidate_set(candidates, kb);
  if (options.fusion_levels < 2 || options.fusion_levels > 3) {
    fail(ErrorCode::Assembly, "fusion_levels must be 2 or 3");
  }
  if (options.param_budget < 1) fail(ErrorCode::Assembly, "parameter budget must be positive");

  Parts parts{};
  parts.conv = &require_record(kb, "Conv", "structural primitive");
  parts.upsample = &require_record(kb, "Upsample", "structural primitive");
  parts.concat = &require_record(kb, "Concat", "structural primitive");
  parts.sppf = &require_record(kb, "SPPF", "structural primitive");

  parts.backbone = &require_record(kb, candidates.backbone_choice.empty() ? "C2f" : candidates.backbone_choice,
                                   "backbone");
  if (!is_stage_block(*parts.backbone)) {
    fail(ErrorCode::Assembly, "backbone '" + parts.backbone->id +
                                  "' cannot form a stage: needs one input, an explicit output width and stride 1");
  }
  parts.neck_td = parts.neck_bu = parts.backbone;
  if (!candidates.neck_choices.empty()) {
    parts.neck_td = &require_record(kb, candidates.neck_choices[0], "neck");
    parts.neck_bu = candidates.neck_choices.size() > 1 ? &require_record(kb, candidates.neck_choices[1], "neck")
                                                       : parts.neck_td;
    if (candidates.neck_choices.size() > 2) {
      fail(ErrorCode::Assembly, "at most two neck blocks fit the fusion template (top-down and bottom-up)");
    }
    for (const auto* n : {parts.neck_td, parts.neck_bu}) {
      if (!is_stage_block(*n)) {
        fail(ErrorCode::Assembly,
             "neck '" + n->id + "' cannot serve as a fusion block: needs one input, an explicit output width and "
             "stride 1");
      }
    }
  }
  for (const auto& id : candidates.auxiliary) {
    const auto* r = &require_record(kb, id, "auxiliary");
    if (!is_aux_block(*r)) {
      fail(ErrorCode::Assembly, "auxiliary '" + id + "' must take one input and preserve width and stride");
    }
    parts.aux.push_back(r);
  }
  parts.head = &require_record(kb, candidates.head_choice.empty() ? default_head(options.task) : candidates.head_choice,
                               "head");
  if (!parts.head->arity.accepts(static_cast<std::size_t>(options.fusion_levels))) {
    fail(ErrorCode::Assembly, "head '" + parts.head->id + "' takes " + parts.head->arity.describe() +
                                  " inputs but the neck produces " + std::to_string(options.fusion_levels) +
                                  " scale outputs");
  }
  if (!head_fits_task(*parts.head, options.task)) {
    fail(ErrorCode::Assembly, "head '" + parts.head->id + "' does not match task '" +
                                  std::string(to_string(options.task)) + "'");
  }

  AssemblyResult result;
  int cursor = 0;
  while (true) {
    result.doc = build(parts, result.widths, profile, options);
    const auto report = validate(result.doc, kb);
    if (!report.ok()) {
      const auto& e = report.errors.front();
      fail(ErrorCode::Assembly, "assembled blueprint fails validation: " + std::string(to_string(e.kind)) + ": " +
                                    e.message);
    }
    result.estimated_params = report.total_params;
    if (report.total_params <= options.param_budget) break;
    if (!result.widths.halve_next(cursor)) {
      fail(ErrorCode::Assembly, "parameter budget " + std::to_string(options.param_budget) +
                                    " is unattainable: " + std::to_string(report.total_params) +
                                    " parameters at minimum widths");
    }
    ++result.halvings;
  }
  char note[160];
  std::snprintf(note, sizeof note, "budget: %lld estimated parameters within %lld after %d width halvings",
                static_cast<long long>(result.estimated_params), static_cast<long long>(options.param_budget),
                result.halvings);
  result.doc.metadata.rationale_notes.emplace_back(note);
  for (const auto& [id, why] : candidates.rationale) {
    result.doc.metadata.rationale_notes.push_back(id + ": " + why);
  }
  return result;
}

NadlDocument assemble_blueprint(const DatasetProfile& profile, const CandidateSet& candidates, const KnowledgeBase& kb,
                                const AssemblyOptions& options) {
  return assemble_blueprint_detailed(profile, candidates, kb, options).doc;
}

// ---- rule reasoner ----

RuleReasoner::RuleReasoner(const KnowledgeBase& kb, AgentOptions options) : kb_(kb), options_(std::move(options)) {}

std::vector<Query> RuleReasoner::propose_queries(const DatasetProfile& profile, const std::vector<GapNote>& open_gaps,
                                                 int iteration) {
  const auto table = rule_reasoner_decision_table(profile, options_.thresholds, options_.assembly.task);
  std::vector<Query> queries;
  if (iteration <= 1) {
    bool backbone_rule = false;
    for (const auto& r : table) {
      if (r.slot == Slot::None) continue;
      backbone_rule = backbone_rule || r.slot == Slot::Backbone;
      queries.push_back(r.query);
    }
    if (!backbone_rule) {
      queries.push_back(make_query({"standard"}, {"standard"}, Category::Backbone, "base/backbone"));
    }
    return queries;
  }
  // Later iterations relax the open gaps: no category filter.
  for (const auto& gap : open_gaps) {
    for (const auto& r : table) {
      if (r.rule != gap.rule) continue;
      queries.push_back(make_query(r.query.text_terms, r.query.required_tags, std::nullopt,
                                   r.rule + "/" + std::string(to_string(r.slot)) + "/relaxed"));
    }
  }
  return queries;
}

CandidateSet RuleReasoner::select_modules(const DatasetProfile& profile, const std::vector<Retrieval>& retrievals,
                                          const CandidateSet& current) {
  const auto table = rule_reasoner_decision_table(profile, options_.thresholds, options_.assembly.task);
  auto decision_of = [&](const std::string& rule) -> std::string {
    for (const auto& r : table) {
      if (r.rule == rule) return r.rule + ": " + r.decision;
    }
    return "default standard stage block";
  };
  CandidateSet out = current;
  for (Slot slot : {Slot::Backbone, Slot::Neck, Slot::Aux, Slot::Head}) {
    // Aggregate scores of compatible candidates over every query of this slot.
    std::map<std::string, double> score;
    std::map<std::string, std::string> why;
    for (const auto& rt : retrievals) {
      if (slot_of(rt.query) != slot) continue;
      for (const auto& c : rt.results) {
        if (!slot_accepts(*c.record, slot, options_.assembly.task, options_.assembly.fusion_levels)) continue;
        if (c.matched_tags.empty()) continue;
        score[c.record->id] += c.score;
        auto& w = why[c.record->id];
        w += (w.empty() ? "" : "; ") + decision_of(rule_of(rt.query));
      }
    }
    if (score.empty()) continue;
    auto best = score.begin();
    for (auto it = score.begin(); it != score.end(); ++it) {
      if (it->second > best->second) best = it;  // map order breaks ties by ascending id
    }
    const std::string& id = best->first;
    switch (slot) {
      case Slot::Backbone: out.backbone_choice = id; break;
      case Slot::Head: out.head_choice = id; break;
      case Slot::Neck:
        if (std::find(out.neck_choices.begin(), out.neck_choices.end(), id) == out.neck_choices.end()) {
          out.neck_choices.push_back(id);
        }
        break;
      case Slot::Aux:
        if (std::find(out.auxiliary.begin(), out.auxiliary.end(), id) == out.auxiliary.end()) {
          out.auxiliary.push_back(id);
        }
        break;
      case Slot::None: break;
    }
    out.rationale[id] = why[id] + " (score " + fmt(best->second) + ")";
  }
  return out;
}

std::vector<GapNote> RuleReasoner::assess_gaps(const DatasetProfile& profile, const CandidateSet& c) {
  const auto table = rule_reasoner_decision_table(profile, options_.thresholds, options_.assembly.task);
  std::vector<GapNote> notes;
  auto with_tag = [&](const std::vector<std::string>& ids, const std::string& tag) -> std::optional<std::string> {
    for (const auto& id : ids) {
      const auto* r = kb_.find(id);
      if (r && r->has_tag(tag)) return id;
    }
    return std::nullopt;
  };
  for (const auto& r : table) {
    if (r.slot == Slot::None) continue;
    GapNote g;
    g.feature = r.feature;
    g.need = *r.preferred_tags.begin();
    g.rule = r.rule;
    g.slot = r.slot;
    switch (r.slot) {
      case Slot::Backbone:
        if (!c.backbone_choice.empty()) g.satisfied_by = with_tag({c.backbone_choice}, g.need);
        break;
      case Slot::Head:
        if (!c.head_choice.empty()) g.satisfied_by = with_tag({c.head_choice}, g.need);
        break;
      case Slot::Neck: g.satisfied_by = with_tag(c.neck_choices, g.need); break;
      case Slot::Aux: g.satisfied_by = with_tag(c.auxiliary, g.need); break;
      case Slot::None: break;
    }
    notes.push_back(std::move(g));
  }
  return notes;
}

NadlDocument RuleReasoner::assemble_blueprint(const DatasetProfile& profile, const CandidateSet& candidates) {
  auto opts = options_.assembly;
  for (const auto& r : rule_reasoner_decision_table(profile, options_.thresholds, opts.task)) {
    opts.rationale_notes.push_back(r.rule + " (" + r.feature + " = " + fmt(r.value) + "): " + r.decision);
  }
  auto result = assemble_blueprint_detailed(profile, candidates, kb_, opts);
  last_stats_ = {result.estimated_params, result.halvings};
  return result.doc;
}

// ---- agent loop ----

AgentResult run_agent(const DatasetProfile& profile, const KnowledgeBase& kb, Reasoner& reasoner,
                      const AgentOptions& options) {
  if (options.max_iterations < 1) fail(ErrorCode::InvalidArgument, "max_iterations must be >= 1");
  if (options.top_k < 1) fail(ErrorCode::InvalidArgument, "top_k must be >= 1");

  AgentResult result;
  auto& trace = result.trace;
  trace.reasoner_kind = reasoner.kind();
  trace.max_iterations = options.max_iterations;
  trace.decision_table = rule_reasoner_decision_table(profile, options.thresholds, options.assembly.task);
  trace.param_budget = options.assembly.param_budget;

  CandidateSet current;
  std::vector<GapNote> open;
  trace.stop_reason = StopReason::MaxIterations;
  for (int it = 1; it <= options.max_iterations; ++it) {
    IterationRecord rec;
    rec.queries = reasoner.propose_queries(profile, open, it);
    // Later iterations widen the net.
    const std::size_t k = std::min<std::size_t>(kb.size() + 1, options.top_k << std::min(it - 1, 8));
    std::vector<Retrieval> retrievals;
    for (const auto& q : rec.queries) {
      Retrieval r{q, kb.search(q, k)};
      std::vector<std::pair<std::string, double>> ids;
      for (const auto& c : r.results) ids.emplace_back(c.record->id, c.score);
      rec.retrieved.push_back(std::move(ids));
      retrievals.push_back(std::move(r));
    }
    current = reasoner.select_modules(profile, retrievals, current);
    rec.candidate_set = current;
    if (!current.backbone_choice.empty()) rec.selected.push_back(current.backbone_choice);
    for (const auto& id : current.neck_choices) rec.selected.push_back(id);
    for (const auto& id : current.auxiliary) rec.selected.push_back(id);
    if (!current.head_choice.empty()) rec.selected.push_back(current.head_choice);
    rec.gap_notes = reasoner.assess_gaps(profile, current);
    open.clear();
    for (const auto& g : rec.gap_notes) {
      if (!g.satisfied_by) open.push_back(g);
    }
    trace.iterations.push_back(std::move(rec));
    if (open.empty()) {
      trace.stop_reason = StopReason::GapsClosed;
      break;
    }
  }

  // Primitive fallbacks for whatever the loop left open.
  const Task task = options.assembly.task;
  for (const auto& g : open) {
    if (g.slot != Slot::Aux) continue;
    const auto* prim = kb.find("TransformerEncoderBlock");
    if (prim && prim->has_tag(g.need) && is_aux_block(*prim) &&
        std::find(current.auxiliary.begin(), current.auxiliary.end(), prim->id) == current.auxiliary.end()) {
      current.auxiliary.push_back(prim->id);
      current.rationale[prim->id] = g.rule + ": primitive fallback for unmet need '" + g.need + "'";
      trace.fallbacks.push_back("aux: " + prim->id + " for " + g.need);
    }
  }
  if (current.head_choice.empty()) {
    const auto* head = kb.find(default_head(task));
    const bool usable = head && head->category == Category::Head && head_fits_task(*head, task) &&
                        head->arity.accepts(static_cast<std::size_t>(options.assembly.fusion_levels));
    if (!usable) {
      fail(ErrorCode::NoViableHead, "no Head-category module for task '" + std::string(to_string(task)) +
                                        "' was retrieved and the knowledge base has no usable default head");
    }
    current.head_choice = head->id;
    trace.fallbacks.push_back("head: " + head->id + " (default)");
  }
  if (current.backbone_choice.empty()) {
    if (!kb.find("C2f")) fail(ErrorCode::Assembly, "no backbone was selected and the default C2f is missing");
    current.backbone_choice = "C2f";
    trace.fallbacks.push_back("backbone: C2f (default)");
  }
  trace.final_candidates = current;

  result.doc = reasoner.assemble_blueprint(profile, current);
  const auto report = validate(result.doc, kb);
  if (!report.ok()) {
    const auto& e = report.errors.front();
    fail(ErrorCode::Assembly, "synthesized blueprint fails validation: " + std::string(to_string(e.kind)) + ": " +
                                  e.message);
  }
  trace.estimated_params = report.total_params;
  trace.width_halvings = reasoner.last_assembly_stats().second;
  return result;
}

// ---- serialization ----

namespace {

ojson query_json(const Query& q) {
  return ojson{{"text_terms", q.text_terms},
               {"required_tags", q.required_tags},
               {"category_filter", q.category_filter ? ojson(std::string(to_string(*q.category_filter))) : ojson()},
               {"purpose", q.purpose}};
}

ojson candidates_json(const CandidateSet& c) {
  ojson rationale = ojson::object();
  for (const auto& [k, v] : c.rationale) rationale[k] = v;
  return ojson{{"backbone_choice", c.backbone_choice},
               {"neck_choices", c.neck_choices},
               {"head_choice", c.head_choice},
               {"auxiliary", c.auxiliary},
               {"rationale", rationale}};
}

}  // namespace

std::string query_to_json(const Query& q) { return query_json(q).dump(); }

std::string candidate_set_to_json(const CandidateSet& c) { return candidates_json(c).dump(2); }

CandidateSet candidate_set_from_json(const std::string& text) {
  json v;
  try {
    v = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Syntax, std::string("candidate set: ") + e.what());
  }
  // Reuses the response schema so both paths agree on the shape.
  CandidateSet c;
  try {
    c.backbone_choice = v.at("backbone_choice").get<std::string>();
    c.neck_choices = v.at("neck_choices").get<std::vector<std::string>>();
    c.head_choice = v.at("head_choice").get<std::string>();
    c.auxiliary = v.at("auxiliary").get<std::vector<std::string>>();
    c.rationale = v.at("rationale").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Schema, std::string("candidate set: ") + e.what());
  }
  return c;
}

std::string trace_to_json(const ArchitectTrace& t) {
  ojson out;
  out["reasoner_kind"] = std::string(to_string(t.reasoner_kind));
  if (t.reasoner_kind == Generator::Llm) {
    out["llm"] = ojson{{"model_id", t.model_id}, {"temperature", t.temperature.value_or(0.0)}};
  }
  out["stop_reason"] = std::string(to_string(t.stop_reason));
  out["max_iterations"] = t.max_iterations;
  ojson table = ojson::array();
  for (const auto& r : t.decision_table) {
    ojson row{{"rule", r.rule},
              {"feature", r.feature},
              {"value", r.value},
              {"decision", r.decision},
              {"slot", std::string(to_string(r.slot))},
              {"preferred_tags", r.preferred_tags}};
    row["query"] = r.slot == Slot::None ? ojson() : query_json(r.query);
    table.push_back(row);
  }
  out["decision_table"] = table;
  ojson iterations = ojson::array();
  for (std::size_t i = 0; i < t.iterations.size(); ++i) {
    const auto& it = t.iterations[i];
    ojson rec;
    rec["iteration"] = i + 1;
    rec["queries"] = ojson::array();
    for (const auto& q : it.queries) rec["queries"].push_back(query_json(q));
    rec["retrieved"] = ojson::array();
    for (const auto& list : it.retrieved) {
      ojson l = ojson::array();
      for (const auto& [id, score] : list) l.push_back(ojson{{"id", id}, {"score", score}});
      rec["retrieved"].push_back(l);
    }
    rec["selected"] = it.selected;
    rec["candidate_set"] = candidates_json(it.candidate_set);
    rec["gap_notes"] = ojson::array();
    for (const auto& g : it.gap_notes) {
      rec["gap_notes"].push_back(ojson{{"feature", g.feature},
                                       {"need", g.need},
                                       {"satisfied_by", g.satisfied_by ? ojson(*g.satisfied_by) : ojson()},
                                       {"rule", g.rule},
                                       {"slot", std::string(to_string(g.slot))}});
    }
    iterations.push_back(rec);
  }
  out["iterations"] = iterations;
  out["fallbacks"] = t.fallbacks;
  out["final_candidates"] = candidates_json(t.final_candidates);
  out["budget"] = ojson{{"param_budget", t.param_budget},
                        {"estimated_params", t.estimated_params},
                        {"width_halvings", t.width_halvings}};
  return out.dump(2) + "\n";
}

}  // namespace nadl
