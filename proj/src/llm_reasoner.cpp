// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "nadl/architect.hpp"
#include "nadl/error.hpp"
#include "nadl/llm_client.hpp"
#include "nadl/prompts.hpp"
#include "nadl/validator.hpp"

namespace nadl {

using json = nlohmann::json;

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += "- " + l + "\n";
  return out.empty() ? "(none)\n" : out;
}

std::string gaps_text(const std::vector<GapNote>& gaps) {
  std::vector<std::string> lines;
  for (const auto& g : gaps) {
    lines.push_back(g.rule + ": " + g.feature + " needs a " + std::string(to_string(g.slot)) + " module tagged '" +
                    g.need + "'");
  }
  return join_lines(lines);
}

std::string signature_text(const ModuleRecord& r) {
  std::ostringstream out;
  out << r.id << " [" << to_string(r.category) << "] arity " << r.arity.describe() << ", channels ";
  switch (r.channel_rule.kind) {
    case ChannelRule::Kind::FixedOut: out << "args[" << r.channel_rule.arg_index << "]"; break;
    case ChannelRule::Kind::SameAsInput: out << "same as input"; break;
    case ChannelRule::Kind::SumOfInputs: out << "sum of inputs"; break;
    case ChannelRule::Kind::MaxOfInputs: out << "max of inputs"; break;
  }
  out << ", stride ";
  switch (r.stride.kind) {
    case StrideRule::Kind::Fixed: out << "x" << r.stride.value; break;
    case StrideRule::Kind::FromArg: out << "x args[" << r.stride.arg_index << "]"; break;
    case StrideRule::Kind::InverseArg: out << "/ args[" << r.stride.arg_index << "]"; break;
  }
  out << ", args template [";
  for (std::size_t i = 0; i < r.arg_template.size(); ++i) out << (i ? ", " : "") << scalar_to_string(r.arg_template[i]);
  out << "]";
  return out.str();
}

}  // namespace

LlmReasoner::LlmReasoner(const KnowledgeBase& kb, AgentOptions options, std::shared_ptr<LlmClient> client,
                         LlmSettings settings)
    : kb_(kb),
      options_(options),
      client_(std::move(client)),
      settings_(std::move(settings)),
      rules_(kb, std::move(options)) {
  if (!client_) fail(ErrorCode::InvalidArgument, "LlmReasoner needs a client");
}

namespace {

/// Asks for a structured answer; semantic problems found by `check` trigger
/// a repair prompt. Up to `retries` repairs, then ReasonerFailure.
json ask(LlmClient& client, ChatRequest request, int retries,
         const std::function<std::vector<std::string>(const json&)>& check) {
  const std::string original = request.user_text;
  std::string last;
  for (int attempt = 0; attempt <= retries; ++attempt) {
    std::vector<std::string> problems;
    std::string raw;
    try {
      auto resp = client.complete_structured(request);
      raw = resp.raw_text;
      problems = check(resp.value);
      if (problems.empty()) return resp.value;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SchemaViolation) throw;
      problems = {e.what()};
    }
    last = problems.front();
    request.user_text = render_prompt("repair", {{"schema_id", request.response_schema_id},
                                                 {"diagnostics", join_lines(problems)},
                                                 {"previous_response", raw.empty() ? "(unparseable)" : raw},
                                                 {"original_request", original}});
  }
  fail(ErrorCode::ReasonerFailure, "reasoner returned unusable '" + request.response_schema_id + "' output after " +
                                       std::to_string(retries) + " retries: " + last);
}

ChatRequest base_request(const LlmSettings& s, std::string schema, std::string user_text) {
  ChatRequest r;
  r.model_id = s.model_id;
  r.system_text = std::string(prompt_template("system"));
  r.user_text = std::move(user_text);
  r.response_schema_id = std::move(schema);
  r.temperature = s.temperature;
  r.max_output_tokens = s.max_output_tokens;
  return r;
}

}  // namespace

std::vector<Query> LlmReasoner::propose_queries(const DatasetProfile& profile, const std::vector<GapNote>& open_gaps,
                                                int iteration) {
  std::string vocab;
  for (const auto& t : tag_vocabulary()) vocab += (vocab.empty() ? "" : ", ") + t;
  auto request = base_request(settings_, "query-list",
                              render_prompt("propose_queries", {{"iteration", std::to_string(iteration)},
                                                                {"profile_report", profile_to_markdown(profile)},
                                                                {"gap_notes", gaps_text(open_gaps)},
                                                                {"tag_vocabulary", vocab}}));
  std::vector<Query> queries;
  ask(*client_, request, kMaxRetries, [&](const json& v) {
    std::vector<std::string> problems;
    queries.clear();
    for (const auto& q : v.at("queries")) {
      Query out;
      out.text_terms = q.value("text_terms", std::vector<std::string>{});
      for (const auto& tag : q.value("required_tags", std::vector<std::string>{})) {
        if (!tag_vocabulary().count(tag)) problems.push_back("unknown tag '" + tag + "'");
        out.required_tags.insert(tag);
      }
      if (q.contains("category_filter") && q.at("category_filter").is_string()) {
        out.category_filter = category_from_string(q.at("category_filter").get<std::string>());
      }
      const auto slot = q.value("purpose", std::string("none"));
      if (slot != "backbone" && slot != "neck" && slot != "head" && slot != "aux") {
        problems.push_back("purpose must be one of backbone, neck, head, aux (got '" + slot + "')");
      }
      out.purpose = "llm/" + slot;
      queries.push_back(std::move(out));
    }
    return problems;
  });
  return queries;
}

CandidateSet LlmReasoner::select_modules(const DatasetProfile& profile, const std::vector<Retrieval>& retrievals,
                                         const CandidateSet& current) {
  std::ostringstream list;
  std::set<std::string> offered;
  for (std::size_t i = 0; i < retrievals.size(); ++i) {
    list << "query " << (i + 1) << " (" << retrievals[i].query.purpose << "):\n";
    for (const auto& c : retrievals[i].results) {
      offered.insert(c.record->id);
      list << "  " << c.record->id << " [" << to_string(c.record->category) << "] score " << c.score << " tags";
      for (const auto& t : c.record->tags) list << " " << t;
      list << "\n";
    }
  }
  for (const auto& id : {current.backbone_choice, current.head_choice}) {
    if (!id.empty()) offered.insert(id);
  }
  for (const auto& id : current.neck_choices) offered.insert(id);
  for (const auto& id : current.auxiliary) offered.insert(id);

  auto request = base_request(
      settings_, "candidate-set",
      render_prompt("select_modules", {{"profile_report", profile_to_markdown(profile)},
                                       {"gap_notes", gaps_text(assess_gaps(profile, current))},
                                       {"current_selection", candidate_set_to_json(current)},
                                       {"candidate_list", list.str()}}));
  CandidateSet out;
  const Task task = options_.assembly.task;
  ask(*client_, request, kMaxRetries, [&](const json& v) {
    std::vector<std::string> problems;
    out = candidate_set_from_json(v.dump());
    if (out.backbone_choice.empty()) out.backbone_choice = current.backbone_choice;
    if (out.head_choice.empty()) out.head_choice = current.head_choice;
    auto known = [&](const std::string& id, Category cat, const char* what) {
      if (id.empty()) return;
      const auto* r = kb_.find(id);
      if (!r || !offered.count(id)) {
        problems.push_back(std::string(what) + " '" + id + "' was not among the retrieved candidates");
      } else if (r->category != cat) {
        problems.push_back(std::string(what) + " '" + id + "' has category " + std::string(to_string(r->category)));
      }
    };
    known(out.backbone_choice, Category::Backbone, "backbone_choice");
    known(out.head_choice, Category::Head, "head_choice");
    for (const auto& id : out.neck_choices) known(id, Category::Neck, "neck choice");
    for (const auto& id : out.auxiliary) known(id, Category::Neck, "auxiliary");
    if (const auto* h = kb_.find(out.head_choice)) {
      const bool oriented = h->has_tag("oriented-boxes");
      if (oriented != (task == Task::Obb)) {
        problems.push_back("head_choice '" + out.head_choice + "' does not fit task '" +
                           std::string(to_string(task)) + "'");
      }
    }
    return problems;
  });
  return out;
}

std::vector<GapNote> LlmReasoner::assess_gaps(const DatasetProfile& profile, const CandidateSet& candidates) {
  return rules_.assess_gaps(profile, candidates);
}

NadlDocument LlmReasoner::assemble_blueprint(const DatasetProfile& profile, const CandidateSet& candidates) {
  // The deterministic layout is offered as a reference the model may refine.
  const auto reference = rules_.assemble_blueprint(profile, candidates);
  std::string signatures;
  std::set<std::string> kinds;
  for (const auto& l : reference.layers) kinds.insert(l.module_kind);
  for (const auto& k : kinds) signatures += signature_text(*kb_.find(k)) + "\n";

  const auto& a = options_.assembly;
  auto request = base_request(
      settings_, "nadl-document",
      render_prompt("assemble_blueprint",
                    {{"profile_report", profile_to_markdown(profile)},
                     {"candidate_set", candidate_set_to_json(candidates)},
                     {"module_signatures", signatures},
                     {"task", std::string(to_string(a.task))},
                     {"num_classes", std::to_string(reference.input_spec.num_classes)},
                     {"param_budget", std::to_string(a.param_budget)},
                     {"dataset_id", profile.dataset_id},
                     {"created_at", a.created_at},
                     {"reference_blueprint", serialize_nadl(reference)}}));
  NadlDocument doc;
  ask(*client_, request, kMaxRetries, [&](const json& v) {
    std::vector<std::string> problems;
    doc = parse_nadl(v.dump());
    doc.metadata.generator = Generator::Llm;
    const auto report = validate(doc, kb_);
    for (const auto& e : report.errors) {
      problems.push_back(std::string(to_string(e.kind)) +
                         (e.layer_index ? " at layer " + std::to_string(*e.layer_index) : std::string()) + ": " +
                         e.message);
    }
    if (report.ok() && report.total_params > a.param_budget) {
      problems.push_back("estimated " + std::to_string(report.total_params) + " parameters exceed the budget of " +
                         std::to_string(a.param_budget));
    }
    if (doc.task != a.task) problems.push_back("task must be '" + std::string(to_string(a.task)) + "'");
    if (problems.empty()) last_stats_ = {report.total_params, 0};
    return problems;
  });
  return doc;
}

}  // namespace nadl
