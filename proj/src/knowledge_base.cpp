// SPDX-License-Identifier: Apache-2.0
#include "nadl/knowledge_base.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "nadl/error.hpp"

namespace nadl {

using json = nlohmann::json;

std::string_view to_string(Category c) {
  switch (c) {
    case Category::Backbone: return "Backbone";
    case Category::Neck: return "Neck";
    case Category::Head: return "Head";
  }
  return "Backbone";
}

std::optional<Category> category_from_string(std::string_view s) {
  if (s == "Backbone") return Category::Backbone;
  if (s == "Neck") return Category::Neck;
  if (s == "Head") return Category::Head;
  return std::nullopt;
}

const std::set<std::string>& tag_vocabulary() {
  static const std::set<std::string> vocab = {
      "attention",         "background-suppression", "concatenation",    "cross-attention",
      "dense-scene",       "downsampling",           "efficient-fusion", "elementwise",
      "global-context",    "high-resolution",        "large-receptive-field",
      "lightweight",       "multi-scale-fusion",     "oriented-boxes",   "real-time",
      "small-object",      "standard",               "structural",       "transformer-encoder",
      "upsampling",
  };
  return vocab;
}

std::string Arity::describe() const {
  return variadic ? "variadic(>=" + std::to_string(count) + ")" : std::to_string(count);
}

std::int64_t ParamFormula::evaluate(std::int64_t c_in, std::int64_t c_out, std::int64_t repeats,
                                    std::int64_t kernel) const {
  const double k2 = static_cast<double>(kernel) * static_cast<double>(kernel);
  double total = 0.0;
  for (const auto& t : terms) {
    total += t.coefficient * std::pow(static_cast<double>(c_in), t.pow_c_in) *
             std::pow(static_cast<double>(c_out), t.pow_c_out) *
             std::pow(static_cast<double>(repeats), t.pow_repeats) * std::pow(k2, t.pow_kernel2);
  }
  return static_cast<std::int64_t>(std::llround(total));
}

namespace {

[[noreturn]] void bad_record(const std::string& id, const std::string& what) {
  fail(ErrorCode::Schema, "KB record '" + id + "': " + what);
}

void check_keys(const json& obj, const std::string& id, std::initializer_list<std::string_view> required,
                std::initializer_list<std::string_view> optional) {
  if (!obj.is_object()) bad_record(id, "expected an object");
  for (auto key : required) {
    if (!obj.contains(std::string(key))) bad_record(id, "missing field '" + std::string(key) + "'");
  }
  for (const auto& [key, _] : obj.items()) {
    const bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                       std::find(optional.begin(), optional.end(), key) != optional.end();
    if (!known) bad_record(id, "unknown field '" + key + "'");
  }
}

std::string str_field(const json& obj, const char* key, const std::string& id) {
  const auto& v = obj.at(key);
  if (!v.is_string()) bad_record(id, std::string("'") + key + "' must be a string");
  return v.get<std::string>();
}

int int_field(const json& v, const std::string& id, const char* what) {
  if (!v.is_number_integer()) bad_record(id, std::string("'") + what + "' must be an integer");
  return v.get<int>();
}

std::vector<std::string> string_list(const json& obj, const char* key, const std::string& id) {
  std::vector<std::string> out;
  if (!obj.contains(key)) return out;
  const auto& v = obj.at(key);
  if (!v.is_array()) bad_record(id, std::string("'") + key + "' must be a list");
  for (const auto& s : v) {
    if (!s.is_string()) bad_record(id, std::string("'") + key + "' entries must be strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

ChannelRule parse_channel_rule(const json& v, const std::string& id) {
  check_keys(v, id, {"kind"}, {"arg_index", "notes"});
  ChannelRule rule;
  const auto kind = str_field(v, "kind", id);
  if (kind == "fixed_out") {
    rule.kind = ChannelRule::Kind::FixedOut;
    if (!v.contains("arg_index")) bad_record(id, "fixed_out channel rule needs arg_index");
    rule.arg_index = int_field(v.at("arg_index"), id, "channel_rule.arg_index");
  } else if (kind == "same_as_input") {
    rule.kind = ChannelRule::Kind::SameAsInput;
  } else if (kind == "sum_of_inputs") {
    rule.kind = ChannelRule::Kind::SumOfInputs;
  } else if (kind == "max_of_inputs") {
    rule.kind = ChannelRule::Kind::MaxOfInputs;
  } else {
    bad_record(id, "unknown channel rule '" + kind + "'");
  }
  if (v.contains("notes")) rule.notes = str_field(v, "notes", id);
  return rule;
}

StrideRule parse_stride(const json& v, const std::string& id) {
  check_keys(v, id, {"kind"}, {"value", "arg_index"});
  StrideRule rule;
  const auto kind = str_field(v, "kind", id);
  if (kind == "fixed") {
    rule.kind = StrideRule::Kind::Fixed;
    if (!v.contains("value")) bad_record(id, "fixed stride needs a value");
    rule.value = int_field(v.at("value"), id, "stride.value");
    if (rule.value != 1 && rule.value != 2) {
      bad_record(id, "stride effect " + std::to_string(rule.value) + " unsupported (only 1 or 2)");
    }
  } else if (kind == "from_arg" || kind == "inverse_arg") {
    rule.kind = kind == "from_arg" ? StrideRule::Kind::FromArg : StrideRule::Kind::InverseArg;
    if (!v.contains("arg_index")) bad_record(id, kind + " stride needs arg_index");
    rule.arg_index = int_field(v.at("arg_index"), id, "stride.arg_index");
  } else {
    bad_record(id, "unknown stride kind '" + kind + "'");
  }
  return rule;
}

ParamFormula parse_formula(const json& v, const std::string& id) {
  check_keys(v, id, {"terms"}, {"description"});
  ParamFormula f;
  if (v.contains("description")) f.description = str_field(v, "description", id);
  if (!v.at("terms").is_array()) bad_record(id, "params.terms must be a list");
  for (const auto& t : v.at("terms")) {
    check_keys(t, id, {"coef"}, {"c_in", "c_out", "repeats", "kernel2"});
    ParamTerm term;
    if (!t.at("coef").is_number()) bad_record(id, "term coefficient must be a number");
    term.coefficient = t.at("coef").get<double>();
    auto power = [&](const char* key) { return t.contains(key) ? int_field(t.at(key), id, key) : 0; };
    term.pow_c_in = power("c_in");
    term.pow_c_out = power("c_out");
    term.pow_repeats = power("repeats");
    term.pow_kernel2 = power("kernel2");
    if (term.coefficient < 0 || term.pow_c_in < 0 || term.pow_c_out < 0 || term.pow_repeats < 0 ||
        term.pow_kernel2 < 0) {
      bad_record(id, "parameter formula terms must have non-negative coefficients and powers");
    }
    f.terms.push_back(term);
  }
  return f;
}

Scalar scalar_from_json(const json& v, const std::string& id) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) return v.get<double>();
  if (v.is_string()) return v.get<std::string>();
  bad_record(id, "arg_template entries must be integers, floats or strings");
}

void lint(const ModuleRecord& r) {
  if (r.id.empty()) bad_record(r.id, "empty id");
  if (r.arity.count < 1) bad_record(r.id, "arity must be >= 1");
  if (r.min_args < 0 || r.max_args < r.min_args) bad_record(r.id, "invalid args range");
  if (r.channel_rule.kind == ChannelRule::Kind::FixedOut &&
      (r.channel_rule.arg_index < 0 || r.channel_rule.arg_index >= r.min_args)) {
    bad_record(r.id, "fixed_out arg_index must name a required positional argument");
  }
  if (r.stride.kind != StrideRule::Kind::Fixed && (r.stride.arg_index < 0 || r.stride.arg_index >= r.max_args)) {
    bad_record(r.id, "stride arg_index outside the argument list");
  }
  if (r.kernel_arg && (*r.kernel_arg < 0 || *r.kernel_arg >= r.max_args)) {
    bad_record(r.id, "kernel_arg outside the argument list");
  }
  if (r.channel_rule.kind == ChannelRule::Kind::SameAsInput && (r.arity.variadic || r.arity.count != 1)) {
    bad_record(r.id, "same_as_input requires arity 1");
  }
  for (const auto& tag : r.tags) {
    if (!tag_vocabulary().count(tag)) bad_record(r.id, "tag '" + tag + "' is not in the controlled vocabulary");
  }
  const auto n = static_cast<int>(r.arg_template.size());
  if (!r.arg_template.empty() && (n < r.min_args || n > r.max_args)) {
    bad_record(r.id, "arg_template length outside [min_args, max_args]");
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::size_t count_occurrences(const std::string& haystack, const std::string& needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

}  // namespace

ModuleRecord parse_module_record(std::string_view json_text) {
  json v;
  try {
    v = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Schema, std::string("malformed KB record: ") + e.what());
  }
  std::string id = v.is_object() && v.contains("id") && v.at("id").is_string() ? v.at("id").get<std::string>() : "?";
  check_keys(v, id,
             {"id", "name", "category", "description", "tags", "arity", "args", "channel_rule", "stride", "params"},
             {"primitive", "strengths", "weaknesses", "metric_notes", "kernel_arg", "arg_template", "yaml_token"});
  ModuleRecord r;
  r.id = str_field(v, "id", id);
  r.name = str_field(v, "name", id);
  auto cat = category_from_string(str_field(v, "category", id));
  if (!cat) bad_record(id, "category must be Backbone, Neck or Head");
  r.category = *cat;
  if (v.contains("primitive")) {
    if (!v.at("primitive").is_boolean()) bad_record(id, "'primitive' must be a boolean");
    r.primitive = v.at("primitive").get<bool>();
  }
  r.description = str_field(v, "description", id);
  r.strengths = string_list(v, "strengths", id);
  r.weaknesses = string_list(v, "weaknesses", id);
  for (auto& t : string_list(v, "tags", id)) r.tags.insert(std::move(t));
  if (v.contains("metric_notes")) r.metric_notes = str_field(v, "metric_notes", id);

  const auto& arity = v.at("arity");
  if (arity.is_string()) {
    const auto s = arity.get<std::string>();
    if (s == "variadic") {
      r.arity = {true, 1};
    } else if (s.rfind("variadic:", 0) == 0) {
      try {
        r.arity = {true, std::stoi(s.substr(9))};
      } catch (const std::exception&) {
        bad_record(id, "bad variadic minimum in '" + s + "'");
      }
    } else {
      bad_record(id, "arity must be an integer or \"variadic\"");
    }
  } else {
    r.arity = {false, int_field(arity, id, "arity")};
  }

  const auto& args = v.at("args");
  check_keys(args, id, {"min", "max"}, {});
  r.min_args = int_field(args.at("min"), id, "args.min");
  r.max_args = int_field(args.at("max"), id, "args.max");
  r.channel_rule = parse_channel_rule(v.at("channel_rule"), id);
  r.stride = parse_stride(v.at("stride"), id);
  if (v.contains("kernel_arg")) r.kernel_arg = int_field(v.at("kernel_arg"), id, "kernel_arg");
  r.params = parse_formula(v.at("params"), id);
  if (v.contains("arg_template")) {
    if (!v.at("arg_template").is_array()) bad_record(id, "arg_template must be a list");
    for (const auto& a : v.at("arg_template")) r.arg_template.push_back(scalar_from_json(a, id));
  }
  r.yaml_token = v.contains("yaml_token") ? str_field(v, "yaml_token", id) : r.id;
  lint(r);
  return r;
}

KnowledgeBase KnowledgeBase::parse(std::string_view text) {
  KnowledgeBase kb;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    ModuleRecord r;
    try {
      r = parse_module_record(line);
    } catch (const Error& e) {
      fail(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (kb.by_id_.count(r.id)) {
      fail(ErrorCode::DuplicateId, "line " + std::to_string(line_no) + ": duplicate module id '" + r.id + "'");
    }
    for (const auto& other : kb.records_) {
      if (other.yaml_token == r.yaml_token) {
        fail(ErrorCode::DuplicateId,
             "line " + std::to_string(line_no) + ": yaml_token '" + r.yaml_token + "' already used by '" + other.id + "'");
      }
    }
    kb.by_id_.emplace(r.id, kb.records_.size());
    kb.records_.push_back(std::move(r));
  }
  return kb;
}

KnowledgeBase KnowledgeBase::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open knowledge base '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const ModuleRecord* KnowledgeBase::find(std::string_view id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

const ModuleRecord* KnowledgeBase::find_by_token(std::string_view token) const {
  for (const auto& r : records_) {
    if (r.yaml_token == token) return &r;
  }
  return find(token);
}

std::vector<RankedCandidate> KnowledgeBase::search(const Query& query, std::size_t k) const {
  if (query.empty()) fail(ErrorCode::EmptyQuery, "query has no terms, tags or category filter");
  if (k == 0) fail(ErrorCode::InvalidArgument, "k must be >= 1");

  std::vector<std::string> terms;
  for (const auto& t : query.text_terms) {
    auto l = lower(t);
    if (!l.empty()) terms.push_back(std::move(l));
  }

  std::vector<RankedCandidate> out;
  for (const auto& r : records_) {
    if (r.primitive) continue;
    if (query.category_filter && r.category != *query.category_filter) continue;
    RankedCandidate c;
    c.record = &r;
    for (const auto& tag : query.required_tags) {
      if (r.has_tag(tag)) c.matched_tags.insert(tag);
    }
    std::string text = lower(r.description);
    for (const auto& s : r.strengths) text += "\n" + lower(s);
    for (const auto& term : terms) {
      const auto tf = count_occurrences(text, term);
      if (tf > 0) {
        c.matched_terms.insert(term);
        c.score += kTermWeight * std::min(1.0, static_cast<double>(tf));
      }
    }
    c.score += kTagWeight * static_cast<double>(c.matched_tags.size());
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.record->id < b.record->id;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

ModuleSignature KnowledgeBase::get_signature(std::string_view module_kind) const {
  const auto* r = find(module_kind);
  if (!r) fail(ErrorCode::UnknownModule, "module kind '" + std::string(module_kind) + "' is not in the knowledge base");
  return {r->arity, r->channel_rule, r->stride, r->kernel_arg, r->params};
}

}  // namespace nadl
