// SPDX-License-Identifier: Apache-2.0
#include "nadl/document.hpp"

#include <algorithm>
#include <limits>
#include <regex>
#include <set>
#include <sstream>

#include "json.hpp"
#include "nadl/error.hpp"

namespace nadl {

using json = nlohmann::json;

std::string_view to_string(Task t) { return t == Task::Detect ? "detect" : "obb"; }

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Backbone: return "backbone";
    case Role::Neck: return "neck";
    case Role::Head: return "head";
  }
  return "backbone";
}

std::string_view to_string(Generator g) { return g == Generator::Rule ? "rule" : "llm"; }

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Syntax: return "SyntaxError";
    case ErrorCode::Schema: return "SchemaError";
    case ErrorCode::Ref: return "RefError";
    case ErrorCode::Format: return "FormatError";
    case ErrorCode::MissingDims: return "MissingDims";
    case ErrorCode::EmptyImage: return "EmptyImage";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptyQuery: return "EmptyQuery";
    case ErrorCode::UnknownModule: return "UnknownModule";
    case ErrorCode::ReasonerFailure: return "ReasonerFailure";
    case ErrorCode::NoViableHead: return "NoViableHead";
    case ErrorCode::Assembly: return "AssemblyError";
    case ErrorCode::Compile: return "CompileError";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::Transport: return "TransportError";
    case ErrorCode::Auth: return "AuthError";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Error";
}

bool is_valid_timestamp(std::string_view text) {
  static const std::regex re(R"(^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:\d{2})$)");
  return std::regex_match(text.begin(), text.end(), re);
}

std::string scalar_to_string(const Scalar& s) {
  if (const auto* i = std::get_if<std::int64_t>(&s)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&s)) return json(*d).dump();
  return std::get<std::string>(s);
}

namespace {

[[noreturn]] void schema_error(const std::string& where, const std::string& what) {
  fail(ErrorCode::Schema, where + ": " + what);
}

void require_keys(const json& obj, const std::string& where,
                  std::initializer_list<std::string_view> keys) {
  if (!obj.is_object()) schema_error(where, "expected an object");
  for (auto key : keys) {
    if (!obj.contains(std::string(key))) schema_error(where, "missing field '" + std::string(key) + "'");
  }
  for (const auto& [key, _] : obj.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      schema_error(where, "unknown field '" + key + "'");
    }
  }
}

std::int64_t get_int(const json& v, const std::string& where) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  schema_error(where, "expected an integer");
}

int get_bounded_int(const json& v, const std::string& where, std::int64_t lo) {
  auto value = get_int(v, where);
  if (value < lo || value > std::numeric_limits<int>::max()) {
    schema_error(where, "value " + std::to_string(value) + " out of range (min " + std::to_string(lo) + ")");
  }
  return static_cast<int>(value);
}

std::string get_string(const json& v, const std::string& where) {
  if (!v.is_string()) schema_error(where, "expected a string");
  return v.get<std::string>();
}

Task parse_task(const json& v) {
  auto s = get_string(v, "task");
  if (s == "detect") return Task::Detect;
  if (s == "obb") return Task::Obb;
  schema_error("task", "unsupported task '" + s + "'");
}

Role parse_role(const json& v, const std::string& where) {
  auto s = get_string(v, where);
  if (s == "backbone") return Role::Backbone;
  if (s == "neck") return Role::Neck;
  if (s == "head") return Role::Head;
  schema_error(where, "unknown role '" + s + "'");
}

Generator parse_generator(const json& v) {
  auto s = get_string(v, "metadata.generator");
  if (s == "rule") return Generator::Rule;
  if (s == "llm") return Generator::Llm;
  schema_error("metadata.generator", "unknown generator '" + s + "'");
}

bool is_identifier(std::string_view s) {
  static const std::regex re(R"(^[A-Za-z_][A-Za-z0-9_.]*$)");
  return std::regex_match(s.begin(), s.end(), re);
}

LayerSpec parse_layer(const json& v, std::size_t position) {
  const std::string where = "layers[" + std::to_string(position) + "]";
  require_keys(v, where, {"index", "from", "repeats", "module_kind", "args", "role"});
  LayerSpec layer;
  layer.index = get_bounded_int(v.at("index"), where + ".index", 0);
  if (static_cast<std::size_t>(layer.index) != position) {
    schema_error(where, "index " + std::to_string(layer.index) + " does not match list position");
  }
  const auto& from = v.at("from");
  if (!from.is_array() || from.empty()) schema_error(where + ".from", "expected a non-empty list");
  for (const auto& ref : from) {
    if (ref.is_string() && ref.get<std::string>() == "input") {
      layer.from.push_back(kNetworkInput);
      continue;
    }
    auto value = get_int(ref, where + ".from");
    if (value < -1) {
      schema_error(where + ".from", "relative reference " + std::to_string(value) + " is not supported (only -1)");
    }
    if (value > std::numeric_limits<int>::max()) schema_error(where + ".from", "reference too large");
    layer.from.push_back(static_cast<LayerRef>(value));
  }
  layer.repeats = get_bounded_int(v.at("repeats"), where + ".repeats", 1);
  layer.module_kind = get_string(v.at("module_kind"), where + ".module_kind");
  if (!is_identifier(layer.module_kind)) {
    schema_error(where + ".module_kind", "'" + layer.module_kind + "' is not an identifier");
  }
  const auto& args = v.at("args");
  if (!args.is_array()) schema_error(where + ".args", "expected a list");
  for (const auto& a : args) {
    if (a.is_number_integer()) {
      layer.args.emplace_back(a.get<std::int64_t>());
    } else if (a.is_number_float()) {
      layer.args.emplace_back(a.get<double>());
    } else if (a.is_string()) {
      layer.args.emplace_back(a.get<std::string>());
    } else {
      schema_error(where + ".args", "arguments must be integers, floats or strings");
    }
  }
  layer.role = parse_role(v.at("role"), where + ".role");
  return layer;
}

json scalar_json(const Scalar& s) {
  return std::visit([](const auto& v) { return json(v); }, s);
}

json ref_json(LayerRef r) { return r == kNetworkInput ? json("input") : json(r); }

}  // namespace

NadlDocument parse_nadl(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Syntax, std::string("malformed NADL text: ") + e.what());
  }
  require_keys(root, "document", {"schema_version", "task", "input_spec", "metadata", "layers"});

  NadlDocument doc;
  doc.schema_version = get_string(root.at("schema_version"), "schema_version");
  if (doc.schema_version != kSchemaVersion) {
    schema_error("schema_version", "unsupported version '" + doc.schema_version + "'");
  }
  doc.task = parse_task(root.at("task"));

  const auto& in = root.at("input_spec");
  require_keys(in, "input_spec", {"channels", "nominal_resolution", "num_classes"});
  doc.input_spec.channels = get_bounded_int(in.at("channels"), "input_spec.channels", 1);
  doc.input_spec.nominal_resolution =
      get_bounded_int(in.at("nominal_resolution"), "input_spec.nominal_resolution", 32);
  doc.input_spec.num_classes = get_bounded_int(in.at("num_classes"), "input_spec.num_classes", 1);

  const auto& meta = root.at("metadata");
  require_keys(meta, "metadata", {"dataset_id", "rationale_notes", "generator", "created_at"});
  doc.metadata.dataset_id = get_string(meta.at("dataset_id"), "metadata.dataset_id");
  if (doc.metadata.dataset_id.empty()) schema_error("metadata.dataset_id", "must be non-empty");
  const auto& notes = meta.at("rationale_notes");
  if (!notes.is_array()) schema_error("metadata.rationale_notes", "expected a list");
  for (const auto& n : notes) doc.metadata.rationale_notes.push_back(get_string(n, "metadata.rationale_notes"));
  doc.metadata.generator = parse_generator(meta.at("generator"));
  doc.metadata.created_at = get_string(meta.at("created_at"), "metadata.created_at");
  if (!is_valid_timestamp(doc.metadata.created_at)) {
    schema_error("metadata.created_at", "'" + doc.metadata.created_at + "' is not an ISO-8601 timestamp");
  }

  const auto& layers = root.at("layers");
  if (!layers.is_array()) schema_error("layers", "expected a list");
  for (std::size_t i = 0; i < layers.size(); ++i) doc.layers.push_back(parse_layer(layers[i], i));
  const bool has_head = std::any_of(doc.layers.begin(), doc.layers.end(),
                                    [](const LayerSpec& l) { return l.role == Role::Head; });
  if (!has_head) schema_error("layers", "a detection blueprint needs at least one head layer");
  return doc;
}

std::string serialize_nadl(const NadlDocument& doc) {
  std::ostringstream out;
  out << "{\n";
  out << "  \"schema_version\": " << json(doc.schema_version).dump() << ",\n";
  out << "  \"task\": " << json(std::string(to_string(doc.task))).dump() << ",\n";
  out << "  \"input_spec\": {\"channels\": " << doc.input_spec.channels
      << ", \"nominal_resolution\": " << doc.input_spec.nominal_resolution
      << ", \"num_classes\": " << doc.input_spec.num_classes << "},\n";
  out << "  \"metadata\": {\n";
  out << "    \"dataset_id\": " << json(doc.metadata.dataset_id).dump() << ",\n";
  out << "    \"generator\": " << json(std::string(to_string(doc.metadata.generator))).dump() << ",\n";
  out << "    \"created_at\": " << json(doc.metadata.created_at).dump() << ",\n";
  out << "    \"rationale_notes\": [";
  for (std::size_t i = 0; i < doc.metadata.rationale_notes.size(); ++i) {
    out << (i ? ",\n      " : "\n      ") << json(doc.metadata.rationale_notes[i]).dump();
  }
  out << (doc.metadata.rationale_notes.empty() ? "]\n" : "\n    ]\n");
  out << "  },\n";
  out << "  \"layers\": [";
  for (std::size_t i = 0; i < doc.layers.size(); ++i) {
    const auto& l = doc.layers[i];
    json from = json::array();
    for (auto r : l.from) from.push_back(ref_json(r));
    json args = json::array();
    for (const auto& a : l.args) args.push_back(scalar_json(a));
    out << (i ? ",\n    " : "\n    ");
    out << "{\"index\": " << l.index << ", \"from\": " << from.dump() << ", \"repeats\": " << l.repeats
        << ", \"module_kind\": " << json(l.module_kind).dump() << ", \"args\": " << args.dump()
        << ", \"role\": \"" << to_string(l.role) << "\"}";
  }
  out << (doc.layers.empty() ? "]\n" : "\n  ]\n");
  out << "}\n";
  return out.str();
}

NadlDocument normalize_refs(const NadlDocument& doc) {
  NadlDocument out = doc;
  for (auto& layer : out.layers) {
    for (auto& ref : layer.from) {
      if (ref != kPrevious) continue;
      if (layer.index == 0) fail(ErrorCode::Ref, "layer 0 uses relative reference -1 but has no predecessor");
      ref = layer.index - 1;
    }
  }
  return out;
}

int LayerGraph::in_degree(int node) const {
  return static_cast<int>(std::count_if(edges.begin(), edges.end(), [&](const Edge& e) { return e.to == node; }));
}

int LayerGraph::out_degree(int node) const {
  return static_cast<int>(std::count_if(edges.begin(), edges.end(), [&](const Edge& e) { return e.from == node; }));
}

bool LayerGraph::is_forward_only() const {
  return std::all_of(edges.begin(), edges.end(), [](const Edge& e) { return e.from < e.to; });
}

LayerGraph graph_of(const NadlDocument& doc) {
  LayerGraph g;
  g.node_count = static_cast<int>(doc.layers.size());
  for (const auto& layer : doc.layers) {
    for (auto ref : layer.from) {
      if (ref == kNetworkInput) continue;
      const int source = ref == kPrevious ? layer.index - 1 : ref;
      g.edges.push_back({source, layer.index});
    }
  }
  return g;
}

}  // namespace nadl
