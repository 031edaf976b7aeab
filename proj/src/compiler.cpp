// SPDX-License-Identifier: Apache-2.0
#include "nadl/compiler.hpp"

#include <yaml-cpp/yaml.h>

#include <atomic>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <unistd.h>

#include "json.hpp"
#include "nadl/error.hpp"
#include "nadl/prompts.hpp"

namespace nadl {

namespace fs = std::filesystem;

namespace {

std::string yaml_quote(const std::string& s) {
  std::string out = "\"";
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\x%02x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  return out + "\"";
}

std::string yaml_scalar(const Scalar& s) {
  if (const auto* i = std::get_if<std::int64_t>(&s)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&s)) return nlohmann::json(*d).dump();
  return yaml_quote(std::get<std::string>(s));
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (static_cast<unsigned char>(c) < 0x20) c = ' ';
  }
  return s;
}

}  // namespace

std::string compile_to_yaml(const NadlDocument& doc, const KnowledgeBase& kb) {
  const auto report = validate(doc, kb);
  if (!report.ok()) {
    const auto& e = report.errors.front();
    fail(ErrorCode::Compile, "refusing to compile a blueprint with " + std::to_string(report.errors.size()) +
                                 " validation error(s); first: " + std::string(to_string(e.kind)) +
                                 (e.layer_index ? " at layer " + std::to_string(*e.layer_index) : std::string()) +
                                 ": " + e.message);
  }
  bool past_backbone = false;
  for (const auto& l : doc.layers) {
    if (l.role != Role::Backbone) {
      past_backbone = true;
    } else if (past_backbone) {
      fail(ErrorCode::Compile, "layer " + std::to_string(l.index) +
                                   " has role backbone but follows a neck/head layer; sections must stay in order");
    }
  }

  std::ostringstream out;
  out << "# Compiled from a NADL blueprint (schema " << doc.schema_version << ")\n";
  out << "# dataset: " << one_line(doc.metadata.dataset_id) << "  task: " << to_string(doc.task)
      << "  generator: " << to_string(doc.metadata.generator) << "\n";
  out << "# [from, repeats, module, args]\n\n";
  out << "nc: " << doc.input_spec.num_classes << "\n";

  bool head_open = false;
  out << "\nbackbone:\n";
  if (doc.layers.empty() || doc.layers.front().role != Role::Backbone) out << "  []\n";
  for (const auto& l : doc.layers) {
    if (l.role != Role::Backbone && !head_open) {
      out << "\nhead:\n";
      head_open = true;
    }
    std::vector<std::string> refs;
    for (auto r : l.from) {
      if (r == kNetworkInput || r == kPrevious || r == l.index - 1) {
        refs.push_back("-1");
      } else {
        refs.push_back(std::to_string(r));
      }
    }
    std::string from = refs.front();
    if (refs.size() > 1) {
      from = "[";
      for (std::size_t i = 0; i < refs.size(); ++i) from += (i ? ", " : "") + refs[i];
      from += "]";
    }
    std::string args = "[";
    for (std::size_t i = 0; i < l.args.size(); ++i) args += (i ? ", " : "") + yaml_scalar(l.args[i]);
    args += "]";
    out << "  - [" << from << ", " << l.repeats << ", " << kb.find(l.module_kind)->yaml_token << ", " << args
        << "]  # " << l.index << "\n";
  }
  if (!head_open) out << "\nhead: []\n";
  return out.str();
}

namespace {

[[noreturn]] void schema(const YAML::Node& n, const std::string& msg) {
  const auto m = n.Mark();
  std::string where = m.is_null() ? std::string() : "line " + std::to_string(m.line + 1) + ": ";
  fail(ErrorCode::Schema, "yaml: " + where + msg);
}

std::int64_t as_int(const YAML::Node& n, const std::string& what) {
  if (!n.IsScalar() || n.Tag() == "!") schema(n, what + " must be an integer");
  const auto& s = n.Scalar();
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) schema(n, what + " must be an integer, got '" + s + "'");
  return v;
}

Scalar as_arg(const YAML::Node& n, std::int64_t nc) {
  if (!n.IsScalar()) schema(n, "module arguments must be scalars");
  const auto& s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  if (s == "nc") return nc;
  std::int64_t i = 0;
  if (auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), i); ec == std::errc() &&
                                                                        ptr == s.data() + s.size()) {
    return i;
  }
  if (!s.empty() && s.find_first_of(".eE") != std::string::npos) {
    char* end = nullptr;
    const double d = std::strtod(s.c_str(), &end);
    if (end == s.c_str() + s.size()) return d;
  }
  return s;
}

}  // namespace

NadlDocument parse_yaml_back(std::string_view text, const KnowledgeBase& kb) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::Syntax, std::string("yaml: ") + e.what());
  }
  if (!root.IsMap()) fail(ErrorCode::Schema, "yaml: top level must be a mapping with nc, backbone and head");
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (key != "nc" && key != "backbone" && key != "head") schema(kv.first, "unknown top-level key '" + key + "'");
  }
  if (!root["nc"]) fail(ErrorCode::Schema, "yaml: missing 'nc'");
  if (!root["backbone"]) fail(ErrorCode::Schema, "yaml: missing 'backbone'");

  NadlDocument doc;
  const auto nc = as_int(root["nc"], "nc");
  if (nc < 1) schema(root["nc"], "nc must be >= 1");
  doc.input_spec.num_classes = static_cast<int>(nc);

  bool oriented = false;
  auto read_section = [&](const char* name, bool head_section) {
    const auto section = root[name];
    if (!section) return;
    if (!section.IsSequence()) schema(section, std::string("'") + name + "' must be a list");
    for (const auto& entry : section) {
      const int index = static_cast<int>(doc.layers.size());
      const std::string where = "layer " + std::to_string(index);
      if (!entry.IsSequence() || entry.size() != 4) schema(entry, where + ": expected [from, repeats, module, args]");
      LayerSpec l;
      l.index = index;
      auto resolve = [&](std::int64_t r, const YAML::Node& n) -> LayerRef {
        if (r == -1 && index == 0) return kNetworkInput;
        const std::int64_t abs = r < 0 ? index + r : r;
        if (abs < 0 || abs >= index) schema(n, where + ": reference " + std::to_string(r) + " is out of range");
        return static_cast<LayerRef>(abs);
      };
      const auto from = entry[0];
      if (from.IsSequence()) {
        for (const auto& r : from) l.from.push_back(resolve(as_int(r, where + " from"), r));
      } else {
        l.from.push_back(resolve(as_int(from, where + " from"), from));
      }
      if (l.from.empty()) schema(from, where + ": from must not be empty");
      const auto repeats = as_int(entry[1], where + " repeats");
      if (repeats < 1) schema(entry[1], where + ": repeats must be >= 1");
      l.repeats = static_cast<int>(repeats);
      if (!entry[2].IsScalar()) schema(entry[2], where + ": module must be a name");
      const auto token = entry[2].Scalar();
      const auto* rec = kb.find_by_token(token);
      if (!rec) schema(entry[2], where + ": unknown module token '" + token + "'");
      l.module_kind = rec->id;
      if (!entry[3].IsSequence()) schema(entry[3], where + ": args must be a list");
      for (const auto& a : entry[3]) l.args.push_back(as_arg(a, nc));
      if (!head_section) {
        l.role = Role::Backbone;
      } else if (rec->category == Category::Head) {
        l.role = Role::Head;
        oriented = oriented || rec->has_tag("oriented-boxes");
      } else {
        l.role = Role::Neck;
      }
      doc.layers.push_back(std::move(l));
    }
  };
  read_section("backbone", false);
  read_section("head", true);
  doc.task = oriented ? Task::Obb : Task::Detect;
  // The header comment written by compile_to_yaml carries the dataset id.
  static const std::regex dataset_line(R"((?:^|\n)# dataset: (.*?)  task: )");
  std::match_results<std::string_view::const_iterator> m;
  if (std::regex_search(text.begin(), text.end(), m, dataset_line) && m[1].length() > 0) {
    doc.metadata.dataset_id = m[1].str();
  } else {
    doc.metadata.dataset_id = "yaml";
  }
  // Reuse the NADL schema checks (head presence, reference order, ...).
  try {
    return parse_nadl(serialize_nadl(doc));
  } catch (const Error& e) {
    fail(ErrorCode::Schema, std::string("yaml: ") + e.what());
  }
}

std::string compile_to_graph_export(const NadlDocument& doc, const ValidationReport* report) {
  std::ostringstream out;
  out << "digraph nadl {\n  rankdir=TB;\n  node [shape=box, fontname=\"monospace\"];\n";
  for (const auto& l : doc.layers) {
    std::string label = std::to_string(l.index) + " " + l.module_kind + "\\n" + std::string(to_string(l.role));
    if (report && static_cast<std::size_t>(l.index) < report->per_layer.size()) {
      const auto& t = report->per_layer[l.index];
      label += "\\nc_out=" + (t.c_out ? std::to_string(*t.c_out) : std::string("?"));
      label += " stride=" + (t.stride ? std::to_string(*t.stride) : std::string("?"));
    }
    std::string escaped;
    for (char c : label) {
      if (c == '"') escaped += '\\';
      escaped += c;
    }
    out << "  n" << l.index << " [label=\"" << escaped << "\"];\n";
  }
  for (const auto& e : graph_of(doc).edges) out << "  n" << e.from << " -> n" << e.to << ";\n";
  out << "}\n";
  return out.str();
}

std::string suggested_train_command(const NadlDocument& doc) {
  const std::string task(to_string(doc.task));
  const std::string data = (doc.metadata.dataset_id.empty() ? std::string("dataset") : doc.metadata.dataset_id) +
                           ".yaml";
  const std::string imgsz = std::to_string(doc.input_spec.nominal_resolution);
  return "yolo " + task + " train model=model.yaml data=" + data + " imgsz=" + imgsz + " epochs=300\n" + "yolo " +
         task + " val model=runs/" + task + "/train/weights/best.pt data=" + data + " imgsz=" + imgsz + "\n";
}

namespace {

std::string unique_suffix() {
  static std::atomic<unsigned> counter{0};
  return std::to_string(::getpid()) + "-" + std::to_string(counter++);
}

void write_plain(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.close();
  if (!out) fail(ErrorCode::Io, "error writing '" + path.string() + "'");
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view content) {
  const auto tmp = path.parent_path() / ("." + path.filename().string() + ".tmp-" + unique_suffix());
  write_plain(tmp, content);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorCode::Io, "cannot move output into place at '" + path.string() + "'");
  }
}

void emit_codegen_bundle(const NadlDocument& doc, const DatasetProfile& profile, const KnowledgeBase& kb,
                         const fs::path& out_dir) {
  const auto report = validate(doc, kb);
  if (!report.ok()) {
    fail(ErrorCode::Compile, "refusing to bundle a blueprint with " + std::to_string(report.errors.size()) +
                                 " validation error(s)");
  }
  const auto nadl_text = serialize_nadl(doc);
  const auto prompt = render_prompt("codegen", {{"nadl", nadl_text},
                                                {"validation_summary", report_to_table(report, doc)},
                                                {"profile_report", profile_to_markdown(profile)},
                                                {"train_command", suggested_train_command(doc)}});
  const std::string contents[] = {nadl_text, profile_to_json(profile), report_to_json(report), prompt};

  std::error_code ec;
  if (fs::exists(out_dir, ec) && !fs::is_directory(out_dir, ec)) {
    fail(ErrorCode::Io, "bundle path '" + out_dir.string() + "' exists and is not a directory");
  }
  const auto parent = out_dir.has_parent_path() ? out_dir.parent_path() : fs::path(".");
  fs::create_directories(parent, ec);
  const auto name = out_dir.filename().string();
  const auto tmp = parent / ("." + name + ".tmp-" + unique_suffix());
  fs::create_directory(tmp, ec);
  if (ec) fail(ErrorCode::Io, "cannot create '" + tmp.string() + "': " + ec.message());
  try {
    for (std::size_t i = 0; i < kBundleFiles.size(); ++i) write_plain(tmp / kBundleFiles[i], contents[i]);
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
  const auto old = parent / ("." + name + ".old-" + unique_suffix());
  const bool replacing = fs::exists(out_dir, ec);
  if (replacing) {
    fs::rename(out_dir, old, ec);
    if (ec) {
      fs::remove_all(tmp, ec);
      fail(ErrorCode::Io, "cannot replace '" + out_dir.string() + "'");
    }
  }
  fs::rename(tmp, out_dir, ec);
  if (ec) {
    const auto msg = ec.message();
    if (replacing) fs::rename(old, out_dir, ec);
    fs::remove_all(tmp, ec);
    fail(ErrorCode::Io, "cannot move bundle into place at '" + out_dir.string() + "': " + msg);
  }
  if (replacing) fs::remove_all(old, ec);
}

}  // namespace nadl
