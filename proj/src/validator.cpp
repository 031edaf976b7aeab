// SPDX-License-Identifier: Apache-2.0
#include "nadl/validator.hpp"

#include <algorithm>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"

namespace nadl {

using json = nlohmann::json;

std::string_view to_string(DiagnosticKind k) {
  switch (k) {
    case DiagnosticKind::BrokenConnection: return "BrokenConnection";
    case DiagnosticKind::Cycle: return "Cycle";
    case DiagnosticKind::ChannelConflict: return "ChannelConflict";
    case DiagnosticKind::ArityMismatch: return "ArityMismatch";
    case DiagnosticKind::UnknownModule: return "UnknownModule";
    case DiagnosticKind::BadArgs: return "BadArgs";
    case DiagnosticKind::HeadStrideDuplicate: return "HeadStrideDuplicate";
    case DiagnosticKind::StrideMismatch: return "StrideMismatch";
    case DiagnosticKind::NoHead: return "NoHead";
  }
  return "Unknown";
}

bool is_error(DiagnosticKind k) {
  return k != DiagnosticKind::HeadStrideDuplicate && k != DiagnosticKind::StrideMismatch;
}

bool ValidationReport::has(DiagnosticKind k) const {
  auto match = [k](const Diagnostic& d) { return d.kind == k; };
  return std::any_of(errors.begin(), errors.end(), match) || std::any_of(warnings.begin(), warnings.end(), match);
}

namespace {

constexpr int kInputSource = -1;

std::optional<std::int64_t> int_arg(const LayerSpec& layer, int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= layer.args.size()) return std::nullopt;
  if (const auto* v = std::get_if<std::int64_t>(&layer.args[index])) return *v;
  return std::nullopt;
}

bool has_arg(const LayerSpec& layer, int index) {
  return index >= 0 && static_cast<std::size_t>(index) < layer.args.size();
}

std::string join(const std::vector<std::int64_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ", " : "") + std::to_string(values[i]);
  return out;
}

struct Analysis {
  std::vector<Diagnostic> diagnostics;
  std::vector<LayerTrace> per_layer;
};

class Analyzer {
 public:
  Analyzer(const NadlDocument& doc, const KnowledgeBase& kb) : doc_(doc), kb_(kb) {
    const auto n = doc.layers.size();
    records_.assign(n, nullptr);
    sources_.assign(n, {});
    broken_.assign(n, false);
  }

  Analysis run() {
    const int n = static_cast<int>(doc_.layers.size());
    for (int i = 0; i < n; ++i) check_structure(i);
    check_cycles();
    for (int i = 0; i < n; ++i) infer(i);
    check_heads();
    std::stable_sort(out_.diagnostics.begin(), out_.diagnostics.end(), [](const Diagnostic& a, const Diagnostic& b) {
      const int ia = a.layer_index.value_or(-1);
      const int ib = b.layer_index.value_or(-1);
      if (ia != ib) return ia < ib;
      return static_cast<int>(a.kind) < static_cast<int>(b.kind);
    });
    return std::move(out_);
  }

 private:
  void emit(std::optional<int> layer, DiagnosticKind kind, std::string message) {
    if (layer && is_error(kind)) broken_[*layer] = true;
    out_.diagnostics.push_back({layer, kind, std::move(message)});
  }

  void check_structure(int i) {
    const auto& layer = doc_.layers[i];
    const int n = static_cast<int>(doc_.layers.size());
    const auto* record = kb_.find(layer.module_kind);
    records_[i] = record;
    if (!record) {
      emit(i, DiagnosticKind::UnknownModule, "module kind '" + layer.module_kind + "' is not registered in the knowledge base");
    }

    for (auto ref : layer.from) {
      if (ref == kNetworkInput) {
        if (i != 0) {
          emit(i, DiagnosticKind::BrokenConnection, "only layer 0 may consume the network input");
        } else {
          sources_[i].push_back(kInputSource);
        }
      } else if (ref == kPrevious) {
        if (i == 0) {
          emit(i, DiagnosticKind::BrokenConnection, "relative reference -1 on layer 0 has no predecessor");
        } else {
          sources_[i].push_back(i - 1);
        }
      } else if (ref == i) {
        emit(i, DiagnosticKind::Cycle, "layer " + std::to_string(i) + " references itself");
      } else if (ref < 0 || ref >= n) {
        emit(i, DiagnosticKind::BrokenConnection,
             "reference " + std::to_string(ref) + " is out of range (blueprint has " + std::to_string(n) + " layers)");
      } else if (ref > i) {
        emit(i, DiagnosticKind::BrokenConnection, "forward reference to layer " + std::to_string(ref));
        forward_.push_back({ref, i});
      } else {
        sources_[i].push_back(ref);
      }
    }

    if (!record) return;
    if (!record->arity.accepts(layer.from.size())) {
      emit(i, DiagnosticKind::ArityMismatch,
           layer.module_kind + " expects " + record->arity.describe() + " input(s), got " + std::to_string(layer.from.size()));
    }
    check_args(i, *record);
  }

  void check_args(int i, const ModuleRecord& record) {
    const auto& layer = doc_.layers[i];
    const auto count = static_cast<int>(layer.args.size());
    if (count < record.min_args || count > record.max_args) {
      emit(i, DiagnosticKind::BadArgs,
           layer.module_kind + " takes " + std::to_string(record.min_args) + ".." + std::to_string(record.max_args) +
               " args, got " + std::to_string(count));
      return;
    }
    if (record.channel_rule.kind == ChannelRule::Kind::FixedOut) {
      auto c = int_arg(layer, record.channel_rule.arg_index);
      if (!c || *c < 1) {
        emit(i, DiagnosticKind::BadArgs,
             "args[" + std::to_string(record.channel_rule.arg_index) + "] must be a positive channel count");
      }
    }
    if (record.stride.kind != StrideRule::Kind::Fixed && has_arg(layer, record.stride.arg_index)) {
      auto s = int_arg(layer, record.stride.arg_index);
      if (!s || (*s != 1 && *s != 2)) {
        emit(i, DiagnosticKind::BadArgs,
             "args[" + std::to_string(record.stride.arg_index) + "] must be a stride factor of 1 or 2, got " +
                 scalar_to_string(layer.args[record.stride.arg_index]));
      }
    }
    if (record.kernel_arg && has_arg(layer, *record.kernel_arg)) {
      auto k = int_arg(layer, *record.kernel_arg);
      if (!k || *k < 1) {
        emit(i, DiagnosticKind::BadArgs, "args[" + std::to_string(*record.kernel_arg) + "] must be a positive kernel size");
      }
    }
  }

  // Forward references can close loops; report each strongly connected
  // component once, at its lowest layer.
  void check_cycles() {
    if (forward_.empty()) return;
    const int n = static_cast<int>(doc_.layers.size());
    std::vector<std::vector<int>> adj(n);
    for (int v = 0; v < n; ++v) {
      for (int s : sources_[v]) {
        if (s >= 0) adj[s].push_back(v);
      }
    }
    for (const auto& [s, v] : forward_) adj[s].push_back(v);

    std::vector<int> index(n, -1), low(n, 0), stack;
    std::vector<bool> on_stack(n, false);
    int counter = 0;
    std::function<void(int)> strong = [&](int v) {
      index[v] = low[v] = counter++;
      stack.push_back(v);
      on_stack[v] = true;
      for (int w : adj[v]) {
        if (index[w] < 0) {
          strong(w);
          low[v] = std::min(low[v], low[w]);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
      }
      if (low[v] == index[v]) {
        std::vector<std::int64_t> members;
        int w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          members.push_back(w);
        } while (w != v);
        if (members.size() > 1) {
          std::sort(members.begin(), members.end());
          emit(static_cast<int>(members.front()), DiagnosticKind::Cycle, "layers {" + join(members) + "} form a cycle");
        }
      }
    };
    for (int v = 0; v < n; ++v) {
      if (index[v] < 0) strong(v);
    }
  }

  void infer(int i) {
    const auto& layer = doc_.layers[i];
    LayerTrace trace;
    trace.layer_index = i;
    const auto* record = records_[i];
    if (!record || broken_[i] || sources_[i].empty()) {
      out_.per_layer.push_back(trace);
      return;
    }
    std::vector<std::int64_t> channels, strides;
    for (int s : sources_[i]) {
      if (s == kInputSource) {
        channels.push_back(doc_.input_spec.channels);
        strides.push_back(1);
        continue;
      }
      const auto& src = out_.per_layer[s];
      if (!src.c_out || !src.stride) {
        out_.per_layer.push_back(trace);
        return;
      }
      channels.push_back(*src.c_out);
      strides.push_back(*src.stride);
    }

    std::int64_t c_in = 0;
    for (auto c : channels) c_in += c;
    const auto c_max = *std::max_element(channels.begin(), channels.end());
    switch (record->channel_rule.kind) {
      case ChannelRule::Kind::FixedOut:
        trace.c_out = int_arg(layer, record->channel_rule.arg_index);
        break;
      case ChannelRule::Kind::SameAsInput:
        trace.c_out = channels.front();
        break;
      case ChannelRule::Kind::SumOfInputs:
        trace.c_out = c_in;
        break;
      case ChannelRule::Kind::MaxOfInputs:
        if (std::any_of(channels.begin(), channels.end(), [&](auto c) { return c != channels.front(); })) {
          emit(i, DiagnosticKind::ChannelConflict,
               layer.module_kind + " requires equal input channels, got (" + join(channels) + ")");
        }
        trace.c_out = c_max;
        break;
    }

    std::int64_t stride = *std::max_element(strides.begin(), strides.end());
    const bool diverging = std::any_of(strides.begin(), strides.end(), [&](auto s) { return s != strides.front(); });
    if (diverging && record->category != Category::Head) {
      emit(i, DiagnosticKind::StrideMismatch, "inputs arrive at different strides (" + join(strides) + ")");
    }
    switch (record->stride.kind) {
      case StrideRule::Kind::Fixed:
        stride *= record->stride.value;
        break;
      case StrideRule::Kind::FromArg:
        stride *= int_arg(layer, record->stride.arg_index).value_or(1);
        break;
      case StrideRule::Kind::InverseArg: {
        const auto factor = int_arg(layer, record->stride.arg_index).value_or(1);
        if (stride % factor != 0) {
          emit(i, DiagnosticKind::BadArgs,
               "upsampling stride " + std::to_string(stride) + " by " + std::to_string(factor) + " gives a fractional stride");
          out_.per_layer.push_back(trace);
          return;
        }
        stride /= factor;
        break;
      }
    }
    trace.stride = stride;

    const std::int64_t kernel = record->kernel_arg ? int_arg(layer, *record->kernel_arg).value_or(1) : 1;
    if (trace.c_out) trace.params = record->params.evaluate(c_in, *trace.c_out, layer.repeats, kernel);
    out_.per_layer.push_back(trace);
  }

  void check_heads() {
    const bool has_head = std::any_of(doc_.layers.begin(), doc_.layers.end(),
                                      [](const LayerSpec& l) { return l.role == Role::Head; });
    if (!has_head) emit(std::nullopt, DiagnosticKind::NoHead, "blueprint has no head-role layer");
    for (std::size_t i = 0; i < doc_.layers.size(); ++i) {
      for (auto& d : head_scale_diagnostics(static_cast<int>(i))) out_.diagnostics.push_back(std::move(d));
    }
  }

 public:
  std::vector<Diagnostic> head_scale_diagnostics(int i) const {
    const auto& layer = doc_.layers[i];
    if (layer.role != Role::Head || sources_[i].size() < 2) return {};
    std::vector<std::int64_t> strides;
    for (int s : sources_[i]) {
      if (s == kInputSource) {
        strides.push_back(1);
      } else if (static_cast<std::size_t>(s) < out_.per_layer.size() && out_.per_layer[s].stride) {
        strides.push_back(*out_.per_layer[s].stride);
      } else {
        return {};
      }
    }
    std::set<std::int64_t> unique(strides.begin(), strides.end());
    if (unique.size() == strides.size()) return {};
    return {{i, DiagnosticKind::HeadStrideDuplicate, "head consumes duplicate strides (" + join(strides) + ")"}};
  }

  const Analysis& partial() const { return out_; }

 private:
  const NadlDocument& doc_;
  const KnowledgeBase& kb_;
  std::vector<const ModuleRecord*> records_;
  std::vector<std::vector<int>> sources_;
  std::vector<bool> broken_;
  std::vector<std::pair<int, int>> forward_;
  Analysis out_;
};

}  // namespace

ValidationReport validate(const NadlDocument& doc, const KnowledgeBase& kb) {
  auto analysis = Analyzer(doc, kb).run();
  ValidationReport report;
  for (auto& d : analysis.diagnostics) (is_error(d.kind) ? report.errors : report.warnings).push_back(std::move(d));
  report.per_layer = std::move(analysis.per_layer);
  for (const auto& t : report.per_layer) report.total_params += t.params.value_or(0);
  return report;
}

std::vector<std::optional<std::int64_t>> infer_channels(const NadlDocument& doc, const KnowledgeBase& kb,
                                                        int input_channels) {
  NadlDocument copy = doc;
  copy.input_spec.channels = input_channels;
  const auto report = validate(copy, kb);
  std::vector<std::optional<std::int64_t>> out;
  for (const auto& t : report.per_layer) out.push_back(t.c_out);
  return out;
}

ParamEstimate estimate_params(const NadlDocument& doc, const KnowledgeBase& kb) {
  const auto report = validate(doc, kb);
  ParamEstimate est;
  est.total = report.total_params;
  for (const auto& t : report.per_layer) est.per_layer.push_back(t.params);
  return est;
}

std::vector<Diagnostic> check_head_scales(const NadlDocument& doc, const KnowledgeBase& kb) {
  const auto report = validate(doc, kb);
  std::vector<Diagnostic> out;
  for (const auto& d : report.warnings) {
    if (d.kind == DiagnosticKind::HeadStrideDuplicate) out.push_back(d);
  }
  return out;
}

namespace {

nlohmann::ordered_json diag_json(const Diagnostic& d) {
  return nlohmann::ordered_json{{"layer_index", d.layer_index ? nlohmann::ordered_json(*d.layer_index) : nlohmann::ordered_json(nullptr)},
              {"kind", std::string(to_string(d.kind))},
              {"message", d.message}};
}

nlohmann::ordered_json opt_json(const std::optional<std::int64_t>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string report_to_json(const ValidationReport& report) {
  nlohmann::ordered_json out;
  out["ok"] = report.ok();
  out["severity"] = report.severity();
  out["total_params"] = report.total_params;
  out["errors"] = nlohmann::ordered_json::array();
  for (const auto& d : report.errors) out["errors"].push_back(diag_json(d));
  out["warnings"] = nlohmann::ordered_json::array();
  for (const auto& d : report.warnings) out["warnings"].push_back(diag_json(d));
  out["per_layer"] = nlohmann::ordered_json::array();
  for (const auto& t : report.per_layer) {
    nlohmann::ordered_json row;
    row["layer_index"] = t.layer_index;
    row["c_out"] = opt_json(t.c_out);
    row["stride"] = opt_json(t.stride);
    row["params"] = opt_json(t.params);
    out["per_layer"].push_back(row);
  }
  return out.dump(2) + "\n";
}

std::string report_to_table(const ValidationReport& report, const NadlDocument& doc) {
  std::ostringstream out;
  auto cell = [](const std::optional<std::int64_t>& v) { return v ? std::to_string(*v) : std::string("?"); };
  out << std::left << std::setw(5) << "idx" << std::setw(26) << "module" << std::setw(10) << "role" << std::setw(14)
      << "from" << std::right << std::setw(8) << "c_out" << std::setw(8) << "stride" << std::setw(12) << "params"
      << "\n";
  for (std::size_t i = 0; i < report.per_layer.size() && i < doc.layers.size(); ++i) {
    const auto& l = doc.layers[i];
    std::string from;
    for (std::size_t j = 0; j < l.from.size(); ++j) {
      from += (j ? "," : "") + (l.from[j] == kNetworkInput ? std::string("input") : std::to_string(l.from[j]));
    }
    const auto& t = report.per_layer[i];
    out << std::left << std::setw(5) << i << std::setw(26) << l.module_kind << std::setw(10) << to_string(l.role)
        << std::setw(14) << from << std::right << std::setw(8) << cell(t.c_out) << std::setw(8) << cell(t.stride)
        << std::setw(12) << cell(t.params) << "\n";
  }
  out << "total params: " << report.total_params << "\n";
  out << "errors: " << report.errors.size() << "  warnings: " << report.warnings.size() << "\n";
  auto line = [&](const char* level, const Diagnostic& d) {
    out << level << " ";
    if (d.layer_index) {
      out << "[layer " << *d.layer_index << "] ";
    } else {
      out << "[blueprint] ";
    }
    out << to_string(d.kind) << ": " << d.message << "\n";
  };
  for (const auto& d : report.errors) line("ERROR", d);
  for (const auto& d : report.warnings) line("WARN ", d);
  return out.str();
}

}  // namespace nadl
