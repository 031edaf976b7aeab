// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nadl/document.hpp"
#include "nadl/knowledge_base.hpp"

namespace nadl {

enum class DiagnosticKind {
  BrokenConnection,
  Cycle,
  ChannelConflict,
  ArityMismatch,
  UnknownModule,
  BadArgs,
  HeadStrideDuplicate,
  StrideMismatch,
  NoHead,
};

std::string_view to_string(DiagnosticKind k);
bool is_error(DiagnosticKind k);

struct Diagnostic {
  std::optional<int> layer_index;
  DiagnosticKind kind = DiagnosticKind::BrokenConnection;
  std::string message;

  bool operator==(const Diagnostic&) const = default;
};

struct LayerTrace {
  int layer_index = 0;
  std::optional<std::int64_t> c_out;
  std::optional<std::int64_t> stride;
  std::optional<std::int64_t> params;

  bool operator==(const LayerTrace&) const = default;
};

struct ValidationReport {
  std::vector<Diagnostic> errors;
  std::vector<Diagnostic> warnings;
  std::vector<LayerTrace> per_layer;
  std::int64_t total_params = 0;

  bool ok() const { return errors.empty(); }
  /// CLI exit-code contract: 0 clean, 1 warnings only, 2 errors.
  int severity() const { return !errors.empty() ? 2 : (!warnings.empty() ? 1 : 0); }
  bool has(DiagnosticKind k) const;
};

/// Collects every diagnostic; never throws on a bad document. Relative
/// references are resolved on the fly, so normalization is optional.
ValidationReport validate(const NadlDocument& doc, const KnowledgeBase& kb);

std::vector<std::optional<std::int64_t>> infer_channels(const NadlDocument& doc, const KnowledgeBase& kb,
                                                        int input_channels);

struct ParamEstimate {
  std::int64_t total = 0;
  std::vector<std::optional<std::int64_t>> per_layer;
};

ParamEstimate estimate_params(const NadlDocument& doc, const KnowledgeBase& kb);

/// HeadStrideDuplicate warnings for multi-input head layers.
std::vector<Diagnostic> check_head_scales(const NadlDocument& doc, const KnowledgeBase& kb);

std::string report_to_json(const ValidationReport& report);
std::string report_to_table(const ValidationReport& report, const NadlDocument& doc);

}  // namespace nadl
