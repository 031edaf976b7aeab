// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace nadl {

inline constexpr std::string_view kSchemaVersion = "1.0";

enum class Task { Detect, Obb };
enum class Role { Backbone, Neck, Head };
enum class Generator { Rule, Llm };

std::string_view to_string(Task t);
std::string_view to_string(Role r);
std::string_view to_string(Generator g);

/// Positional module argument. Integers and floats stay distinct so that a
/// serialize/parse round trip preserves `2` vs `2.0`.
using Scalar = std::variant<std::int64_t, double, std::string>;

/// Source reference of a layer. Non-negative values are absolute layer
/// indices, kPrevious is the relative "-1" form, kNetworkInput is the image.
using LayerRef = int;
inline constexpr LayerRef kPrevious = -1;
inline constexpr LayerRef kNetworkInput = -1000;

struct InputSpec {
  int channels = 3;
  int nominal_resolution = 640;
  int num_classes = 80;

  bool operator==(const InputSpec&) const = default;
};

struct BlueprintMetadata {
  std::string dataset_id;
  std::vector<std::string> rationale_notes;
  Generator generator = Generator::Rule;
  std::string created_at = "1970-01-01T00:00:00Z";

  bool operator==(const BlueprintMetadata&) const = default;
};

struct LayerSpec {
  int index = 0;
  std::vector<LayerRef> from;
  int repeats = 1;
  std::string module_kind;
  std::vector<Scalar> args;
  Role role = Role::Backbone;

  bool operator==(const LayerSpec&) const = default;
};

struct NadlDocument {
  std::string schema_version{kSchemaVersion};
  Task task = Task::Detect;
  InputSpec input_spec;
  BlueprintMetadata metadata;
  std::vector<LayerSpec> layers;

  bool operator==(const NadlDocument&) const = default;
};

/// Parses NADL JSON text. Throws Error{Syntax} for malformed text and
/// Error{Schema} for anything that violates the document schema, including
/// unknown fields at any level.
NadlDocument parse_nadl(std::string_view text);

/// Canonical text form: fixed key order, one layer per line, shortest
/// round-trip float formatting. Equal documents give byte-equal output.
std::string serialize_nadl(const NadlDocument& doc);

/// Replaces every relative reference with the absolute previous index.
/// Throws Error{Ref} when layer 0 uses the relative form.
NadlDocument normalize_refs(const NadlDocument& doc);

struct Edge {
  int from = 0;
  int to = 0;
  bool operator==(const Edge&) const = default;
  auto operator<=>(const Edge&) const = default;
};

/// Layer graph; references to the network input produce no edge.
struct LayerGraph {
  int node_count = 0;
  std::vector<Edge> edges;  // ordered by target, then position in `from`

  int in_degree(int node) const;
  int out_degree(int node) const;
  /// True when every edge points from a lower to a higher index.
  bool is_forward_only() const;
};

LayerGraph graph_of(const NadlDocument& doc);

/// Helpers shared by the parsers and emitters.
std::string scalar_to_string(const Scalar& s);
bool is_valid_timestamp(std::string_view text);

}  // namespace nadl
