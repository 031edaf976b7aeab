// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "nadl/document.hpp"

namespace nadl {

enum class Category { Backbone, Neck, Head };

std::string_view to_string(Category c);
std::optional<Category> category_from_string(std::string_view s);

/// Controlled applicability vocabulary. Records using any other tag are
/// rejected at load time.
const std::set<std::string>& tag_vocabulary();

struct Arity {
  bool variadic = false;
  int count = 1;  // exact count, or the minimum when variadic

  bool accepts(std::size_t inputs) const {
    return variadic ? inputs >= static_cast<std::size_t>(count) : inputs == static_cast<std::size_t>(count);
  }
  std::string describe() const;
};

struct ChannelRule {
  enum class Kind { FixedOut, SameAsInput, SumOfInputs, MaxOfInputs };
  Kind kind = Kind::SameAsInput;
  int arg_index = 0;  // FixedOut only
  std::string notes;
};

/// How a layer changes the cumulative stride of its input.
struct StrideRule {
  enum class Kind { Fixed, FromArg, InverseArg };
  Kind kind = Kind::Fixed;
  int value = 1;      // Fixed: multiplier in {1, 2}
  int arg_index = 0;  // FromArg multiplies, InverseArg divides, by args[arg_index] in {1, 2}
};

/// Sum of coef * c_in^a * c_out^b * repeats^c * (kernel^2)^d.
struct ParamTerm {
  double coefficient = 0.0;
  int pow_c_in = 0;
  int pow_c_out = 0;
  int pow_repeats = 0;
  int pow_kernel2 = 0;
};

struct ParamFormula {
  std::vector<ParamTerm> terms;
  std::string description;

  /// Evaluated in double and rounded to the nearest integer.
  std::int64_t evaluate(std::int64_t c_in, std::int64_t c_out, std::int64_t repeats, std::int64_t kernel) const;
};

struct ModuleRecord {
  std::string id;
  std::string name;
  Category category = Category::Backbone;
  bool primitive = false;  // structural building block, not a retrieval candidate
  std::string description;
  std::vector<std::string> strengths;
  std::vector<std::string> weaknesses;
  std::set<std::string> tags;
  std::string metric_notes;
  Arity arity;
  int min_args = 0;
  int max_args = 0;
  ChannelRule channel_rule;
  StrideRule stride;
  std::optional<int> kernel_arg;  // arg carrying the kernel size; absent means 1
  ParamFormula params;
  std::vector<Scalar> arg_template;  // "$c_out", "$nc", "$k", "$s" are placeholders
  std::string yaml_token;            // module token in the compiled YAML

  bool has_tag(std::string_view tag) const { return tags.count(std::string(tag)) != 0; }
};

struct ModuleSignature {
  Arity arity;
  ChannelRule channel_rule;
  StrideRule stride;
  std::optional<int> kernel_arg;
  ParamFormula params;
};

struct Query {
  std::vector<std::string> text_terms;
  std::set<std::string> required_tags;
  std::optional<Category> category_filter;
  std::string purpose;  // free-form label for traces; ignored by scoring

  bool empty() const { return text_terms.empty() && required_tags.empty() && !category_filter; }
};

struct RankedCandidate {
  const ModuleRecord* record = nullptr;
  double score = 0.0;
  std::set<std::string> matched_tags;
  std::set<std::string> matched_terms;
};

inline constexpr double kTagWeight = 2.0;
inline constexpr double kTermWeight = 1.0;

class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  /// Throws Error{Schema} on a malformed or lint-failing record (with line
  /// number) and Error{DuplicateId} when an id repeats.
  static KnowledgeBase load(const std::filesystem::path& path);
  static KnowledgeBase parse(std::string_view text);

  const std::vector<ModuleRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const ModuleRecord* find(std::string_view id) const;
  /// Lookup by compiled YAML token (falls back to id).
  const ModuleRecord* find_by_token(std::string_view token) const;

  /// Ranked retrieval over non-primitive records. Throws Error{EmptyQuery}.
  std::vector<RankedCandidate> search(const Query& query, std::size_t k) const;

  /// Throws Error{UnknownModule}.
  ModuleSignature get_signature(std::string_view module_kind) const;

 private:
  std::vector<ModuleRecord> records_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

/// Parses one KB record from JSON text (used by load and by tests).
ModuleRecord parse_module_record(std::string_view json_text);

}  // namespace nadl
