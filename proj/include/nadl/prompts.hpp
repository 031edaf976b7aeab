// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace nadl {

/// Prompt templates compiled in from assets/prompts/*.txt. Placeholders are
/// written {{name}}.
std::vector<std::string> prompt_names();
/// Throws Error{InvalidArgument} for an unknown template.
std::string_view prompt_template(std::string_view name);
/// Placeholder names in order of first appearance.
std::vector<std::string> placeholders_of(std::string_view text);
/// Substitutes every placeholder. Throws Error{InvalidArgument} when a
/// placeholder has no value or a value names no placeholder.
std::string fill_template(std::string_view text, const std::map<std::string, std::string>& values);
std::string render_prompt(std::string_view name, const std::map<std::string, std::string>& values);

}  // namespace nadl
