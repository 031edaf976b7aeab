// SPDX-License-Identifier: Apache-2.0
#include "nadl/prompts.hpp"

#include <algorithm>
#include <set>

#include "embedded_prompts.hpp"
#include "nadl/error.hpp"

namespace nadl {

std::vector<std::string> prompt_names() {
  std::vector<std::string> names;
  for (const auto& p : embedded::kPrompts) names.emplace_back(p.name);
  return names;
}

std::string_view prompt_template(std::string_view name) {
  for (const auto& p : embedded::kPrompts) {
    if (p.name == name) return p.text;
  }
  fail(ErrorCode::InvalidArgument, "unknown prompt template '" + std::string(name) + "'");
}

std::vector<std::string> placeholders_of(std::string_view text) {
  std::vector<std::string> names;
  std::set<std::string> seen;
  std::size_t pos = 0;
  while ((pos = text.find("{{", pos)) != std::string_view::npos) {
    const auto end = text.find("}}", pos + 2);
    if (end == std::string_view::npos) break;
    std::string name(text.substr(pos + 2, end - pos - 2));
    if (seen.insert(name).second) names.push_back(name);
    pos = end + 2;
  }
  return names;
}

std::string fill_template(std::string_view text, const std::map<std::string, std::string>& values) {
  const auto names = placeholders_of(text);
  for (const auto& [key, _] : values) {
    if (std::find(names.begin(), names.end(), key) == names.end()) {
      fail(ErrorCode::InvalidArgument, "template has no placeholder {{" + key + "}}");
    }
  }
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("{{", pos);
    const auto close = open == std::string_view::npos ? open : text.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    out.append(text.substr(pos, open - pos));
    const std::string name(text.substr(open + 2, close - open - 2));
    auto it = values.find(name);
    if (it == values.end()) fail(ErrorCode::InvalidArgument, "no value for placeholder {{" + name + "}}");
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

std::string render_prompt(std::string_view name, const std::map<std::string, std::string>& values) {
  return fill_template(prompt_template(name), values);
}

}  // namespace nadl
