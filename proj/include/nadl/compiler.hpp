// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "nadl/document.hpp"
#include "nadl/knowledge_base.hpp"
#include "nadl/profiler.hpp"
#include "nadl/validator.hpp"

namespace nadl {

/// Detection-framework YAML: `nc`, then `backbone` and `head` lists of
/// [from, repeats, module, args]. Backbone-role layers go to `backbone`,
/// neck and head roles to `head`. Throws Error{Compile} when the document
/// has validation errors or a backbone layer follows a neck/head layer.
std::string compile_to_yaml(const NadlDocument& doc, const KnowledgeBase& kb);

/// Reverse of compile_to_yaml. Roles come from the section and, inside
/// `head`, from the module category. Throws Error{Syntax} or Error{Schema}
/// (the latter names an unknown module token).
NadlDocument parse_yaml_back(std::string_view text, const KnowledgeBase& kb);

/// Graphviz DOT: one node per layer, one edge per layer reference (input
/// references have no node). Labels carry c_out/stride when a report is given.
std::string compile_to_graph_export(const NadlDocument& doc, const ValidationReport* report = nullptr);

inline constexpr std::array<std::string_view, 4> kBundleFiles{
    "blueprint.nadl.json", "profile_report.json", "validation_report.json", "codegen_prompt.txt"};

/// Suggested train/test command for the compiled model (not executed).
std::string suggested_train_command(const NadlDocument& doc);

/// Writes the four kBundleFiles into `out_dir`, replacing it atomically.
/// Throws Error{Compile} for a document with validation errors, Error{Io}.
void emit_codegen_bundle(const NadlDocument& doc, const DatasetProfile& profile, const KnowledgeBase& kb,
                         const std::filesystem::path& out_dir);

/// Writes `content` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace nadl
