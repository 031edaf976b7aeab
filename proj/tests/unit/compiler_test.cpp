// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <regex>

#include "nadl/compiler.hpp"
#include "nadl/error.hpp"
#include "nadl/validator.hpp"
#include "support.hpp"

using namespace nadl;
namespace t = nadl::testing;
namespace fs = std::filesystem;

namespace {

template <typename F>
ErrorCode code_of(F&& f, std::string* what = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (what) *what = e.what();
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::InvalidArgument;
}

NadlDocument chain() {
  NadlDocument d;
  d.metadata.dataset_id = "chain";
  d.input_spec.num_classes = 2;
  d.layers = {{0, {kNetworkInput}, 1, "Conv", {std::int64_t{16}, std::int64_t{3}, std::int64_t{2}}, Role::Backbone},
              {1, {kPrevious}, 1, "Detect", {std::int64_t{2}}, Role::Head}};
  return d;
}

std::vector<Edge> dot_edges(const std::string& dot) {
  std::vector<Edge> out;
  static const std::regex re(R"(n(\d+) -> n(\d+);)");
  for (std::sregex_iterator it(dot.begin(), dot.end(), re), end; it != end; ++it)
    out.push_back({std::stoi((*it)[1]), std::stoi((*it)[2])});
  return out;
}

int dot_nodes(const std::string& dot) {
  static const std::regex re(R"(\n  n\d+ \[label=)");
  return static_cast<int>(std::distance(std::sregex_iterator(dot.begin(), dot.end(), re), std::sregex_iterator()));
}

}  // namespace

TEST(Compiler, GoldensRoundTrip) {
  for (const auto& name : t::golden_names()) {
    const auto doc = t::load_golden(name);
    const auto yaml = compile_to_yaml(doc, t::seed_kb());
    std::string why;
    EXPECT_TRUE(t::graph_identical(parse_yaml_back(yaml, t::seed_kb()), doc, &why)) << name << ": " << why;
  }
}

TEST(Compiler, RandomBlueprintsRoundTrip) {
  std::mt19937_64 rng(20260301);
  for (int i = 0; i < 500; ++i) {
    const auto doc = t::random_blueprint(rng, t::seed_kb());
    const auto yaml = compile_to_yaml(doc, t::seed_kb());
    std::string why;
    ASSERT_TRUE(t::graph_identical(parse_yaml_back(yaml, t::seed_kb()), doc, &why))
        << "blueprint " << i << ": " << why << "\n" << yaml;
  }
}

TEST(Compiler, ParseBackKeepsDatasetId) {
  const auto doc = t::load_golden("rtdetr_fire");
  const auto back = parse_yaml_back(compile_to_yaml(doc, t::seed_kb()), t::seed_kb());
  EXPECT_EQ(back.metadata.dataset_id, doc.metadata.dataset_id);
  EXPECT_EQ(back.input_spec.num_classes, doc.input_spec.num_classes);
}

TEST(Compiler, ChainHeadUsesRelativeRef) {
  const auto yaml = compile_to_yaml(chain(), t::seed_kb());
  const auto head = yaml.substr(yaml.find("head:"));
  EXPECT_NE(head.find("- [-1, 1, Detect, [2]]"), std::string::npos) << yaml;
}

TEST(Compiler, FireBlueprintHasEncoderAndDecoder) {
  const auto yaml = compile_to_yaml(t::load_golden("rtdetr_fire"), t::seed_kb());
  const auto enc = t::seed_kb().find("AIFI_DyT") ? yaml.find("AIFI") : std::string::npos;
  const auto dec = yaml.find("RTDETRDecoder");
  ASSERT_NE(enc, std::string::npos) << yaml;
  ASSERT_NE(dec, std::string::npos);
  EXPECT_LT(enc, dec);
}

TEST(Compiler, NeckBeforeBackboneIsRejected) {
  auto doc = t::load_golden("tiny_detect");
  doc.layers[4].role = Role::Neck;
  std::string what;
  EXPECT_EQ(code_of([&] { compile_to_yaml(doc, t::seed_kb()); }, &what), ErrorCode::Compile);
  EXPECT_NE(what.find("layer 5"), std::string::npos) << what;
}

TEST(Compiler, InvalidDocumentsDoNotCompile) {
  for (const auto& name : t::golden_names()) {
    const auto doc = t::load_golden(name);
    for (const auto& m : t::make_mutants(name, doc, t::load_golden_trace(name), t::seed_kb())) {
      EXPECT_EQ(code_of([&] { compile_to_yaml(m.doc, t::seed_kb()); }), ErrorCode::Compile) << m.label;
    }
  }
}

TEST(Compiler, HandWrittenYaml) {
  const std::string yaml = R"(# dataset: hand  task: detect  generator: rule
nc: 2
backbone:
  - [-1, 1, Conv, [16, 3, 2]]
head:
  - [-1, 1, Detect, [nc]]
)";
  const auto doc = parse_yaml_back(yaml, t::seed_kb());
  ASSERT_EQ(doc.layers.size(), 2u);
  EXPECT_EQ(doc.layers[0].from, std::vector<LayerRef>{kNetworkInput});
  EXPECT_EQ(doc.layers[1].role, Role::Head);
  EXPECT_EQ(doc.input_spec.num_classes, 2);
  EXPECT_TRUE(validate(doc, t::seed_kb()).ok());
}

TEST(Compiler, UnknownTokenNamesTheToken) {
  const std::string yaml = "nc: 2\nbackbone:\n  - [-1, 1, WarpDrive, [16]]\nhead:\n  - [-1, 1, Detect, [2]]\n";
  std::string what;
  EXPECT_EQ(code_of([&] { parse_yaml_back(yaml, t::seed_kb()); }, &what), ErrorCode::Schema);
  EXPECT_NE(what.find("WarpDrive"), std::string::npos);
}

TEST(Compiler, MalformedYaml) {
  EXPECT_EQ(code_of([] { parse_yaml_back("nc: [\nbackbone", t::seed_kb()); }), ErrorCode::Syntax);
  EXPECT_EQ(code_of([] { parse_yaml_back("nc: 2\n", t::seed_kb()); }), ErrorCode::Schema);
}

TEST(Compiler, GraphOfChain) {
  const auto dot = compile_to_graph_export(chain());
  EXPECT_EQ(dot_nodes(dot), 2);
  EXPECT_EQ(dot_edges(dot), (std::vector<Edge>{{0, 1}}));
}

TEST(Compiler, GraphLabelsCarryChannelsWithReport) {
  const auto doc = t::load_golden("tiny_detect");
  const auto report = validate(doc, t::seed_kb());
  EXPECT_EQ(compile_to_graph_export(doc).find("c_out="), std::string::npos);
  const auto dot = compile_to_graph_export(doc, &report);
  EXPECT_NE(dot.find("c_out=256"), std::string::npos);
}

TEST(Compiler, GraphEdgesMatchGraphOf) {
  for (const auto& name : t::golden_names()) {
    const auto doc = t::load_golden(name);
    auto got = dot_edges(compile_to_graph_export(doc));
    auto want = graph_of(doc).edges;
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    EXPECT_EQ(got, want) << name;
    EXPECT_EQ(dot_nodes(compile_to_graph_export(doc)), static_cast<int>(doc.layers.size()));
  }
}

TEST(Compiler, BundleHasFourFiles) {
  t::TempDir dir("bundle");
  const auto doc = t::load_golden("rtdetr_fire");
  const auto out = dir.path() / "bundle";
  emit_codegen_bundle(doc, t::fire_profile(), t::seed_kb(), out);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(out)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  std::vector<std::string> want(kBundleFiles.begin(), kBundleFiles.end());
  std::sort(want.begin(), want.end());
  EXPECT_EQ(names, want);
  const auto prompt = t::read_text(out / "codegen_prompt.txt");
  EXPECT_NE(prompt.find(serialize_nadl(doc)), std::string::npos);
  EXPECT_EQ(t::read_text(out / "blueprint.nadl.json"), serialize_nadl(doc));
}

TEST(Compiler, BundleIsDeterministic) {
  t::TempDir dir("bundle");
  const auto doc = t::load_golden("dense_afpn");
  emit_codegen_bundle(doc, t::neutral_profile(), t::seed_kb(), dir.path() / "a");
  emit_codegen_bundle(doc, t::neutral_profile(), t::seed_kb(), dir.path() / "b");
  emit_codegen_bundle(doc, t::neutral_profile(), t::seed_kb(), dir.path() / "a");
  for (auto name : kBundleFiles) {
    EXPECT_EQ(t::read_text(dir.path() / "a" / std::string(name)), t::read_text(dir.path() / "b" / std::string(name)))
        << name;
  }
}

TEST(Compiler, BundleRefusesInvalidDocument) {
  t::TempDir dir("bundle");
  auto doc = t::load_golden("tiny_detect");
  doc.layers[3].from = {0, 2};
  EXPECT_EQ(code_of([&] { emit_codegen_bundle(doc, t::neutral_profile(), t::seed_kb(), dir.path() / "x"); }),
            ErrorCode::Compile);
  EXPECT_FALSE(fs::exists(dir.path() / "x"));
}

TEST(Compiler, TrainCommandMentionsModelFile) {
  EXPECT_NE(suggested_train_command(t::load_golden("tiny_detect")).find("yaml"), std::string::npos);
}

TEST(Compiler, AtomicWrite) {
  t::TempDir dir("atomic");
  const auto p = dir.path() / "f.txt";
  write_file_atomic(p, "one");
  write_file_atomic(p, "two");
  EXPECT_EQ(t::read_text(p), "two");
  std::size_t count = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path())) ++count;
  EXPECT_EQ(count, 1u);
}
