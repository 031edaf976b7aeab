// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>

#include "nadl/architect.hpp"
#include "nadl/config.hpp"
#include "nadl/llm_client.hpp"
#include "nadl/validator.hpp"

namespace nadl {

AgentOptions agent_options_from(const PipelineConfig& config);

/// Client for the LLM reasoner: replay when llm.replay_path is set,
/// otherwise the live endpoint (Error{Auth} without a credential). Records
/// to llm.record_path when set.
std::shared_ptr<LlmClient> make_llm_client(const LlmSettings& settings);

struct SynthesisResult {
  NadlDocument doc;
  ArchitectTrace trace;
  ValidationReport report;
};

/// Runs the agent with the reasoner named by config.reasoner.
SynthesisResult synthesize(const DatasetProfile& profile, const KnowledgeBase& kb, const PipelineConfig& config);

}  // namespace nadl
