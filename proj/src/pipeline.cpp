// SPDX-License-Identifier: Apache-2.0
#include "nadl/pipeline.hpp"

#include "nadl/error.hpp"

namespace nadl {

AgentOptions agent_options_from(const PipelineConfig& config) {
  AgentOptions o;
  o.thresholds = config.thresholds;
  o.max_iterations = config.max_iterations;
  o.assembly.param_budget = config.param_budget;
  o.assembly.task = config.task;
  o.assembly.created_at = config.created_at;
  o.assembly.generator = config.reasoner == "llm" ? Generator::Llm : Generator::Rule;
  return o;
}

std::shared_ptr<LlmClient> make_llm_client(const LlmSettings& s) {
  std::shared_ptr<ChatTransport> transport;
  if (!s.replay_path.empty()) {
    transport = ReplayTransport::from_file(s.replay_path);
  } else {
    transport = make_http_transport(s.endpoint, s.api_key_env, s.timeout_s);
  }
  ClientOptions options;
  options.max_attempts = s.max_attempts;
  options.max_calls = s.max_calls;
  options.backoff = std::chrono::milliseconds(s.backoff_ms);
  auto client = std::make_shared<LlmClient>(std::move(transport), options);
  if (!s.record_path.empty()) client->set_transcript_path(s.record_path);
  return client;
}

SynthesisResult synthesize(const DatasetProfile& profile, const KnowledgeBase& kb, const PipelineConfig& config) {
  const auto options = agent_options_from(config);
  std::unique_ptr<Reasoner> reasoner;
  if (config.reasoner == "llm") {
    reasoner = std::make_unique<LlmReasoner>(kb, options, make_llm_client(config.llm), config.llm);
  } else if (config.reasoner == "rule") {
    reasoner = std::make_unique<RuleReasoner>(kb, options);
  } else {
    fail(ErrorCode::InvalidArgument, "unknown reasoner '" + config.reasoner + "'");
  }
  auto agent = run_agent(profile, kb, *reasoner, options);
  if (config.reasoner == "llm") {
    agent.trace.model_id = config.llm.model_id;
    agent.trace.temperature = config.llm.temperature;
  }
  SynthesisResult out{std::move(agent.doc), std::move(agent.trace), {}};
  out.report = validate(out.doc, kb);
  return out;
}

}  // namespace nadl
