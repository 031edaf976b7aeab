// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace nadl {

struct ChatRequest {
  std::string model_id;
  std::string system_text;
  std::string user_text;
  std::string response_schema_id;  // empty for free text
  double temperature = 0.0;
  int max_output_tokens = 4096;

  bool operator==(const ChatRequest&) const = default;
};

nlohmann::ordered_json request_to_json(const ChatRequest& r);
/// Throws Error{Schema}.
ChatRequest request_from_json(const nlohmann::json& v);

/// One network attempt. Failed attempts are logged too, with `error` set.
struct TranscriptEntry {
  ChatRequest request;
  std::string response_text;
  std::int64_t latency_ms = 0;
  int attempt = 1;  // 1-based attempt number within one complete() call
  int http_status = 0;
  std::string error;

  bool ok() const { return error.empty(); }
};

std::string transcript_entry_to_line(const TranscriptEntry& e);
/// Reads a line-delimited transcript log. Throws Error{Io} or Error{Schema}.
std::vector<TranscriptEntry> load_transcript(const std::filesystem::path& path);

struct TransportResult {
  enum class Status { Ok, Failure, AuthFailure };
  Status status = Status::Ok;
  std::string text;  // response content, or the failure description
  int http_status = 0;
  std::int64_t latency_ms = 0;
};

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual TransportResult send(const ChatRequest& request) = 0;
  /// False for transports that never touch the network (replay, scripted).
  virtual bool is_network() const { return true; }
};

/// Chat-completions over HTTP(S): POST <endpoint>/chat/completions with a
/// bearer credential.
class HttpChatTransport : public ChatTransport {
 public:
  HttpChatTransport(std::string endpoint, std::string api_key, int timeout_s = 120);
  TransportResult send(const ChatRequest& request) override;

 private:
  std::string scheme_host_;
  std::string base_path_;
  std::string api_key_;
  int timeout_s_;
};

/// Reads the credential from `api_key_env` (and the endpoint override from
/// NADL_LLM_ENDPOINT when set). Throws Error{Auth} when the credential is
/// missing, before anything touches the network.
std::shared_ptr<ChatTransport> make_http_transport(const std::string& endpoint, const std::string& api_key_env,
                                                   int timeout_s = 120);

/// Serves responses from a recorded transcript. Requests are matched
/// exactly; repeated identical requests consume entries in recorded order.
class ReplayTransport : public ChatTransport {
 public:
  explicit ReplayTransport(std::vector<TranscriptEntry> entries);
  static std::shared_ptr<ReplayTransport> from_file(const std::filesystem::path& path);

  /// Throws Error{Transport} when no recorded exchange matches.
  TransportResult send(const ChatRequest& request) override;
  bool is_network() const override { return false; }

 private:
  std::mutex mu_;
  std::vector<TranscriptEntry> entries_;
  std::vector<bool> used_;
};

/// Test double answering through a callback.
class ScriptedTransport : public ChatTransport {
 public:
  using Handler = std::function<TransportResult(const ChatRequest&)>;
  explicit ScriptedTransport(Handler handler) : handler_(std::move(handler)) {}
  TransportResult send(const ChatRequest& request) override { return handler_(request); }
  bool is_network() const override { return false; }

 private:
  Handler handler_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct ClientOptions {
  int max_attempts = 4;  // first try plus three retries
  int max_calls = 20;    // network attempts per run
  std::chrono::milliseconds backoff{500};  // doubled after every failed attempt
};

struct StructuredResponse {
  nlohmann::json value;
  int attempt = 1;  // 2 when the repair round trip was needed
  std::string raw_text;
};

/// Response schemas understood by complete_structured.
const std::vector<std::string>& registered_schemas();
/// Diagnostics for `value` against a registered schema; empty means valid.
/// Throws Error{InvalidArgument} for an unregistered schema id.
std::vector<std::string> check_schema(std::string_view schema_id, const nlohmann::json& value);
/// Drops a surrounding markdown code fence, if any.
std::string strip_code_fence(std::string_view text);

/// Thread-safe; the transcript is append-only and writes are serialized.
class LlmClient {
 public:
  LlmClient(std::shared_ptr<ChatTransport> transport, ClientOptions options = {}, Sleeper sleeper = {});

  /// Appends every attempt to this file as it happens.
  void set_transcript_path(std::filesystem::path path);

  /// Throws Error{Transport} after max_attempts consecutive failures,
  /// Error{Auth} on a rejected credential and Error{BudgetExceeded} once
  /// max_calls attempts have been spent.
  std::string complete(const ChatRequest& request);

  /// Parses and schema-checks the response; one repair round trip, then
  /// Error{SchemaViolation}.
  StructuredResponse complete_structured(const ChatRequest& request);

  std::vector<TranscriptEntry> transcript() const;
  int calls() const;

 private:
  void log(const TranscriptEntry& entry);

  std::shared_ptr<ChatTransport> transport_;
  ClientOptions options_;
  Sleeper sleeper_;
  mutable std::mutex mu_;
  std::vector<TranscriptEntry> transcript_;
  std::optional<std::filesystem::path> transcript_path_;
  int calls_ = 0;
};

}  // namespace nadl
