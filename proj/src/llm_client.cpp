// SPDX-License-Identifier: Apache-2.0
#include "httplib.h"

#include "nadl/llm_client.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include "nadl/document.hpp"
#include "nadl/error.hpp"
#include "nadl/prompts.hpp"

namespace nadl {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

ojson request_to_json(const ChatRequest& r) {
  return ojson{{"model_id", r.model_id},
               {"system_text", r.system_text},
               {"user_text", r.user_text},
               {"response_schema_id", r.response_schema_id},
               {"temperature", r.temperature},
               {"max_output_tokens", r.max_output_tokens}};
}

ChatRequest request_from_json(const json& v) {
  try {
    ChatRequest r;
    r.model_id = v.at("model_id").get<std::string>();
    r.system_text = v.at("system_text").get<std::string>();
    r.user_text = v.at("user_text").get<std::string>();
    r.response_schema_id = v.at("response_schema_id").get<std::string>();
    r.temperature = v.at("temperature").get<double>();
    r.max_output_tokens = v.at("max_output_tokens").get<int>();
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::Schema, std::string("bad chat request record: ") + e.what());
  }
}

std::string transcript_entry_to_line(const TranscriptEntry& e) {
  ojson v{{"request", request_to_json(e.request)},
          {"response_text", e.response_text},
          {"latency_ms", e.latency_ms},
          {"attempt", e.attempt},
          {"http_status", e.http_status},
          {"error", e.error}};
  return v.dump();
}

std::vector<TranscriptEntry> load_transcript(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot read transcript '" + path.string() + "'");
  std::vector<TranscriptEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto v = json::parse(line);
      TranscriptEntry e;
      e.request = request_from_json(v.at("request"));
      e.response_text = v.at("response_text").get<std::string>();
      e.latency_ms = v.value("latency_ms", std::int64_t{0});
      e.attempt = v.value("attempt", 1);
      e.http_status = v.value("http_status", 0);
      e.error = v.value("error", std::string());
      if (e.attempt < 1) fail(ErrorCode::Schema, "attempt must be >= 1");
      out.push_back(std::move(e));
    } catch (const json::exception& e) {
      fail(ErrorCode::Schema, path.filename().string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::Schema, path.filename().string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---- HTTP transport ----

HttpChatTransport::HttpChatTransport(std::string endpoint, std::string api_key, int timeout_s)
    : api_key_(std::move(api_key)), timeout_s_(timeout_s) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(endpoint, m, url)) {
    fail(ErrorCode::InvalidArgument, "endpoint '" + endpoint + "' is not an http(s) URL");
  }
  scheme_host_ = m[1];
  base_path_ = m[2];
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
}

TransportResult HttpChatTransport::send(const ChatRequest& request) {
  json body{{"model", request.model_id},
            {"messages",
             json::array({json{{"role", "system"}, {"content", request.system_text}},
                          json{{"role", "user"}, {"content", request.user_text}}})},
            {"temperature", request.temperature},
            {"max_tokens", request.max_output_tokens}};
  if (!request.response_schema_id.empty()) body["response_format"] = json{{"type", "json_object"}};

  httplib::Client client(scheme_host_);
  client.set_connection_timeout(timeout_s_);
  client.set_read_timeout(timeout_s_);
  client.set_bearer_token_auth(api_key_);

  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(base_path_ + "/chat/completions", body.dump(), "application/json");
  TransportResult out;
  out.latency_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  if (!res) {
    out.status = TransportResult::Status::Failure;
    out.text = "connection failed: " + httplib::to_string(res.error());
    return out;
  }
  out.http_status = res->status;
  if (res->status == 401 || res->status == 403) {
    out.status = TransportResult::Status::AuthFailure;
    out.text = "credential rejected (HTTP " + std::to_string(res->status) + ")";
    return out;
  }
  if (res->status != 200) {
    out.status = TransportResult::Status::Failure;
    out.text = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500);
    return out;
  }
  try {
    const auto v = json::parse(res->body);
    out.text = v.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    out.status = TransportResult::Status::Failure;
    out.text = std::string("unreadable chat-completion response: ") + e.what();
  }
  return out;
}

std::shared_ptr<ChatTransport> make_http_transport(const std::string& endpoint, const std::string& api_key_env,
                                                   int timeout_s) {
  const char* key = std::getenv(api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    fail(ErrorCode::Auth, "credential environment variable " + api_key_env + " is not set");
  }
  std::string url = endpoint;
  if (const char* override_url = std::getenv("NADL_LLM_ENDPOINT"); override_url && *override_url) url = override_url;
  return std::make_shared<HttpChatTransport>(url, key, timeout_s);
}

// ---- replay ----

ReplayTransport::ReplayTransport(std::vector<TranscriptEntry> entries)
    : entries_(std::move(entries)), used_(entries_.size(), false) {}

std::shared_ptr<ReplayTransport> ReplayTransport::from_file(const std::filesystem::path& path) {
  return std::make_shared<ReplayTransport>(load_transcript(path));
}

TransportResult ReplayTransport::send(const ChatRequest& request) {
  std::lock_guard lock(mu_);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (used_[i] || !(entries_[i].request == request)) continue;
    used_[i] = true;
    const auto& e = entries_[i];
    TransportResult out;
    out.http_status = e.http_status;
    out.latency_ms = e.latency_ms;
    if (e.ok()) {
      out.text = e.response_text;
    } else {
      out.status = (e.http_status == 401 || e.http_status == 403) ? TransportResult::Status::AuthFailure
                                                                 : TransportResult::Status::Failure;
      out.text = e.error;
    }
    return out;
  }
  fail(ErrorCode::Transport, "replay: no recorded exchange matches the request (schema '" +
                                 request.response_schema_id + "', model '" + request.model_id + "')");
}

// ---- schemas ----

const std::vector<std::string>& registered_schemas() {
  static const std::vector<std::string> ids{"candidate-set", "nadl-document", "query-list"};
  return ids;
}

namespace {

void check_string_list(const json& v, const std::string& where, std::vector<std::string>& diags) {
  if (!v.is_array()) {
    diags.push_back(where + " must be an array of strings");
    return;
  }
  for (const auto& s : v) {
    if (!s.is_string()) {
      diags.push_back(where + " must contain only strings");
      return;
    }
  }
}

void check_keys(const json& v, const std::string& where, const std::vector<std::string>& required,
                const std::vector<std::string>& optional, std::vector<std::string>& diags) {
  for (const auto& k : required) {
    if (!v.contains(k)) diags.push_back(where + ": missing field '" + k + "'");
  }
  for (const auto& [k, _] : v.items()) {
    if (std::find(required.begin(), required.end(), k) == required.end() &&
        std::find(optional.begin(), optional.end(), k) == optional.end()) {
      diags.push_back(where + ": unknown field '" + k + "'");
    }
  }
}

void check_query_list(const json& v, std::vector<std::string>& diags) {
  if (!v.is_object()) {
    diags.push_back("top level must be an object with a 'queries' array");
    return;
  }
  check_keys(v, "query-list", {"queries"}, {}, diags);
  if (!v.contains("queries")) return;
  const auto& qs = v.at("queries");
  if (!qs.is_array() || qs.empty()) {
    diags.push_back("'queries' must be a non-empty array");
    return;
  }
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const auto& q = qs[i];
    const std::string where = "queries[" + std::to_string(i) + "]";
    if (!q.is_object()) {
      diags.push_back(where + " must be an object");
      continue;
    }
    check_keys(q, where, {}, {"text_terms", "required_tags", "category_filter", "purpose"}, diags);
    bool any = false;
    if (q.contains("text_terms")) {
      check_string_list(q.at("text_terms"), where + ".text_terms", diags);
      any = any || (q.at("text_terms").is_array() && !q.at("text_terms").empty());
    }
    if (q.contains("required_tags")) {
      check_string_list(q.at("required_tags"), where + ".required_tags", diags);
      any = any || (q.at("required_tags").is_array() && !q.at("required_tags").empty());
    }
    if (q.contains("category_filter") && !q.at("category_filter").is_null()) {
      const auto& c = q.at("category_filter");
      if (!c.is_string() || (c != "Backbone" && c != "Neck" && c != "Head")) {
        diags.push_back(where + ".category_filter must be null, \"Backbone\", \"Neck\" or \"Head\"");
      }
      any = true;
    }
    if (q.contains("purpose") && !q.at("purpose").is_string()) diags.push_back(where + ".purpose must be a string");
    if (!any) diags.push_back(where + " is empty (needs text_terms, required_tags or category_filter)");
  }
}

void check_candidate_set(const json& v, std::vector<std::string>& diags) {
  if (!v.is_object()) {
    diags.push_back("top level must be an object");
    return;
  }
  check_keys(v, "candidate-set", {"backbone_choice", "neck_choices", "head_choice", "auxiliary", "rationale"}, {},
             diags);
  for (const char* k : {"backbone_choice", "head_choice"}) {
    if (v.contains(k) && !v.at(k).is_string()) diags.push_back(std::string(k) + " must be a string");
  }
  for (const char* k : {"neck_choices", "auxiliary"}) {
    if (v.contains(k)) check_string_list(v.at(k), k, diags);
  }
  if (v.contains("rationale")) {
    const auto& r = v.at("rationale");
    if (!r.is_object()) {
      diags.push_back("rationale must be an object mapping module id to text");
    } else {
      for (const auto& [k, s] : r.items()) {
        if (!s.is_string()) diags.push_back("rationale['" + k + "'] must be a string");
      }
    }
  }
}

}  // namespace

std::vector<std::string> check_schema(std::string_view schema_id, const json& value) {
  std::vector<std::string> diags;
  if (schema_id == "query-list") {
    check_query_list(value, diags);
  } else if (schema_id == "candidate-set") {
    check_candidate_set(value, diags);
  } else if (schema_id == "nadl-document") {
    try {
      parse_nadl(value.dump());
    } catch (const Error& e) {
      diags.push_back(e.what());
    }
  } else {
    fail(ErrorCode::InvalidArgument, "unregistered response schema '" + std::string(schema_id) + "'");
  }
  return diags;
}

std::string strip_code_fence(std::string_view text) {
  static const std::regex fenced(R"(^\s*```[A-Za-z0-9_-]*\s*\n([\s\S]*?)\n?```\s*$)");
  const std::string s(text);
  std::smatch m;
  if (std::regex_match(s, m, fenced)) return m[1];
  return s;
}

// ---- client ----

LlmClient::LlmClient(std::shared_ptr<ChatTransport> transport, ClientOptions options, Sleeper sleeper)
    : transport_(std::move(transport)), options_(options), sleeper_(std::move(sleeper)) {
  if (!transport_) fail(ErrorCode::InvalidArgument, "LlmClient needs a transport");
  if (options_.max_attempts < 1) fail(ErrorCode::InvalidArgument, "max_attempts must be >= 1");
  if (!sleeper_) {
    if (transport_->is_network()) {
      sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    } else {
      sleeper_ = [](std::chrono::milliseconds) {};
    }
  }
}

void LlmClient::set_transcript_path(std::filesystem::path path) {
  std::lock_guard lock(mu_);
  transcript_path_ = std::move(path);
}

void LlmClient::log(const TranscriptEntry& entry) {
  std::lock_guard lock(mu_);
  transcript_.push_back(entry);
  if (transcript_path_) {
    std::ofstream out(*transcript_path_, std::ios::app);
    if (!out) fail(ErrorCode::Io, "cannot append to transcript '" + transcript_path_->string() + "'");
    out << transcript_entry_to_line(entry) << "\n";
  }
}

std::string LlmClient::complete(const ChatRequest& request) {
  if (request.model_id.empty()) fail(ErrorCode::InvalidArgument, "model_id must not be empty");
  if (!(request.temperature >= 0.0 && request.temperature <= 2.0)) {
    fail(ErrorCode::InvalidArgument, "temperature must be in [0, 2]");
  }
  std::string last_error;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    {
      std::lock_guard lock(mu_);
      if (calls_ >= options_.max_calls) {
        fail(ErrorCode::BudgetExceeded, "call budget of " + std::to_string(options_.max_calls) + " exhausted");
      }
      ++calls_;
    }
    const auto result = transport_->send(request);
    TranscriptEntry entry;
    entry.request = request;
    entry.latency_ms = result.latency_ms;
    entry.attempt = attempt;
    entry.http_status = result.http_status;
    if (result.status == TransportResult::Status::Ok) {
      entry.response_text = result.text;
      log(entry);
      return result.text;
    }
    entry.error = result.text.empty() ? "transport failure" : result.text;
    log(entry);
    if (result.status == TransportResult::Status::AuthFailure) fail(ErrorCode::Auth, entry.error);
    last_error = entry.error;
    if (attempt < options_.max_attempts) sleeper_(options_.backoff * (1LL << (attempt - 1)));
  }
  fail(ErrorCode::Transport,
       "giving up after " + std::to_string(options_.max_attempts) + " attempts: " + last_error);
}

StructuredResponse LlmClient::complete_structured(const ChatRequest& request) {
  if (request.response_schema_id.empty()) fail(ErrorCode::InvalidArgument, "request names no response schema");
  check_schema(request.response_schema_id, json::object());  // rejects unregistered ids up front

  auto attempt_parse = [&](const std::string& raw, std::vector<std::string>& diags) -> std::optional<json> {
    json value;
    try {
      value = json::parse(strip_code_fence(raw));
    } catch (const json::parse_error& e) {
      diags.push_back(std::string("response is not valid JSON: ") + e.what());
      return std::nullopt;
    }
    diags = check_schema(request.response_schema_id, value);
    if (!diags.empty()) return std::nullopt;
    return value;
  };

  const auto first = complete(request);
  std::vector<std::string> diags;
  if (auto value = attempt_parse(first, diags)) return {*value, 1, first};

  std::string joined;
  for (const auto& d : diags) joined += "- " + d + "\n";
  ChatRequest repair = request;
  repair.user_text = render_prompt("repair", {{"original_request", request.user_text},
                                              {"previous_response", first},
                                              {"diagnostics", joined},
                                              {"schema_id", request.response_schema_id}});
  const auto second = complete(repair);
  std::vector<std::string> diags2;
  if (auto value = attempt_parse(second, diags2)) return {*value, 2, second};

  std::string msg = "response violates schema '" + request.response_schema_id + "' after repair";
  if (!diags2.empty()) msg += ": " + diags2.front();
  fail(ErrorCode::SchemaViolation, msg);
}

std::vector<TranscriptEntry> LlmClient::transcript() const {
  std::lock_guard lock(mu_);
  return transcript_;
}

int LlmClient::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

}  // namespace nadl
