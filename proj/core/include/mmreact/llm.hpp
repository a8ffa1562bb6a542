#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mmreact/llm_input.hpp"

namespace mmreact {

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  // Safe to call concurrently from different sessions.
  virtual std::string complete(const LlmInput& input) = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend

struct ContainsMatcher {
  std::string needle;
  friend bool operator==(const ContainsMatcher&, const ContainsMatcher&) = default;
};
struct NthCallMatcher {
  std::size_t index = 1;  // 1-based
  friend bool operator==(const NthCallMatcher&, const NthCallMatcher&) = default;
};

struct ScriptedRule {
  std::variant<ContainsMatcher, NthCallMatcher> matcher;
  std::string response;

  friend bool operator==(const ScriptedRule&, const ScriptedRule&) = default;
};

// Script format, one rule per block:
//
//   # comment
//   WHEN contains "needle" RESPOND <<<single line>>>
//   WHEN call 2 RESPOND <<<
//   multi-line body
//   >>>
//
// Inside the quoted needle, \" and \\ are escapes. Throws Error{parse_error}
// naming the offending line.
std::vector<ScriptedRule> parse_script(std::string_view text);
std::vector<ScriptedRule> load_script(const std::filesystem::path& file);

// Deterministic stand-in for the LLM.
//
// `contains` rules match against the last segment of the input, i.e. the
// newest user message or observation. `call N` rules fire on exactly the
// N-th completion served by this backend. Rules are tried in order and the
// first match wins. In a response, {{observation}} expands to the last
// segment with its "Observation from ...:" header line removed.
class ScriptedBackend final : public LlmBackend {
 public:
  explicit ScriptedBackend(std::vector<ScriptedRule> rules) : rules_(std::move(rules)) {}

  // Throws Error{no_rule_matched} (the call still counts).
  std::string complete(const LlmInput& input) override;

  std::size_t calls() const;
  void reset();

 private:
  std::vector<ScriptedRule> rules_;
  mutable std::mutex mutex_;
  std::size_t calls_ = 0;
};

// ---------------------------------------------------------------------------
// Remote chat-completions backend

struct RemoteChatConfig {
  // Full URL of the chat-completions endpoint.
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-3.5-turbo";
  std::string api_key;
  double temperature = 0.0;
  std::vector<std::string> stop{"\nObservation from"};
  int max_retries = 2;
  std::chrono::milliseconds initial_backoff{500};
  int timeout_seconds = 60;
};

// Request body {model, messages: [{role, content}], temperature, stop}.
// Transport failures and 429/5xx responses are retried with exponential
// backoff; after that Error{transport_error} is thrown with the status code
// and an excerpt of the body.
class RemoteChatBackend final : public LlmBackend {
 public:
  explicit RemoteChatBackend(RemoteChatConfig config) : config_(std::move(config)) {}

  std::string complete(const LlmInput& input) override;

  // The request document, exposed for tests.
  std::string request_body(const LlmInput& input) const;

 private:
  RemoteChatConfig config_;
};

}  // namespace mmreact
