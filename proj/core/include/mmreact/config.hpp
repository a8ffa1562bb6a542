#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmreact/experts.hpp"
#include "mmreact/llm.hpp"
#include "mmreact/orchestrate.hpp"
#include "mmreact/session.hpp"

namespace mmreact {

inline constexpr std::string_view kConfigEnvVar = "MMREACT_CONFIG";

// INI document with sections [llm], [experts], [limits], [storage] and
// [service]. Relative paths resolve against the config file's directory.
//
//   [llm]
//   backend = scripted | remote
//   script = scripts/walkthrough.script
//   endpoint = https://api.openai.com/v1/chat/completions
//   model = gpt-3.5-turbo
//   api_key_env = OPENAI_API_KEY
//   temperature = 0
//   watchword = Assistant,
//
//   [experts]
//   enabled = image_captioning, object_detection, ...
//   fixtures = fixtures
//   search_corpus = fixtures/search_corpus.json
//   tag_threshold = 0.5
//   examples_per_expert = 2
//   endpoint.ocr = https://vision.example/ocr
//   token.ocr = secret
//
//   [limits]
//   max_steps = 10
//   token_budget = 4096
//   reserved_for_completion = 512
//
//   [storage]
//   data_dir = mmreact-data
//   prefix_template = templates/prefix.txt
//
//   [service]
//   host = 127.0.0.1
//   port = 8080
//   token = shared-bearer-token
struct AppConfig {
  enum class Backend { scripted, remote };

  Backend backend = Backend::scripted;
  std::filesystem::path script;
  RemoteChatConfig remote_llm;
  std::string watchword{"Assistant,"};

  std::vector<std::string> experts = default_expert_names();
  std::filesystem::path fixtures;
  std::filesystem::path search_corpus;
  double tag_threshold = 0.5;
  std::size_t examples_per_expert = 2;
  std::map<std::string, RemoteEndpoint> remote_experts;

  SessionConfig limits;

  std::filesystem::path data_dir{"mmreact-data"};
  std::filesystem::path prefix_template;

  std::string host{"127.0.0.1"};
  int port = 8080;
  std::string service_token;

  // Throws Error{invalid_config}.
  static AppConfig parse(std::string_view ini_text, const std::filesystem::path& base_dir);
  static AppConfig load(const std::filesystem::path& file);
  // explicit_path if given, else $MMREACT_CONFIG, else defaults.
  static AppConfig resolve(const std::optional<std::filesystem::path>& explicit_path);

  void validate() const;
};

std::string_view to_string(AppConfig::Backend backend) noexcept;

// Factories over a validated config.
std::shared_ptr<LlmBackend> make_backend(const AppConfig& config);
std::shared_ptr<const ExpertRegistry> make_registry(const AppConfig& config);
EngineOptions make_engine_options(const AppConfig& config);

// Splits a comma-separated list, trimming whitespace and dropping empties.
std::vector<std::string> split_list(std::string_view text);

}  // namespace mmreact
