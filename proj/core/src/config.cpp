#include "mmreact/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mmreact/error.hpp"

namespace mmreact {

namespace pt = boost::property_tree;

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(Errc::invalid_config, what); }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) config_error(key + ": not a number: '" + value + "'");
  return out;
}

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& value) {
  std::filesystem::path p(value);
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void parse_llm(AppConfig& c, const pt::ptree& section, const std::filesystem::path& base) {
  std::string api_key_env = "OPENAI_API_KEY";
  for (const auto& [key, node] : section) {
    const auto value = trim(node.data());
    if (key == "backend") {
      if (value == "scripted") c.backend = AppConfig::Backend::scripted;
      else if (value == "remote") c.backend = AppConfig::Backend::remote;
      else config_error("llm.backend must be 'scripted' or 'remote', got '" + value + "'");
    } else if (key == "script") {
      c.script = resolve_path(base, value);
    } else if (key == "endpoint") {
      c.remote_llm.endpoint = value;
    } else if (key == "model") {
      c.remote_llm.model = value;
    } else if (key == "api_key_env") {
      api_key_env = value;
    } else if (key == "temperature") {
      c.remote_llm.temperature = parse_number<double>("llm.temperature", value);
    } else if (key == "max_retries") {
      c.remote_llm.max_retries = parse_number<int>("llm.max_retries", value);
    } else if (key == "timeout_seconds") {
      c.remote_llm.timeout_seconds = parse_number<int>("llm.timeout_seconds", value);
    } else if (key == "watchword") {
      c.watchword = value;
    } else {
      config_error("unknown key llm." + key);
    }
  }
  if (const char* k = std::getenv(api_key_env.c_str())) c.remote_llm.api_key = k;
}

void parse_experts(AppConfig& c, const pt::ptree& section, const std::filesystem::path& base) {
  for (const auto& [key, node] : section) {
    const auto value = trim(node.data());
    if (key == "enabled") {
      c.experts = split_list(value);
    } else if (key == "fixtures") {
      c.fixtures = resolve_path(base, value);
    } else if (key == "search_corpus") {
      c.search_corpus = resolve_path(base, value);
    } else if (key == "tag_threshold") {
      c.tag_threshold = parse_number<double>("experts.tag_threshold", value);
    } else if (key == "examples_per_expert") {
      c.examples_per_expert = parse_number<std::size_t>("experts.examples_per_expert", value);
    } else if (key.starts_with("endpoint.")) {
      c.remote_experts[key.substr(9)].url = value;
    } else if (key.starts_with("token.")) {
      c.remote_experts[key.substr(6)].bearer_token = value;
    } else if (key.starts_with("timeout.")) {
      c.remote_experts[key.substr(8)].timeout_seconds = parse_number<int>("experts." + key, value);
    } else {
      config_error("unknown key experts." + key);
    }
  }
}

void parse_limits(AppConfig& c, const pt::ptree& section) {
  for (const auto& [key, node] : section) {
    const auto value = trim(node.data());
    if (key == "max_steps") {
      c.limits.max_steps = parse_number<int>("limits.max_steps", value);
    } else if (key == "token_budget") {
      c.limits.token_budget = parse_number<std::size_t>("limits.token_budget", value);
    } else if (key == "reserved_for_completion") {
      c.limits.reserved_for_completion =
          parse_number<std::size_t>("limits.reserved_for_completion", value);
    } else {
      config_error("unknown key limits." + key);
    }
  }
}

void parse_storage(AppConfig& c, const pt::ptree& section, const std::filesystem::path& base) {
  for (const auto& [key, node] : section) {
    const auto value = trim(node.data());
    if (key == "data_dir") c.data_dir = resolve_path(base, value);
    else if (key == "prefix_template") c.prefix_template = resolve_path(base, value);
    else config_error("unknown key storage." + key);
  }
}

void parse_service(AppConfig& c, const pt::ptree& section) {
  for (const auto& [key, node] : section) {
    const auto value = trim(node.data());
    if (key == "host") c.host = value;
    else if (key == "port") c.port = parse_number<int>("service.port", value);
    else if (key == "token") c.service_token = value;
    else config_error("unknown key service." + key);
  }
}

}  // namespace

std::string_view to_string(AppConfig::Backend backend) noexcept {
  return backend == AppConfig::Backend::remote ? "remote" : "scripted";
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    auto item = trim(text.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    start = end + 1;
  }
  return out;
}

AppConfig AppConfig::parse(std::string_view ini_text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(ini_text)};
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    config_error(std::string("malformed config: ") + e.what());
  }

  AppConfig c;
  for (const auto& [name, section] : tree) {
    if (section.empty() && !section.data().empty()) config_error("key outside a section: " + name);
    if (name == "llm") parse_llm(c, section, base_dir);
    else if (name == "experts") parse_experts(c, section, base_dir);
    else if (name == "limits") parse_limits(c, section);
    else if (name == "storage") parse_storage(c, section, base_dir);
    else if (name == "service") parse_service(c, section);
    else config_error("unknown config section [" + name + "]");
  }
  return c;
}

AppConfig AppConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) config_error("cannot read config file " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), file.parent_path());
}

AppConfig AppConfig::resolve(const std::optional<std::filesystem::path>& explicit_path) {
  if (explicit_path) return load(*explicit_path);
  if (const char* env = std::getenv(std::string(kConfigEnvVar).c_str()); env && *env) return load(env);
  return AppConfig{};
}

void AppConfig::validate() const {
  limits.validate();
  if (watchword.empty()) config_error("watchword must not be empty");
  if (experts.empty()) config_error("no experts enabled");
  const auto& known = builtin_expert_names();
  for (const auto& name : experts) {
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      config_error("unknown expert '" + name + "' in experts.enabled");
    }
  }
  for (const auto& [name, endpoint] : remote_experts) {
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      config_error("remote endpoint for unknown expert '" + name + "'");
    }
    if (endpoint.url.empty()) config_error("remote expert '" + name + "' has no endpoint");
  }
  if (backend == Backend::scripted && script.empty()) {
    config_error("the scripted backend needs a script file");
  }
  if (backend == Backend::remote && remote_llm.endpoint.empty()) {
    config_error("the remote backend needs an endpoint");
  }
  if (tag_threshold < 0.0 || tag_threshold > 1.0) config_error("tag_threshold must lie in [0, 1]");
  if (port < 0 || port > 65535) config_error("service port out of range");
}

std::shared_ptr<LlmBackend> make_backend(const AppConfig& config) {
  if (config.backend == AppConfig::Backend::remote) {
    return std::make_shared<RemoteChatBackend>(config.remote_llm);
  }
  try {
    return std::make_shared<ScriptedBackend>(load_script(config.script));
  } catch (const Error& e) {
    config_error(e.what());
  }
}

std::shared_ptr<const ExpertRegistry> make_registry(const AppConfig& config) {
  ExpertEnvironment env;
  if (!config.fixtures.empty()) env.fixtures = std::make_shared<FixtureStore>(config.fixtures);
  if (!config.search_corpus.empty()) {
    try {
      env.search = std::make_shared<SearchCorpus>(SearchCorpus::load(config.search_corpus));
    } catch (const Error& e) {
      config_error(e.what());
    }
  }
  env.remote = config.remote_experts;
  return std::make_shared<const ExpertRegistry>(make_builtin_registry(env, config.experts));
}

EngineOptions make_engine_options(const AppConfig& config) {
  EngineOptions options;
  if (!config.prefix_template.empty()) {
    options.prefix.template_text = load_prefix_template(config.prefix_template);
  }
  options.prefix.watchword = config.watchword;
  options.prefix.examples_per_expert = config.examples_per_expert;
  options.serialize.tag_threshold = config.tag_threshold;
  return options;
}

}  // namespace mmreact
