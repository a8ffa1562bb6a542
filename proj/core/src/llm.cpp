#include "mmreact/llm.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "http_client.hpp"
#include "mmreact/error.hpp"

namespace mmreact {

void to_json(nlohmann::json& j, const LlmInput& input) {
  j = nlohmann::json::array();
  for (const auto& s : input.segments) j.push_back({{"role", to_string(s.role)}, {"content", s.text}});
}

// ---------------------------------------------------------------------------
// Script parsing

namespace {

std::string_view ltrim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  return s;
}

std::string_view rtrim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void script_error(std::size_t line, const std::string& what) {
  throw Error(Errc::parse_error, "script line " + std::to_string(line) + ": " + what);
}

bool consume_word(std::string_view& s, std::string_view word) {
  s = ltrim(s);
  if (!s.starts_with(word)) return false;
  if (s.size() > word.size() && !std::isspace(static_cast<unsigned char>(s[word.size()])) &&
      word != "<<<") {
    return false;
  }
  s.remove_prefix(word.size());
  return true;
}

std::string parse_quoted(std::string_view& s, std::size_t line) {
  s = ltrim(s);
  if (s.empty() || s.front() != '"') script_error(line, "expected a quoted string after 'contains'");
  std::string out;
  std::size_t i = 1;
  for (; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '\\' && i + 1 < s.size()) {
      const char next = s[++i];
      if (next == 'n') out.push_back('\n');
      else out.push_back(next);
    } else if (c == '"') {
      break;
    } else {
      out.push_back(c);
    }
  }
  if (i >= s.size()) script_error(line, "unterminated quoted string");
  s.remove_prefix(i + 1);
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

}  // namespace

std::vector<ScriptedRule> parse_script(std::string_view text) {
  const auto lines = split_lines(text);
  std::vector<ScriptedRule> rules;

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    std::string_view rest = ltrim(lines[i]);
    if (rest.empty() || rest.front() == '#') continue;

    if (!consume_word(rest, "WHEN")) script_error(lineno, "expected WHEN");
    ScriptedRule rule;
    if (consume_word(rest, "contains")) {
      rule.matcher = ContainsMatcher{parse_quoted(rest, lineno)};
    } else if (consume_word(rest, "call")) {
      rest = ltrim(rest);
      std::size_t digits = 0;
      while (digits < rest.size() && std::isdigit(static_cast<unsigned char>(rest[digits]))) ++digits;
      if (digits == 0) script_error(lineno, "expected a call number after 'call'");
      const auto n = std::stoull(std::string(rest.substr(0, digits)));
      if (n == 0) script_error(lineno, "call numbers start at 1");
      rule.matcher = NthCallMatcher{static_cast<std::size_t>(n)};
      rest.remove_prefix(digits);
    } else {
      script_error(lineno, "expected 'contains \"...\"' or 'call N' after WHEN");
    }
    if (!consume_word(rest, "RESPOND")) script_error(lineno, "expected RESPOND");
    if (!consume_word(rest, "<<<")) script_error(lineno, "expected <<< to open the response body");

    if (auto close = rest.find(">>>"); close != std::string_view::npos) {
      if (!rtrim(rest.substr(close + 3)).empty()) script_error(lineno, "text after >>>");
      rule.response = std::string(rest.substr(0, close));
    } else {
      std::string body;
      bool first = true;
      if (!rtrim(rest).empty()) {
        body = std::string(rest);
        first = false;
      }
      bool closed = false;
      for (++i; i < lines.size(); ++i) {
        const auto line = lines[i];
        if (rtrim(line) == ">>>") {
          closed = true;
          break;
        }
        if (!first) body += '\n';
        body += line;
        first = false;
      }
      if (!closed) script_error(lineno, "response body is never closed with >>>");
      rule.response = std::move(body);
    }
    rules.push_back(std::move(rule));
  }
  return rules;
}

std::vector<ScriptedRule> load_script(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(Errc::parse_error, "cannot read script " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_script(ss.str());
}

// ---------------------------------------------------------------------------
// Scripted backend

namespace {

std::string expand(std::string_view response, std::string_view last_segment) {
  static constexpr std::string_view kPlaceholder = "{{observation}}";
  if (response.find(kPlaceholder) == std::string_view::npos) return std::string(response);
  std::string_view body = last_segment;
  if (body.starts_with("Observation from")) {
    const auto nl = body.find('\n');
    body = nl == std::string_view::npos ? std::string_view{} : body.substr(nl + 1);
  }
  std::string out;
  std::size_t pos = 0;
  for (auto hit = response.find(kPlaceholder); hit != std::string_view::npos;
       hit = response.find(kPlaceholder, pos)) {
    out.append(response.substr(pos, hit - pos));
    out.append(body);
    pos = hit + kPlaceholder.size();
  }
  out.append(response.substr(pos));
  return out;
}

}  // namespace

std::string ScriptedBackend::complete(const LlmInput& input) {
  if (input.segments.empty()) throw Error(Errc::invalid_message, "LLM input is empty");
  std::size_t call = 0;
  {
    std::lock_guard lock(mutex_);
    call = ++calls_;
  }
  const std::string& last = input.segments.back().text;
  for (const auto& rule : rules_) {
    const bool hit = std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, ContainsMatcher>) {
            return last.find(m.needle) != std::string::npos;
          } else {
            return m.index == call;
          }
        },
        rule.matcher);
    if (hit) return expand(rule.response, last);
  }
  throw Error(Errc::no_rule_matched, "no scripted rule matched call " + std::to_string(call));
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

void ScriptedBackend::reset() {
  std::lock_guard lock(mutex_);
  calls_ = 0;
}

// ---------------------------------------------------------------------------
// Remote backend

std::string RemoteChatBackend::request_body(const LlmInput& input) const {
  nlohmann::json body{{"model", config_.model},
                      {"messages", input},
                      {"temperature", config_.temperature}};
  if (!config_.stop.empty()) body["stop"] = config_.stop;
  return body.dump();
}

std::string RemoteChatBackend::complete(const LlmInput& input) {
  if (input.segments.empty()) throw Error(Errc::invalid_message, "LLM input is empty");
  const auto body = request_body(input);
  detail::Headers headers;
  if (!config_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + config_.api_key);

  auto backoff = config_.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    detail::HttpResult res;
    try {
      res = detail::post_json(config_.endpoint, body, headers, config_.timeout_seconds);
    } catch (const Error& e) {
      if (e.code() != Errc::transport_error) throw;
      last_error = e.what();
      continue;
    }
    if (res.status == 429 || res.status >= 500) {
      last_error = "HTTP " + std::to_string(res.status) + ": " + detail::excerpt(res.body);
      continue;
    }
    if (res.status != 200) {
      throw Error(Errc::transport_error,
                  "HTTP " + std::to_string(res.status) + ": " + detail::excerpt(res.body));
    }
    try {
      const auto doc = nlohmann::json::parse(res.body);
      return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::transport_error,
                  std::string("malformed chat completion: ") + e.what() + " in " +
                      detail::excerpt(res.body));
    }
  }
  throw Error(Errc::transport_error, "giving up after " + std::to_string(config_.max_retries + 1) +
                                         " attempts: " + last_error);
}

}  // namespace mmreact
