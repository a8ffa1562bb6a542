#include "mmreact/actionparse.hpp"

#include <algorithm>
#include <cctype>
#include <utility>

#include "mmreact/error.hpp"

namespace mmreact {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool has_alnum(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || (static_cast<unsigned char>(c) & 0x80);
  });
}

std::optional<std::string> as_query(std::string_view s) {
  s = trim(s);
  if (s.empty() || !has_alnum(s)) return std::nullopt;
  return std::string(s);
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// A watchword counts only at the start of a line or after a sentence
// terminator followed by whitespace.
bool anchored(std::string_view text, std::size_t pos) {
  std::size_t i = pos;
  while (i > 0 && (text[i - 1] == ' ' || text[i - 1] == '\t')) --i;
  if (i == 0 || text[i - 1] == '\n' || text[i - 1] == '\r') return true;
  if (i == pos) return false;
  const char prev = text[i - 1];
  return prev == '.' || prev == '!' || prev == '?';
}

std::vector<std::size_t> watchword_positions(std::string_view text, std::string_view watchword) {
  std::vector<std::size_t> out;
  for (std::size_t pos = text.find(watchword); pos != std::string_view::npos;
       pos = text.find(watchword, pos + 1)) {
    if (anchored(text, pos)) out.push_back(pos);
  }
  return out;
}

struct BracketToken {
  std::size_t open;   // index of '<'
  std::size_t close;  // index of '>'
};

std::optional<BracketToken> find_bracket(std::string_view s, std::size_t from = 0) {
  for (std::size_t open = s.find('<', from); open != std::string_view::npos;
       open = s.find('<', open + 1)) {
    const auto close = s.find_first_of("<>\n", open + 1);
    if (close == std::string_view::npos) return std::nullopt;
    if (s[close] == '>' && close > open + 1) return BracketToken{open, close};
  }
  return std::nullopt;
}

struct PathHit {
  std::size_t pos;
  std::string_view path;
};

std::optional<PathHit> find_known_path(std::string_view s,
                                       const std::set<std::string, std::less<>>& known) {
  std::optional<PathHit> best;
  for (const auto& p : known) {
    if (p.empty()) continue;
    const auto pos = s.find(p);
    if (pos == std::string_view::npos) continue;
    if (!best || pos < best->pos || (pos == best->pos && p.size() > best->path.size())) {
      best = PathHit{pos, p};
    }
  }
  return best;
}

bool contains_phrase(std::string_view haystack, std::string_view phrase) {
  if (phrase.empty()) return false;
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  for (std::size_t pos = haystack.find(phrase); pos != std::string_view::npos;
       pos = haystack.find(phrase, pos + 1)) {
    const bool left_ok = pos == 0 || !is_word(haystack[pos - 1]) || !is_word(phrase.front());
    const auto end = pos + phrase.size();
    const bool right_ok = end == haystack.size() || !is_word(haystack[end]) || !is_word(phrase.back());
    if (left_ok && right_ok) return true;
  }
  return false;
}

struct Match {
  const ExpertRegistry::Entry* entry = nullptr;
  bool by_trigger = false;
};

Match match_expert(std::string_view clause, const ExpertRegistry& registry) {
  if (const auto* exact = registry.find_normalized(clause)) return {exact, false};
  const auto text = lower(clause);
  for (const auto& entry : registry.entries()) {
    for (const auto& phrase : entry.descriptor.trigger_phrases) {
      if (contains_phrase(text, phrase)) return {&entry, true};
    }
  }
  return {};
}

}  // namespace

bool ActionRequest::same_request(const ActionRequest& other) const {
  return expert_name == other.expert_name && path == other.path && query == other.query;
}

Decision parse_llm_output(std::string_view text, const ParseOptions& options) {
  const std::string_view watchword = options.watchword;
  if (watchword.empty()) throw Error(Errc::invalid_config, "watchword must not be empty");

  const auto positions = watchword_positions(text, watchword);
  if (positions.empty()) return FinalResponse{std::string(text)};

  Actions actions;
  if (auto thought = trim(text.substr(0, positions.front())); !thought.empty()) {
    actions.thought = std::string(thought);
  }

  for (std::size_t k = 0; k < positions.size(); ++k) {
    const std::size_t begin = positions[k];
    std::size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    if (k + 1 < positions.size()) end = std::min(end, positions[k + 1]);
    while (end > begin && is_space(text[end - 1])) --end;

    const std::string_view body = text.substr(begin + watchword.size(), end - begin - watchword.size());
    ActionRequest request;
    request.span_begin = begin;
    request.span_end = end;

    std::string_view clause;
    if (auto bracket = find_bracket(body)) {
      clause = body.substr(0, bracket->open);
      request.path = std::string(body.substr(bracket->open + 1, bracket->close - bracket->open - 1));
      request.query = as_query(body.substr(bracket->close + 1));
    } else if (auto hit = find_known_path(body, options.known_paths)) {
      clause = body.substr(0, hit->pos);
      request.path = std::string(hit->path);
      request.query = as_query(body.substr(hit->pos + hit->path.size()));
    } else if (auto colon = body.find(':');
               colon != std::string_view::npos && !trim(body.substr(0, colon)).empty()) {
      clause = body.substr(0, colon);
      request.query = as_query(body.substr(colon + 1));
    } else {
      clause = body;
    }
    clause = trim(clause);

    const bool unresolvable = !request.path && options.resolvable && !options.resolvable(clause);
    if (clause.empty() || unresolvable) {
      throw Error(Errc::malformed_action,
                  "cannot determine an expert or a file path from request \"" +
                      std::string(text.substr(begin, end - begin)) + "\"");
    }
    request.expert_name = std::string(clause);
    actions.requests.push_back(std::move(request));
  }
  return actions;
}

std::string render_request(const ActionRequest& request, std::string_view watchword) {
  std::string out = std::string(watchword) + ' ' + request.expert_name;
  if (request.path) {
    out += " <" + *request.path + '>';
    if (request.query) out += ' ' + *request.query;
  } else if (request.query) {
    out += ": " + *request.query;
  }
  return out;
}

std::vector<std::string> extract_paths(std::string_view text,
                                       const std::set<std::string, std::less<>>& known_paths) {
  std::vector<std::pair<std::size_t, std::string>> hits;
  for (auto b = find_bracket(text); b; b = find_bracket(text, b->close + 1)) {
    hits.emplace_back(b->open, std::string(text.substr(b->open + 1, b->close - b->open - 1)));
  }
  for (const auto& p : known_paths) {
    if (p.empty()) continue;
    for (auto pos = text.find(p); pos != std::string_view::npos; pos = text.find(p, pos + 1)) {
      hits.emplace_back(pos, p);
    }
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::string> out;
  for (auto& [pos, path] : hits) {
    if (std::find(out.begin(), out.end(), path) == out.end()) out.push_back(std::move(path));
  }
  return out;
}

ResolvedRequest resolve_expert(const ActionRequest& request, const ExpertRegistry& registry) {
  if (registry.empty()) throw Error(Errc::empty_registry, "no experts registered");
  const auto match = match_expert(request.expert_name, registry);
  if (match.entry == nullptr) {
    throw Error(Errc::unknown_expert, "no expert matches \"" + request.expert_name + "\"");
  }
  ResolvedRequest resolved;
  resolved.request = request;
  resolved.expert = match.entry->descriptor.name;
  resolved.call.path = request.path;
  resolved.call.query = request.query;
  const auto spec = match.entry->descriptor.input_spec;
  if (match.by_trigger && !resolved.call.query &&
      (spec == InputSpec::text || spec == InputSpec::path_plus_text)) {
    resolved.call.query = request.expert_name;
  }
  return resolved;
}

bool can_resolve(std::string_view clause, const ExpertRegistry& registry) {
  return match_expert(clause, registry).entry != nullptr;
}

}  // namespace mmreact
