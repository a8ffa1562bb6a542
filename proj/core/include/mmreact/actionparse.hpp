#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mmreact/experts.hpp"

namespace mmreact {

// One expert invocation requested by the LLM.
//
// Grammar of a request (the watchword must start a line or follow a sentence
// terminator and whitespace; the request runs to the end of its line or to
// the next watchword):
//
//   request := WATCHWORD clause "<" path ">" [query]
//            | WATCHWORD clause KNOWN_PATH [query]
//            | WATCHWORD name ":" query
//            | WATCHWORD clause
//
// `expert_name` holds the clause before the path: either an expert name or a
// natural-language question that resolve_expert() routes by trigger phrase.
struct ActionRequest {
  std::string expert_name;
  std::optional<std::string> path;
  std::optional<std::string> query;
  std::size_t span_begin = 0;  // offsets of the matched request text
  std::size_t span_end = 0;

  std::string_view raw(std::string_view llm_output) const {
    return llm_output.substr(span_begin, span_end - span_begin);
  }
  // Equality ignoring the span.
  bool same_request(const ActionRequest& other) const;
};

struct FinalResponse {
  std::string text;
};

struct Actions {
  std::optional<std::string> thought;
  std::vector<ActionRequest> requests;  // nonempty, ascending span_begin
};

using Decision = std::variant<FinalResponse, Actions>;

struct ParseOptions {
  std::string watchword{"Assistant,"};
  // Registered media paths recognized without angle brackets.
  std::set<std::string, std::less<>> known_paths;
  // When set, a request without a path whose clause this rejects is
  // malformed.
  std::function<bool(std::string_view clause)> resolvable;
};

// Throws Error{malformed_action} when a watchword occurs but a request has
// neither a resolvable clause nor a path, and Error{invalid_config} for an
// empty watchword. Text without a watchword comes back unchanged.
Decision parse_llm_output(std::string_view text, const ParseOptions& options = {});

// Canonical request line: "{watchword} {expert_name} <{path}> {query}", or
// "{watchword} {expert_name}: {query}" when there is no path.
std::string render_request(const ActionRequest& request, std::string_view watchword);

// Angle-bracketed tokens plus verbatim occurrences of known paths, ordered by
// first position, deduplicated.
std::vector<std::string> extract_paths(std::string_view text,
                                       const std::set<std::string, std::less<>>& known_paths);

struct ResolvedRequest {
  ActionRequest request;
  std::string expert;  // registered name
  ExpertCall call;
};

// Exact (normalized) name match first, then the earliest-registered expert
// with a trigger phrase found in the clause. Throws Error{unknown_expert}.
ResolvedRequest resolve_expert(const ActionRequest& request, const ExpertRegistry& registry);

// Non-throwing check used as ParseOptions::resolvable.
bool can_resolve(std::string_view clause, const ExpertRegistry& registry);

}  // namespace mmreact
