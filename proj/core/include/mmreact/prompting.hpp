#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mmreact/experts.hpp"
#include "mmreact/llm_input.hpp"
#include "mmreact/session.hpp"

namespace mmreact {

inline constexpr std::string_view kDefaultWatchword = "Assistant,";

// ceil(code_points / 4). Deterministic and model-agnostic.
std::size_t estimate_tokens(std::string_view text) noexcept;
std::size_t count_code_points(std::string_view text) noexcept;

struct TokenBudget {
  std::size_t limit = 4096;
  std::size_t reserved_for_completion = 512;

  // Throws Error{invalid_config} unless 0 < reserved < limit.
  void validate() const;
  std::size_t available() const noexcept { return limit - reserved_for_completion; }

  static TokenBudget from(const SessionConfig& config);
};

// The shipped prefix template. Placeholders: {expert_blocks}, {examples},
// {watchword}. A copy lives in data/templates/prefix.txt.
std::string_view default_prefix_template() noexcept;
// Throws Error{invalid_config} if the file is unreadable or lacks
// {expert_blocks} or {watchword}.
std::string load_prefix_template(const std::filesystem::path& file);

struct PrefixOptions {
  std::string template_text{default_prefix_template()};
  std::string watchword{kDefaultWatchword};
  std::size_t examples_per_expert = 2;
};

struct PromptPrefix {
  // The fully rendered instruction text sent as the system segment.
  std::string system_instructions;
  // One per expert, registration order: name, capability, input, output.
  std::vector<std::string> expert_blocks;
  // In-context examples, grouped by expert in registration order.
  std::vector<std::string> example_dialogues;
};

// Pure function of the registry and options. Throws Error{empty_registry}.
PromptPrefix build_prefix(const ExpertRegistry& registry, const PrefixOptions& options = {});

// Text of one message as the LLM sees it. Attached media render as
// "<path>" lines after the text.
std::string render_message(const Message& message, const SessionState& session);
SegmentRole segment_role(Role role) noexcept;

// Which messages survive eviction, indexed like session.messages().
// Oldest internal messages go first, then the oldest completed user turns
// whose media is not referenced later. The current turn (from the latest
// user message on) is never dropped. Throws Error{budget_impossible}.
std::vector<bool> plan_retention(const SessionState& session, const PromptPrefix& prefix,
                                 const TokenBudget& budget);

// Prefix followed by the retained messages, both visible and internal.
// estimate_tokens(result.flatten()) <= budget.available().
LlmInput render_dialogue(const SessionState& session, const PromptPrefix& prefix,
                         const TokenBudget& budget);

}  // namespace mmreact
