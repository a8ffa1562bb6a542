#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mmreact {

enum class SegmentRole { system, user, assistant };

std::string_view to_string(SegmentRole role) noexcept;

struct Segment {
  SegmentRole role = SegmentRole::user;
  std::string text;

  friend bool operator==(const Segment&, const Segment&) = default;
};

// Role-tagged text handed to an LLM backend. The first segment is the
// system prefix.
struct LlmInput {
  std::vector<Segment> segments;

  // Segment texts joined with blank lines.
  std::string flatten() const;
  // estimate_tokens(flatten()).
  std::size_t estimated_tokens() const;

  friend bool operator==(const LlmInput&, const LlmInput&) = default;
};

void to_json(nlohmann::json& j, const LlmInput& input);

}  // namespace mmreact
