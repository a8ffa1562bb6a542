#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mmreact {

enum class Errc {
  invalid_config,
  invalid_message,
  duplicate_path,
  dangling_media,
  empty_registry,
  budget_impossible,
  malformed_action,
  unknown_expert,
  duplicate_name,
  expert_failure,
  missing_path,
  parse_error,
  division_by_zero,
  unknown_kind,
  no_rule_matched,
  transport_error,
  backend_error,
  unknown_session,
  session_busy,
  storage_failure,
};

// Kebab-case name used in logs, HTTP error bodies and recovery observations.
std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace mmreact
