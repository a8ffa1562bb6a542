#include "mmreact/error.hpp"

#include <chrono>

#include "mmreact/clock.hpp"

namespace mmreact {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_config: return "invalid-config";
    case Errc::invalid_message: return "invalid-message";
    case Errc::duplicate_path: return "duplicate-path";
    case Errc::dangling_media: return "dangling-media";
    case Errc::empty_registry: return "empty-registry";
    case Errc::budget_impossible: return "budget-impossible";
    case Errc::malformed_action: return "malformed-action";
    case Errc::unknown_expert: return "unknown-expert";
    case Errc::duplicate_name: return "duplicate-name";
    case Errc::expert_failure: return "expert-failure";
    case Errc::missing_path: return "missing-path";
    case Errc::parse_error: return "parse-error";
    case Errc::division_by_zero: return "division-by-zero";
    case Errc::unknown_kind: return "unknown-kind";
    case Errc::no_rule_matched: return "no-rule-matched";
    case Errc::transport_error: return "transport-error";
    case Errc::backend_error: return "backend-error";
    case Errc::unknown_session: return "unknown-session";
    case Errc::session_busy: return "session-busy";
    case Errc::storage_failure: return "storage-failure";
  }
  return "unknown";
}

std::uint64_t SteadyClock::now_ns() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(
          std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

}  // namespace mmreact
