#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mmreact/actionparse.hpp"
#include "mmreact/clock.hpp"
#include "mmreact/experts.hpp"
#include "mmreact/llm.hpp"
#include "mmreact/prompting.hpp"
#include "mmreact/serialize.hpp"
#include "mmreact/session.hpp"

namespace mmreact {

enum class TraceKind { llm_call, expert_batch, final_response, recovery };

std::string_view to_string(TraceKind kind) noexcept;
TraceKind trace_kind_from_string(std::string_view name);

struct LlmCallDetail {
  std::string input_digest;   // sha256 of the flattened input
  std::size_t input_tokens = 0;
  std::string output_digest;  // sha256 of the completion
  std::string output;

  friend bool operator==(const LlmCallDetail&, const LlmCallDetail&) = default;
};

struct ExpertRun {
  std::string expert;   // resolved name, or the raw clause when unresolved
  std::string request;  // raw request text from the LLM output
  std::optional<std::string> path;
  std::optional<std::string> query;
  std::string observation_digest;
  std::int64_t duration_ms = 0;
  bool ok = true;

  friend bool operator==(const ExpertRun&, const ExpertRun&) = default;
};

struct ExpertBatchDetail {
  std::vector<ExpertRun> runs;
  friend bool operator==(const ExpertBatchDetail&, const ExpertBatchDetail&) = default;
};

struct FinalDetail {
  std::string text;
  bool forced = false;
  friend bool operator==(const FinalDetail&, const FinalDetail&) = default;
};

struct RecoveryDetail {
  std::string error;  // Errc name
  std::string message;
  friend bool operator==(const RecoveryDetail&, const RecoveryDetail&) = default;
};

// One numbered execution within a turn. Steps start at 1 in every turn.
struct TraceEvent {
  int turn = 0;
  int step = 0;
  TraceKind kind = TraceKind::llm_call;
  std::variant<LlmCallDetail, ExpertBatchDetail, FinalDetail, RecoveryDetail> detail;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

void to_json(nlohmann::json& j, const TraceEvent& e);
void from_json(const nlohmann::json& j, TraceEvent& e);

struct TurnResult {
  std::string final_text;
  std::vector<TraceEvent> trace;  // last event is final_response
  int steps_used = 0;             // LLM calls made
  std::vector<std::string> media_ids;  // media registered by the user this turn
};

// One JSON object per line, one line per event.
std::string trace_record(const TraceEvent& event);
std::string export_trace(const std::vector<TraceEvent>& trace);
inline std::string export_trace(const TurnResult& result) { return export_trace(result.trace); }
// Throws Error{parse_error}.
std::vector<TraceEvent> import_trace(std::string_view document);

struct MediaInput {
  std::string path;
  MediaKind kind = MediaKind::image;
};

struct EngineOptions {
  PrefixOptions prefix;
  SerializeOptions serialize;
};

using EventSink = std::function<void(const TraceEvent&)>;

// The reasoning-and-acting loop. The registry is immutable and the backend
// thread-safe, so one Engine serves many sessions; each session must run at
// most one turn at a time.
class Engine {
 public:
  Engine(std::shared_ptr<const ExpertRegistry> registry, std::shared_ptr<LlmBackend> backend,
         EngineOptions options = {}, std::shared_ptr<Clock> clock = nullptr);

  // Registers media, appends the user message and alternates LLM calls with
  // expert batches until a final response or the session's max_steps.
  //
  // A backend failure restores the session to its pre-turn state and throws
  // Error{backend_error}. Error{budget_impossible} on the first render does
  // the same; if the window fills up later the turn ends with a forced final.
  TurnResult run_turn(SessionState& session, std::string_view user_text,
                      const std::vector<MediaInput>& media, const EventSink& sink = {}) const;

  // Executes the requests in order and appends one observation per request.
  // Failures become recovery observations in place.
  std::vector<Observation> execute_batch(SessionState& session,
                                         const std::vector<ActionRequest>& requests, int step,
                                         std::string_view llm_output,
                                         std::vector<ExpertRun>* runs = nullptr) const;

  const ExpertRegistry& registry() const noexcept { return *registry_; }
  const PromptPrefix& prefix() const noexcept { return prefix_; }
  const EngineOptions& options() const noexcept { return options_; }

 private:
  ParseOptions parse_options(const SessionState& session) const;

  std::shared_ptr<const ExpertRegistry> registry_;
  std::shared_ptr<LlmBackend> backend_;
  EngineOptions options_;
  std::shared_ptr<Clock> clock_;
  PromptPrefix prefix_;
};

std::string forced_final_text(int max_steps, std::optional<std::string_view> last_observation);

}  // namespace mmreact
