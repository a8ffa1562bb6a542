#include "mmreact/orchestrate.hpp"

#include <array>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmreact/digest.hpp"
#include "mmreact/error.hpp"

namespace mmreact {

namespace {

constexpr std::array<std::pair<TraceKind, std::string_view>, 4> kTraceKinds{{
    {TraceKind::llm_call, "llm_call"},
    {TraceKind::expert_batch, "expert_batch"},
    {TraceKind::final_response, "final_response"},
    {TraceKind::recovery, "recovery"},
}};

std::string truncate_code_points(std::string text, std::size_t max_cp) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if ((static_cast<unsigned char>(text[i]) & 0xC0) == 0x80) continue;
    if (seen++ == max_cp) {
      text.resize(i);
      text += "\n[truncated]";
      break;
    }
  }
  return text;
}

std::string budget_final_text(std::optional<std::string_view> last_observation) {
  std::string out = "I ran out of room in my context window before finishing.";
  if (last_observation) {
    out += " The last information I gathered:\n";
    out += *last_observation;
  }
  return out;
}

bool blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

}  // namespace

std::string_view to_string(TraceKind kind) noexcept {
  for (const auto& [k, name] : kTraceKinds) {
    if (k == kind) return name;
  }
  return "llm_call";
}

TraceKind trace_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kTraceKinds) {
    if (n == name) return k;
  }
  throw Error(Errc::parse_error, "unknown trace event kind: " + std::string(name));
}

std::string forced_final_text(int max_steps, std::optional<std::string_view> last_observation) {
  std::string out = "I reached the limit of " + std::to_string(max_steps) +
                    " reasoning steps before finishing.";
  if (last_observation) {
    out += " The last information I gathered:\n";
    out += *last_observation;
  } else {
    out += " I could not gather enough information to answer.";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trace records

void to_json(nlohmann::json& j, const TraceEvent& e) {
  nlohmann::json detail = nlohmann::json::object();
  std::visit(
      [&](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, LlmCallDetail>) {
          detail = {{"input_digest", d.input_digest},
                    {"input_tokens", d.input_tokens},
                    {"output_digest", d.output_digest},
                    {"output", d.output}};
        } else if constexpr (std::is_same_v<D, ExpertBatchDetail>) {
          auto runs = nlohmann::json::array();
          for (const auto& r : d.runs) {
            nlohmann::json run{{"expert", r.expert},
                               {"request", r.request},
                               {"observation_digest", r.observation_digest},
                               {"duration_ms", r.duration_ms},
                               {"ok", r.ok}};
            if (r.path) run["path"] = *r.path;
            if (r.query) run["query"] = *r.query;
            runs.push_back(std::move(run));
          }
          detail = {{"runs", std::move(runs)}};
        } else if constexpr (std::is_same_v<D, FinalDetail>) {
          detail = {{"text", d.text}, {"forced", d.forced}};
        } else {
          detail = {{"error", d.error}, {"message", d.message}};
        }
      },
      e.detail);
  j = nlohmann::json{{"turn", e.turn}, {"step", e.step}, {"kind", to_string(e.kind)}, {"detail", detail}};
}

void from_json(const nlohmann::json& j, TraceEvent& e) {
  TraceEvent out;
  out.turn = j.at("turn").get<int>();
  out.step = j.at("step").get<int>();
  out.kind = trace_kind_from_string(j.at("kind").get<std::string>());
  const auto& d = j.at("detail");
  switch (out.kind) {
    case TraceKind::llm_call:
      out.detail = LlmCallDetail{d.at("input_digest").get<std::string>(),
                                 d.at("input_tokens").get<std::size_t>(),
                                 d.at("output_digest").get<std::string>(),
                                 d.at("output").get<std::string>()};
      break;
    case TraceKind::expert_batch: {
      ExpertBatchDetail batch;
      for (const auto& r : d.at("runs")) {
        ExpertRun run;
        run.expert = r.at("expert").get<std::string>();
        run.request = r.at("request").get<std::string>();
        if (r.contains("path")) run.path = r.at("path").get<std::string>();
        if (r.contains("query")) run.query = r.at("query").get<std::string>();
        run.observation_digest = r.at("observation_digest").get<std::string>();
        run.duration_ms = r.at("duration_ms").get<std::int64_t>();
        run.ok = r.at("ok").get<bool>();
        batch.runs.push_back(std::move(run));
      }
      out.detail = std::move(batch);
      break;
    }
    case TraceKind::final_response:
      out.detail = FinalDetail{d.at("text").get<std::string>(), d.at("forced").get<bool>()};
      break;
    case TraceKind::recovery:
      out.detail = RecoveryDetail{d.at("error").get<std::string>(), d.at("message").get<std::string>()};
      break;
  }
  e = std::move(out);
}

std::string trace_record(const TraceEvent& event) { return nlohmann::json(event).dump(); }

std::string export_trace(const std::vector<TraceEvent>& trace) {
  std::string out;
  for (const auto& e : trace) {
    out += trace_record(e);
    out += '\n';
  }
  return out;
}

std::vector<TraceEvent> import_trace(std::string_view document) {
  std::vector<TraceEvent> out;
  std::size_t start = 0;
  std::size_t lineno = 0;
  while (start < document.size()) {
    auto end = document.find('\n', start);
    if (end == std::string_view::npos) end = document.size();
    ++lineno;
    const auto line = document.substr(start, end - start);
    start = end + 1;
    if (blank(line)) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<TraceEvent>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::parse_error, "trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(std::shared_ptr<const ExpertRegistry> registry, std::shared_ptr<LlmBackend> backend,
               EngineOptions options, std::shared_ptr<Clock> clock)
    : registry_(std::move(registry)),
      backend_(std::move(backend)),
      options_(std::move(options)),
      clock_(clock ? std::move(clock) : std::make_shared<SteadyClock>()) {
  if (!registry_) throw Error(Errc::empty_registry, "engine needs an expert registry");
  if (!backend_) throw Error(Errc::invalid_config, "engine needs an LLM backend");
  prefix_ = build_prefix(*registry_, options_.prefix);
}

ParseOptions Engine::parse_options(const SessionState& session) const {
  ParseOptions opts;
  opts.watchword = options_.prefix.watchword;
  for (const auto& m : session.media()) opts.known_paths.insert(m.path);
  opts.resolvable = [registry = registry_](std::string_view clause) {
    return can_resolve(clause, *registry);
  };
  return opts;
}

std::vector<Observation> Engine::execute_batch(SessionState& session,
                                               const std::vector<ActionRequest>& requests,
                                               int step, std::string_view llm_output,
                                               std::vector<ExpertRun>* runs) const {
  const auto budget = TokenBudget::from(session.config());
  std::vector<Observation> observations;

  for (const auto& request : requests) {
    ExpertRun run;
    run.expert = request.expert_name;
    run.request = request.span_end > request.span_begin && request.span_end <= llm_output.size()
                      ? std::string(request.raw(llm_output))
                      : render_request(request, options_.prefix.watchword);
    run.path = request.path;
    run.query = request.query;

    Observation obs;
    std::vector<std::string> media_ids;
    try {
      auto resolved = resolve_expert(request, *registry_);
      run.expert = resolved.expert;
      const auto& descriptor = registry_->find(resolved.expert)->descriptor;
      if (requires_path(descriptor.input_spec) && !resolved.call.path) {
        resolved.call.path = session.last_referenced_path();
      }
      run.path = resolved.call.path;
      run.query = resolved.call.query;

      const auto t0 = clock_->now_ns();
      auto output = execute(*registry_, resolved.expert, resolved.call);
      const auto t1 = clock_->now_ns();
      obs = standardize(resolved.expert, output, static_cast<std::int64_t>((t1 - t0) / 1'000'000),
                        options_.serialize);
      for (const auto& produced : output.produced_media) {
        const auto* existing = session.find_media_by_path(produced.path);
        media_ids.push_back(existing ? existing->id
                                     : session.register_media(produced.path, produced.kind).id);
      }
    } catch (const Error& e) {
      obs = Observation{};
      obs.expert_name = run.expert;
      obs.text = "Expert " + run.expert + " failed (" + std::string(to_string(e.code())) +
                 "): " + e.what();
      obs.source_payload = RawExpertOutput::text(obs.text);
      run.ok = false;
    }
    obs.text = truncate_code_points(std::move(obs.text), budget.available());

    const std::string text = obs.message_text();
    run.observation_digest = sha256_hex(text);
    run.duration_ms = obs.duration_ms;
    session.append(Message{Role::observation, text, std::move(media_ids), step, clock_->now_ns()});
    if (runs) runs->push_back(std::move(run));
    observations.push_back(std::move(obs));
  }
  return observations;
}

TurnResult Engine::run_turn(SessionState& session, std::string_view user_text,
                            const std::vector<MediaInput>& media, const EventSink& sink) const {
  SessionState snapshot = session;
  const int turn = session.turn_counter() + 1;
  const int max_steps = session.config().max_steps;
  TurnResult result;
  int step = 0;

  auto emit = [&](TraceKind kind, auto detail) {
    TraceEvent e;
    e.turn = turn;
    e.step = ++step;
    e.kind = kind;
    e.detail = std::move(detail);
    result.trace.push_back(e);
    if (sink) sink(e);
  };
  auto finish = [&](std::string text, bool forced) {
    session.append(Message{Role::assistant_final, text, {}, std::nullopt, clock_->now_ns()});
    result.final_text = text;
    emit(TraceKind::final_response, FinalDetail{std::move(text), forced});
  };

  try {
    for (const auto& m : media) {
      result.media_ids.push_back(session.register_media(m.path, m.kind).id);
    }
    session.append(Message{Role::user, std::string(user_text), result.media_ids, std::nullopt,
                           clock_->now_ns()});

    const auto budget = TokenBudget::from(session.config());
    std::optional<std::string> last_observation;

    for (;;) {
      LlmInput input;
      try {
        input = render_dialogue(session, prefix_, budget);
      } catch (const Error& e) {
        if (e.code() != Errc::budget_impossible || result.steps_used == 0) throw;
        finish(budget_final_text(last_observation), true);
        break;
      }

      std::string output;
      try {
        output = backend_->complete(input);
      } catch (const std::exception& e) {
        throw Error(Errc::backend_error, std::string("LLM backend failed: ") + e.what());
      }
      ++result.steps_used;
      const int llm_step = step + 1;
      const std::string flat = input.flatten();
      emit(TraceKind::llm_call,
           LlmCallDetail{sha256_hex(flat), estimate_tokens(flat), sha256_hex(output), output});

      Decision decision;
      try {
        if (blank(output)) throw Error(Errc::malformed_action, "the LLM returned an empty response");
        decision = parse_llm_output(output, parse_options(session));
      } catch (const Error& e) {
        if (e.code() != Errc::malformed_action) throw;
        if (result.steps_used >= max_steps) {
          finish(forced_final_text(max_steps, last_observation), true);
          break;
        }
        if (!blank(output)) {
          session.append(Message{Role::action_request, output, {}, llm_step, clock_->now_ns()});
        }
        const std::string text = observation_header("parser") + "\nCould not run that request: " +
                                 e.what() + ". Write requests as: " + options_.prefix.watchword +
                                 " <expert name> <file path> <question>.";
        session.append(Message{Role::observation, text, {}, step + 1, clock_->now_ns()});
        last_observation = text;
        emit(TraceKind::recovery, RecoveryDetail{std::string(to_string(e.code())), e.what()});
        continue;
      }

      if (auto* final = std::get_if<FinalResponse>(&decision)) {
        finish(final->text, false);
        break;
      }

      auto& actions = std::get<Actions>(decision);
      if (result.steps_used >= max_steps) {
        finish(forced_final_text(max_steps, last_observation), true);
        break;
      }
      if (actions.thought) {
        session.append(Message{Role::thought, *actions.thought, {}, llm_step, clock_->now_ns()});
      }
      for (const auto& request : actions.requests) {
        std::vector<std::string> ids;
        if (request.path) {
          if (const auto* handle = session.find_media_by_path(*request.path)) ids.push_back(handle->id);
        }
        session.append(Message{Role::action_request, std::string(request.raw(output)), std::move(ids),
                               llm_step, clock_->now_ns()});
      }

      ExpertBatchDetail batch;
      auto observations = execute_batch(session, actions.requests, step + 1, output, &batch.runs);
      last_observation = observations.back().message_text();
      emit(TraceKind::expert_batch, std::move(batch));
    }
  } catch (...) {
    session = std::move(snapshot);
    throw;
  }

  session.complete_turn();
  return result;
}

}  // namespace mmreact
