#include <doctest.h>

#include <thread>

#include <nlohmann/json.hpp>

#include "mmreact/digest.hpp"
#include "mmreact/error.hpp"
#include "mmreact/orchestrate.hpp"
#include "support.hpp"

using namespace mmreact;

namespace {

std::shared_ptr<const ExpertRegistry> shipped(bool with_editing = false) {
  return std::make_shared<const ExpertRegistry>(testing::shipped_registry(with_editing));
}

Engine engine_with(std::shared_ptr<LlmBackend> backend, std::shared_ptr<const ExpertRegistry> registry = shipped()) {
  return Engine(std::move(registry), std::move(backend), {}, std::make_shared<LogicalClock>());
}

std::shared_ptr<ScriptedBackend> script(const std::string& file) {
  return std::make_shared<ScriptedBackend>(load_script(testing::data_dir() / "scripts" / file));
}

std::shared_ptr<ScriptedBackend> rules(std::vector<ScriptedRule> r) {
  return std::make_shared<ScriptedBackend>(std::move(r));
}

std::vector<std::string> kinds(const std::vector<TraceEvent>& trace) {
  std::vector<std::string> out;
  for (const auto& e : trace) out.emplace_back(to_string(e.kind));
  return out;
}

std::vector<Role> roles(const std::vector<Message>& messages, std::size_t from = 0) {
  std::vector<Role> out;
  for (auto i = from; i < messages.size(); ++i) out.push_back(messages[i].role);
  return out;
}

std::string dump(const SessionState& s) { return nlohmann::json(s).dump(); }

const ExpertBatchDetail& batch_at(const TurnResult& r, std::size_t i) {
  return std::get<ExpertBatchDetail>(r.trace.at(i).detail);
}

// Steps 1..n, one turn number, one final response at the end.
void check_trace_shape(const TurnResult& r, int turn) {
  REQUIRE_FALSE(r.trace.empty());
  int llm_calls = 0;
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& e = r.trace[i];
    CHECK(e.turn == turn);
    CHECK(e.step == static_cast<int>(i) + 1);
    if (e.kind == TraceKind::llm_call) ++llm_calls;
    if (e.kind == TraceKind::expert_batch || e.kind == TraceKind::recovery) {
      REQUIRE(i > 0);
      CHECK(r.trace[i - 1].kind == TraceKind::llm_call);
    }
    CHECK((e.kind == TraceKind::final_response) == (i + 1 == r.trace.size()));
  }
  CHECK(llm_calls == r.steps_used);
  CHECK(std::get<FinalDetail>(r.trace.back().detail).text == r.final_text);
}

}  // namespace

TEST_CASE("walkthrough: two experts in one batch, then the answer") {
  auto backend = script("walkthrough.script");
  const auto engine = engine_with(backend);
  auto session = new_session({});
  std::vector<TraceEvent> streamed;

  const auto r = engine.run_turn(session, "What objects do you see in this image?",
                                 {{"images/street.jpg", MediaKind::image}},
                                 [&](const TraceEvent& e) { streamed.push_back(e); });

  CHECK(r.final_text.find("two people, one dog and one bicycle") != std::string::npos);
  CHECK(kinds(r.trace) == std::vector<std::string>{"llm_call", "expert_batch", "llm_call", "final_response"});
  CHECK(streamed == r.trace);
  CHECK(r.steps_used == 2);
  CHECK(backend->calls() == 2);
  CHECK(r.media_ids == std::vector<std::string>{"media-1"});
  check_trace_shape(r, 1);

  const auto& runs = batch_at(r, 1).runs;
  REQUIRE(runs.size() == 2);
  CHECK(runs[0].expert == "object_detection");
  CHECK(runs[0].request == "Assistant, what objects do you see in this image? <images/street.jpg>");
  CHECK(runs[1].expert == "image_captioning");
  CHECK(runs[0].path == "images/street.jpg");
  CHECK(runs[0].ok);
  CHECK(runs[1].ok);

  const auto& llm = std::get<LlmCallDetail>(r.trace[0].detail);
  CHECK(llm.output_digest == sha256_hex(llm.output));
  CHECK(llm.input_digest.size() == 64);
  CHECK(llm.input_tokens > 0);

  const auto& m = session.messages();
  CHECK(roles(m) == std::vector<Role>{Role::user, Role::thought, Role::action_request, Role::action_request,
                                      Role::observation, Role::observation, Role::assistant_final});
  CHECK(m[0].media == r.media_ids);
  CHECK(m[1].text == "This is an image.");
  CHECK(m[1].step == 1);
  CHECK(m[2].media == r.media_ids);
  CHECK(m[4].step == 2);
  CHECK(m[4].text.starts_with("Observation from object_detection:\n" + std::string(kDetectionExplanation) +
                              "\n<person, 34, 50, 120, 310>"));
  CHECK(runs[0].observation_digest == sha256_hex(m[4].text));
  CHECK(m[5].text.starts_with("Observation from image_captioning:\n"));
  CHECK(session.visible_transcript().size() == 2);
  CHECK(session.turn_counter() == 1);
}

TEST_CASE("traces are reproducible with the scripted backend") {
  std::string first;
  for (int i = 0; i < 3; ++i) {
    const auto engine = engine_with(script("walkthrough.script"));
    auto session = new_session({});
    const auto r = engine.run_turn(session, "What objects do you see in this image?",
                                   {{"images/street.jpg", MediaKind::image}});
    if (i == 0) first = export_trace(r);
    CHECK(export_trace(r) == first);
  }
}

TEST_CASE("text-only request") {
  const auto engine = engine_with(rules({
      {ContainsMatcher{"Observation from bing_search"}, "Here is what I found: {{observation}}"},
      {ContainsMatcher{"morels"}, "Assistant, bing search: morel mushroom season"},
  }));
  auto session = new_session({});
  const auto r = engine.run_turn(session, "When do morels grow?", {});
  CHECK(kinds(r.trace) == std::vector<std::string>{"llm_call", "expert_batch", "llm_call", "final_response"});
  CHECK(r.final_text.starts_with("Here is what I found: Morel mushrooms usually fruit in spring"));
  CHECK(batch_at(r, 1).runs[0].query == "morel mushroom season");
  CHECK_FALSE(batch_at(r, 1).runs[0].path.has_value());
}

TEST_CASE("a direct answer takes one call") {
  const auto engine = engine_with(rules({{ContainsMatcher{""}, "Hello! How can I help?"}}));
  auto session = new_session({});
  const auto r = engine.run_turn(session, "hi", {});
  CHECK(kinds(r.trace) == std::vector<std::string>{"llm_call", "final_response"});
  CHECK(r.steps_used == 1);
  CHECK(r.final_text == "Hello! How can I help?");
  CHECK_FALSE(std::get<FinalDetail>(r.trace.back().detail).forced);
}

TEST_CASE("step limit forces a final answer") {
  auto backend = script("loop.script");
  const auto engine = engine_with(backend);

  SUBCASE("max_steps 4") {
    auto session = new_session({4, 4096, std::nullopt});
    const auto r = engine.run_turn(session, "What is in this?", {{"images/street.jpg", MediaKind::image}});
    CHECK(r.steps_used == 4);
    CHECK(backend->calls() == 4);
    CHECK(kinds(r.trace) == std::vector<std::string>{"llm_call", "expert_batch", "llm_call", "expert_batch",
                                                     "llm_call", "expert_batch", "llm_call", "final_response"});
    const auto& fin = std::get<FinalDetail>(r.trace.back().detail);
    CHECK(fin.forced);
    CHECK(r.final_text.starts_with("I reached the limit of 4 reasoning steps before finishing."));
    CHECK(r.final_text.find("Observation from object_detection:") != std::string::npos);
    check_trace_shape(r, 1);
    // The fourth request was not executed.
    std::size_t observations = 0;
    for (const auto& m : session.messages()) observations += m.role == Role::observation;
    CHECK(observations == 3);
  }
  SUBCASE("max_steps 1") {
    auto session = new_session({1, 4096, std::nullopt});
    const auto r = engine.run_turn(session, "What is in this?", {{"images/street.jpg", MediaKind::image}});
    CHECK(kinds(r.trace) == std::vector<std::string>{"llm_call", "final_response"});
    CHECK(r.final_text == forced_final_text(1, std::nullopt));
    CHECK(r.final_text.ends_with("I could not gather enough information to answer."));
  }
}

TEST_CASE("backend failure rolls the session back") {
  const auto engine = engine_with(rules({{ContainsMatcher{"first"}, "Fine."}}));
  auto session = new_session({});
  engine.run_turn(session, "first", {});
  const auto before = dump(session);

  try {
    engine.run_turn(session, "second", {{"images/street.jpg", MediaKind::image}});
    FAIL("expected backend-error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::backend_error);
    CHECK(std::string(e.what()).find("no scripted rule matched") != std::string::npos);
  }
  CHECK(dump(session) == before);
  CHECK(session.media().empty());
  CHECK(session.turn_counter() == 1);
}

TEST_CASE("an oversize first render rolls back with budget-impossible") {
  const auto engine = engine_with(rules({{ContainsMatcher{""}, "ok"}}));
  auto session = new_session({10, 256, std::nullopt});
  const auto before = dump(session);
  try {
    engine.run_turn(session, std::string(4000, 'x'), {});
    FAIL("expected budget-impossible");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::budget_impossible);
  }
  CHECK(dump(session) == before);
}

TEST_CASE("malformed output becomes a recovery observation") {
  auto backend = rules({
      {ContainsMatcher{"Observation from parser"}, "Sorry, I cannot help with wine."},
      {ContainsMatcher{"wine"}, "Assistant, sommelier please"},
  });
  const auto engine = engine_with(backend);
  auto session = new_session({});
  const auto r = engine.run_turn(session, "Pair a wine with this", {});
  CHECK(kinds(r.trace) == std::vector<std::string>{"llm_call", "recovery", "llm_call", "final_response"});
  CHECK(std::get<RecoveryDetail>(r.trace[1].detail).error == "malformed-action");
  CHECK(r.final_text == "Sorry, I cannot help with wine.");
  const auto& m = session.messages();
  REQUIRE(m.size() == 4);
  CHECK(m[1].role == Role::action_request);
  CHECK(m[1].text == "Assistant, sommelier please");
  CHECK(m[2].role == Role::observation);
  CHECK(m[2].text.starts_with("Observation from parser:\nCould not run that request: "));
  CHECK(m[2].text.ends_with("Write requests as: Assistant, <expert name> <file path> <question>."));
  check_trace_shape(r, 1);
}

TEST_CASE("empty output is recovered without an action message") {
  const auto engine = engine_with(rules({
      {NthCallMatcher{1}, "  \n"},
      {ContainsMatcher{""}, "Done."},
  }));
  auto session = new_session({});
  const auto r = engine.run_turn(session, "hello", {});
  CHECK(kinds(r.trace) == std::vector<std::string>{"llm_call", "recovery", "llm_call", "final_response"});
  CHECK(roles(session.messages()) == std::vector<Role>{Role::user, Role::observation, Role::assistant_final});
}

TEST_CASE("expert failures are observations, not errors") {
  const auto engine = engine_with(rules({
      {ContainsMatcher{"failed"}, "That did not work."},
      {ContainsMatcher{""}, "Assistant, sommelier <images/street.jpg>\nAssistant, pal math: 1/0"},
  }));
  auto session = new_session({});
  const auto r = engine.run_turn(session, "go", {{"images/street.jpg", MediaKind::image}});
  CHECK(kinds(r.trace) == std::vector<std::string>{"llm_call", "expert_batch", "llm_call", "final_response"});
  const auto& runs = batch_at(r, 1).runs;
  REQUIRE(runs.size() == 2);
  CHECK_FALSE(runs[0].ok);
  CHECK(runs[0].expert == "sommelier");
  CHECK_FALSE(runs[1].ok);
  CHECK(runs[1].expert == "pal_math");
  const auto& m = session.messages();
  CHECK(m[3].text.starts_with("Observation from sommelier:\nExpert sommelier failed (unknown-expert): "));
  CHECK(m[4].text.starts_with("Observation from pal_math:\nExpert pal_math failed (expert-failure): "));
}

TEST_CASE("execute_batch") {
  const auto engine = engine_with(rules({}), shipped(true));
  auto session = new_session({});

  SUBCASE("missing path with nothing to fall back on") {
    ActionRequest req;
    req.expert_name = "image captioning";
    std::vector<ExpertRun> runs;
    const auto obs = engine.execute_batch(session, {req}, 1, "", &runs);
    REQUIRE(obs.size() == 1);
    CHECK(obs[0].text.starts_with("Expert image_captioning failed (missing-path)"));
    CHECK_FALSE(runs[0].ok);
    CHECK(runs[0].request == "Assistant, image captioning");
  }
  SUBCASE("sticky path from the newest referenced media") {
    const auto a = session.register_media("images/street.jpg", MediaKind::image).id;
    const auto b = session.register_media("images/kitchen.png", MediaKind::image).id;
    session.append(Message{Role::user, "first", {a}, std::nullopt, 0});
    session.append(Message{Role::user, "second", {b}, std::nullopt, 0});
    ActionRequest req;
    req.expert_name = "image captioning";
    std::vector<ExpertRun> runs;
    const auto obs = engine.execute_batch(session, {req}, 1, "", &runs);
    CHECK(runs[0].path == "images/kitchen.png");
    CHECK(obs[0].text == "a kitchen with a gas stove and a white refrigerator");
    CHECK(session.messages().back().role == Role::observation);
    CHECK(session.messages().back().step == 1);
  }
  SUBCASE("produced media is registered and attached") {
    session.register_media("photos/park.jpg", MediaKind::image);
    ActionRequest req;
    req.expert_name = "image_editing";
    req.path = "photos/park.jpg";
    req.query = "make it sepia";
    engine.execute_batch(session, {req}, 3, "");
    REQUIRE(session.media().size() == 2);
    const auto& edited = session.media()[1];
    CHECK(edited.path.starts_with("photos/park.edit-"));
    CHECK(session.messages().back().media == std::vector<std::string>{edited.id});
    CHECK(session.last_referenced_path() == edited.path);
    // Running the same edit again reuses the registration.
    engine.execute_batch(session, {req}, 5, "");
    CHECK(session.media().size() == 2);
  }
  SUBCASE("observations are truncated to the available budget") {
    auto registry = std::make_shared<ExpertRegistry>();
    registry->add(testing::descriptor("verbose", InputSpec::text, OutputKind::plain_text),
                  testing::constant(RawExpertOutput::text(std::string(1000, 'y'))));
    const Engine small(registry, rules({}), {}, std::make_shared<LogicalClock>());
    auto s = new_session({10, 256, std::nullopt});  // 128 available
    ActionRequest req;
    req.expert_name = "verbose";
    const auto obs = small.execute_batch(s, {req}, 1, "");
    CHECK(obs[0].text == std::string(128, 'y') + "\n[truncated]");
  }
}

TEST_CASE("turns number themselves and steps restart") {
  const auto engine = engine_with(script("receipts.script"));
  auto session = new_session({});
  for (int i = 1; i <= 4; ++i) {
    const auto path = "receipts/receipt" + std::to_string(i) + ".png";
    const auto r = engine.run_turn(session, "Here is a receipt.", {{path, MediaKind::image}});
    check_trace_shape(r, i);
    CHECK(r.final_text == "Got it, I have saved this receipt.");
  }
  const auto r = engine.run_turn(session, "How much did I spend in total?", {});
  check_trace_shape(r, 5);
  CHECK(r.final_text == "You spent 48.5 in total across the four receipts.");
  CHECK(batch_at(r, 1).runs.size() == 4);
  CHECK(batch_at(r, 3).runs[0].expert == "pal_math");
  CHECK(session.turn_counter() == 5);
  CHECK(session.visible_transcript().size() == 10);
}

TEST_CASE("trace export and import") {
  const auto engine = engine_with(script("walkthrough.script"));
  auto session = new_session({});
  const auto r = engine.run_turn(session, "What objects do you see in this image?",
                                 {{"images/street.jpg", MediaKind::image}});
  const auto doc = export_trace(r);
  CHECK(std::count(doc.begin(), doc.end(), '\n') == static_cast<long>(r.trace.size()));
  CHECK(import_trace(doc) == r.trace);
  CHECK(export_trace(import_trace(doc)) == doc);

  const auto first = nlohmann::json::parse(trace_record(r.trace[0]));
  CHECK(first["turn"] == 1);
  CHECK(first["step"] == 1);
  CHECK(first["kind"] == "llm_call");
  CHECK(first["detail"].contains("input_digest"));

  try {
    import_trace(trace_record(r.trace[0]) + "\n{broken\n");
    FAIL("expected parse-error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::parse_error);
    CHECK(std::string(e.what()).find("trace line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(trace_kind_from_string("nap"), Error);
}

TEST_CASE("one engine serves sessions on several threads") {
  const auto engine = engine_with(script("walkthrough.script"));
  std::vector<std::string> finals(4);
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < finals.size(); ++t) {
    threads.emplace_back([&, t] {
      auto session = new_session({});
      finals[t] = engine
                      .run_turn(session, "What objects do you see in this image?",
                                {{"images/street.jpg", MediaKind::image}})
                      .final_text;
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& f : finals) CHECK(f == finals[0]);
}

namespace {

// Emits a random mix of answers, valid and broken requests, and failures.
class ChaosBackend final : public LlmBackend {
 public:
  explicit ChaosBackend(std::uint64_t seed) : rng_(seed) {}

  std::string complete(const LlmInput&) override {
    ++calls;
    static const std::vector<std::string> kRequests = {
        "Assistant, ocr <images/kitchen.png>",
        "Assistant, image captioning",
        "Assistant, pal math: 12.05 + 23.10",
        "Assistant, pal math: 1/0",
        "Assistant, sommelier <images/kitchen.png>",
        "Assistant, what objects do you see <images/street.jpg>",
        "Assistant, bing search: eiffel tower height",
    };
    const auto roll = testing::uniform(rng_, 0, 99);
    if (roll < 2) throw std::runtime_error("connection reset");
    if (roll < 20) return "The answer is " + testing::random_words(rng_, 1, 6) + ".";
    if (roll < 27) return "Assistant, sommelier please";
    if (roll < 30) return "";
    std::string out = testing::coin(rng_) ? "Let me look.\n" : "";
    for (auto n = testing::uniform(rng_, 1, 3); n > 0; --n) out += testing::pick(rng_, kRequests) + "\n";
    return out;
  }

  int calls = 0;

 private:
  testing::Rng rng_;
};

}  // namespace

TEST_CASE("property: every turn terminates within max_steps") {
  const auto registry = shipped();
  int forced = 0;
  int errors = 0;
  for (std::uint64_t trial = 0; trial < 500; ++trial) {
    auto backend = std::make_shared<ChaosBackend>(trial);
    const Engine engine(registry, backend, {}, std::make_shared<LogicalClock>());
    testing::Rng rng(trial * 7919);
    const int max_steps = static_cast<int>(testing::uniform(rng, 1, 10));
    auto session = new_session({max_steps, 4096, std::nullopt});

    for (int turn = 0; turn < 3; ++turn) {
      const auto before = dump(session);
      const auto before_messages = session.messages().size();
      const int calls_before = backend->calls;
      std::vector<MediaInput> media;
      if (turn == 0) media = {{"images/kitchen.png", MediaKind::image}, {"images/street.jpg", MediaKind::image}};
      try {
        const auto r = engine.run_turn(session, "question " + std::to_string(turn), media);
        CHECK(r.steps_used >= 1);
        CHECK(r.steps_used <= max_steps);
        CHECK(backend->calls - calls_before == r.steps_used);
        check_trace_shape(r, session.turn_counter());
        const auto& fin = std::get<FinalDetail>(r.trace.back().detail);
        if (fin.forced) ++forced;
        const auto& m = session.messages();
        CHECK(m[before_messages].role == Role::user);
        CHECK(m.back().role == Role::assistant_final);
        CHECK(m.back().text == r.final_text);
        for (auto i = before_messages + 1; i + 1 < m.size(); ++i) {
          REQUIRE(m[i].step.has_value());
          CHECK(*m[i].step >= 1);
          CHECK(*m[i].step <= static_cast<int>(r.trace.size()));
        }
      } catch (const Error& e) {
        CHECK(e.code() == Errc::backend_error);
        CHECK(dump(session) == before);
        ++errors;
      }
    }
  }
  CHECK(forced > 0);
  CHECK(errors > 0);
}
