#include <doctest.h>

#include "mmreact/error.hpp"
#include "mmreact/prompting.hpp"
#include "support.hpp"

using namespace mmreact;

namespace {

ExpertRegistry one_expert(std::string name = "captioning") {
  ExpertRegistry r;
  auto d = testing::descriptor(std::move(name), InputSpec::image_path, OutputKind::plain_text, {"caption"});
  d.examples = {{"What is in <a.png>?", "Assistant, captioning <a.png>"},
                {"Describe <b.png>", "Assistant, captioning <b.png>"},
                {"And <c.png>?", "Assistant, captioning <c.png>"}};
  r.add(d, testing::constant(RawExpertOutput::text("x")));
  return r;
}

std::size_t count(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

// ceil(code points / 4), computed independently of the library.
std::size_t oracle_tokens(const std::string& s) {
  std::size_t cp = 0;
  for (unsigned char c : s) cp += (c & 0xC0) != 0x80;
  return cp / 4 + (cp % 4 != 0);
}

Message msg(Role role, std::string text, std::optional<int> step = std::nullopt,
            std::vector<std::string> media = {}) {
  return Message{role, std::move(text), std::move(media), step, 0};
}

}  // namespace

TEST_CASE("estimate_tokens") {
  CHECK(estimate_tokens("") == 0);
  CHECK(estimate_tokens("a") == 1);
  CHECK(estimate_tokens("abcd") == 1);
  CHECK(estimate_tokens("abcde") == 2);
  const std::string s4000(4000, 'x');
  const auto est = estimate_tokens(s4000);
  CHECK(est == oracle_tokens(s4000));
  CHECK(est >= 750);
  CHECK(est <= 1250);
  // Code points, not bytes.
  CHECK(estimate_tokens("éééé") == 1);
  CHECK(count_code_points("× ÷") == 3);
}

TEST_CASE("property: estimate_tokens is monotone under concatenation") {
  testing::Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto a = testing::random_words(rng, 0, 20);
    const auto b = testing::random_words(rng, 0, 20);
    const auto ab = estimate_tokens(a + b);
    CHECK(ab >= std::max(estimate_tokens(a), estimate_tokens(b)));
    CHECK(estimate_tokens(a + a) >= estimate_tokens(a));
    CHECK(estimate_tokens(a) == oracle_tokens(a));
  }
}

TEST_CASE("TokenBudget") {
  CHECK(TokenBudget{4096, 512}.available() == 3584);
  CHECK_THROWS_AS(TokenBudget({100, 100}).validate(), Error);
  CHECK_THROWS_AS(TokenBudget({100, 0}).validate(), Error);
  const auto b = TokenBudget::from(SessionConfig{});
  CHECK(b.limit == 4096);
  CHECK(b.reserved_for_completion == 512);
}

TEST_CASE("build_prefix with one expert") {
  const auto p = build_prefix(one_expert());
  REQUIRE(p.expert_blocks.size() == 1);
  CHECK(p.expert_blocks[0].find("Name: captioning") == 0);
  CHECK(p.expert_blocks[0].find("Capability: Test expert captioning.") != std::string::npos);
  CHECK(p.expert_blocks[0].find("Input: an image file path") != std::string::npos);
  CHECK(p.expert_blocks[0].find("Output: plain text") != std::string::npos);
  CHECK(count(p.system_instructions, "Name: ") == 1);
  // Two examples by default, even though three are available.
  CHECK(p.example_dialogues.size() == 2);
  CHECK(p.system_instructions.find("Assistant, captioning <a.png>") != std::string::npos);
  CHECK(p.system_instructions.find("Assistant, captioning <c.png>") == std::string::npos);
  // Ends by restating the watchword convention.
  CHECK(p.system_instructions.ends_with("only lines that start with \"Assistant,\" are sent to experts."));
}

TEST_CASE("build_prefix keeps registration order, one block per expert") {
  ExpertRegistry r;
  const std::vector<std::string> names{"zeta", "alpha", "mid"};
  for (const auto& n : names) {
    r.add(testing::descriptor(n, InputSpec::text, OutputKind::plain_text),
          testing::constant(RawExpertOutput::text("x")));
  }
  const auto p = build_prefix(r);
  REQUIRE(p.expert_blocks.size() == 3);
  for (std::size_t i = 0; i < names.size(); ++i) {
    CHECK(p.expert_blocks[i].find("Name: " + names[i]) == 0);
  }
  const auto z = p.system_instructions.find("Name: zeta");
  const auto a = p.system_instructions.find("Name: alpha");
  const auto m = p.system_instructions.find("Name: mid");
  CHECK(z < a);
  CHECK(a < m);
  // No examples anywhere.
  CHECK(p.example_dialogues.empty());
  CHECK(p.system_instructions.find("(none)") != std::string::npos);
}

TEST_CASE("build_prefix: expert without examples gets none") {
  auto r = one_expert();
  r.add(testing::descriptor("bare", InputSpec::text, OutputKind::plain_text),
        testing::constant(RawExpertOutput::text("x")));
  const auto p = build_prefix(r);
  CHECK(p.expert_blocks.size() == 2);
  for (const auto& ex : p.example_dialogues) CHECK(ex.find("[bare]") == std::string::npos);
}

TEST_CASE("build_prefix is pure and honours options") {
  const auto r = testing::shipped_registry();
  CHECK(build_prefix(r).system_instructions == build_prefix(r).system_instructions);
  CHECK(build_prefix(r).expert_blocks.size() == r.size());

  PrefixOptions opts;
  opts.watchword = "Helper:";
  opts.examples_per_expert = 0;
  const auto p = build_prefix(r, opts);
  CHECK(p.example_dialogues.empty());
  CHECK(p.system_instructions.find("Helper: image_captioning <photo.png>") != std::string::npos);

  CHECK_THROWS_AS(build_prefix(ExpertRegistry{}), Error);
}

TEST_CASE("shipped template file matches the built-in template") {
  const auto file = load_prefix_template(testing::data_dir() / "templates" / "prefix.txt");
  CHECK(file == default_prefix_template());

  testing::TempDir dir;
  testing::write_file(dir / "bad.txt", "no placeholders here");
  CHECK_THROWS_AS(load_prefix_template(dir / "bad.txt"), Error);
  CHECK_THROWS_AS(load_prefix_template(dir / "missing.txt"), Error);
}

TEST_CASE("render_message appends attached paths for user messages") {
  auto s = new_session({});
  const auto id = s.register_media("/r/1.png", MediaKind::image).id;
  s.append(msg(Role::user, "total?", std::nullopt, {id}));
  CHECK(render_message(s.messages()[0], s) == "total?\n</r/1.png>");
  s.append(msg(Role::user, "", std::nullopt, {id}));
  CHECK(render_message(s.messages()[1], s) == "</r/1.png>");
}

TEST_CASE("render_dialogue includes everything when under budget") {
  const auto prefix = build_prefix(one_expert());
  auto s = new_session({});
  s.append(msg(Role::user, "hello"));
  s.append(msg(Role::thought, "hmm", 1));
  s.append(msg(Role::action_request, "Assistant, captioning <a>", 1));
  s.append(msg(Role::observation, "Observation from captioning:\na cat", 2));
  s.append(msg(Role::assistant_final, "A cat."));
  const auto in = render_dialogue(s, prefix, TokenBudget{4096, 512});
  REQUIRE(in.segments.size() == 6);
  CHECK(in.segments[0].role == SegmentRole::system);
  CHECK(in.segments[0].text == prefix.system_instructions);
  CHECK(in.segments[1].role == SegmentRole::user);
  CHECK(in.segments[2].role == SegmentRole::assistant);
  CHECK(in.segments[3].role == SegmentRole::assistant);
  CHECK(in.segments[4].role == SegmentRole::user);
  CHECK(in.segments[5].text == "A cat.");
  CHECK(in.flatten() == prefix.system_instructions + "\n\nhello\n\nhmm\n\nAssistant, captioning <a>\n\n"
                                                     "Observation from captioning:\na cat\n\nA cat.");
  CHECK(in.estimated_tokens() == oracle_tokens(in.flatten()));
}

TEST_CASE("render_dialogue: prefix larger than budget is impossible") {
  const auto prefix = build_prefix(testing::shipped_registry());
  auto s = new_session({});
  s.append(msg(Role::user, "hi"));
  try {
    render_dialogue(s, prefix, TokenBudget{256, 128});
    FAIL("expected budget-impossible");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::budget_impossible);
  }
}

TEST_CASE("render_dialogue: latest user message too long is impossible") {
  const auto prefix = build_prefix(one_expert());
  auto s = new_session({});
  s.append(msg(Role::user, std::string(20000, 'x')));
  CHECK_THROWS_AS(render_dialogue(s, prefix, TokenBudget{4096, 512}), Error);
}

TEST_CASE("eviction drops old internal messages before old turns") {
  PromptPrefix prefix;
  prefix.system_instructions = "P";
  auto s = new_session({});
  const std::string big(400, 'i');  // 100 tokens
  s.append(msg(Role::user, "old question"));
  s.append(msg(Role::thought, big, 1));
  s.append(msg(Role::observation, big, 2));
  s.append(msg(Role::assistant_final, "old answer"));
  s.append(msg(Role::user, "new question"));
  s.append(msg(Role::thought, "short", 1));

  // 852 characters in all; 60 tokens forces out both internal messages.
  const TokenBudget budget{90, 30};
  const auto keep = plan_retention(s, prefix, budget);
  CHECK(keep == std::vector<bool>{true, false, false, true, true, true});
  CHECK(render_dialogue(s, prefix, budget).estimated_tokens() <= budget.available());

  // Tighter: the old turn goes too, the current turn never does.
  const TokenBudget tight{16, 8};
  const auto keep2 = plan_retention(s, prefix, tight);
  CHECK(keep2 == std::vector<bool>{false, false, false, false, true, true});
}

TEST_CASE("eviction keeps a turn whose media is referenced later") {
  PromptPrefix prefix;
  prefix.system_instructions = "P";
  auto s = new_session({});
  const auto id = s.register_media("receipt1.png", MediaKind::image).id;
  s.append(msg(Role::user, "first " + std::string(200, 'a'), std::nullopt, {id}));
  s.append(msg(Role::assistant_final, "saved " + std::string(200, 'b')));
  s.append(msg(Role::user, "second " + std::string(200, 'c')));
  s.append(msg(Role::assistant_final, "ok " + std::string(200, 'd')));
  s.append(msg(Role::user, "what is in <receipt1.png>?"));

  const TokenBudget budget{150, 20};
  const auto keep = plan_retention(s, prefix, budget);
  CHECK(keep[0]);
  CHECK(keep[1]);
  CHECK_FALSE(keep[2]);
  CHECK_FALSE(keep[3]);
  CHECK(keep[4]);
}

TEST_CASE("property: random 200-message sessions fit the budget") {
  testing::Rng rng(2023);
  const auto prefix = build_prefix(testing::shipped_registry());
  const TokenBudget budget{4096, 512};
  const std::vector<Role> internal{Role::thought, Role::action_request, Role::observation};

  for (int trial = 0; trial < 50; ++trial) {
    auto s = new_session({});
    int step = 0;
    for (int i = 0; i < 200; ++i) {
      const bool last = i == 199;
      const auto r = testing::uniform(rng, 0, 9);
      const auto text = testing::random_words(rng, 1, 60);
      if (last || r < 2) {
        std::vector<std::string> media;
        if (testing::coin(rng, 0.3)) {
          media.push_back(s.register_media("img" + std::to_string(i) + ".png", MediaKind::image).id);
        }
        s.append(msg(Role::user, text, std::nullopt, media));
        step = 0;
      } else if (r < 4) {
        s.append(msg(Role::assistant_final, text));
      } else {
        std::string t = text;
        if (testing::coin(rng, 0.2) && !s.media().empty()) t += " <" + testing::pick(rng, s.media()).path + ">";
        s.append(msg(testing::pick(rng, internal), t, ++step));
      }
    }

    const auto keep = plan_retention(s, prefix, budget);
    const auto input = render_dialogue(s, prefix, budget);
    CHECK(oracle_tokens(input.flatten()) <= budget.available());
    CHECK(input.segments.front().text == prefix.system_instructions);

    const auto& m = s.messages();
    std::size_t current = m.size() - 1;
    CHECK(m[current].role == Role::user);
    CHECK(keep[current]);
    CHECK(input.segments.back().text == render_message(m[current], s));

    // Policy: internal messages are dropped oldest first, and user turns go
    // only after every older internal message is gone.
    bool seen_kept_internal = false;
    bool dropped_visible = false;
    for (std::size_t i = 0; i < current; ++i) {
      if (is_internal_step(m[i].role)) {
        if (keep[i]) seen_kept_internal = true;
        else CHECK_FALSE(seen_kept_internal);
      } else if (!keep[i]) {
        dropped_visible = true;
      }
    }
    if (dropped_visible) {
      for (std::size_t i = 0; i < current; ++i) {
        if (is_internal_step(m[i].role)) CHECK_FALSE(keep[i]);
      }
    }
  }
}
