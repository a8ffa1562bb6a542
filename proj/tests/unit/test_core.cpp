#include <doctest.h>

#include <nlohmann/json.hpp>

#include "mmreact/clock.hpp"
#include "mmreact/error.hpp"
#include "mmreact/session.hpp"
#include "support.hpp"

using namespace mmreact;

namespace {

Message user(std::string text, std::vector<std::string> media = {}) {
  return Message{Role::user, std::move(text), std::move(media), std::nullopt, 0};
}

Message internal(Role role, std::string text, int step) {
  return Message{role, std::move(text), {}, step, 0};
}

Message final_answer(std::string text) {
  return Message{Role::assistant_final, std::move(text), {}, std::nullopt, 0};
}

std::vector<Role> roles(const std::vector<Message>& messages) {
  std::vector<Role> out;
  for (const auto& m : messages) out.push_back(m.role);
  return out;
}

}  // namespace

TEST_CASE("new_session starts empty") {
  auto s = new_session({10, 4096, std::nullopt});
  CHECK(s.messages().empty());
  CHECK(s.media().empty());
  CHECK(s.turn_counter() == 0);
  CHECK(s.id().size() == 32);
}

TEST_CASE("new_session rejects out-of-range limits") {
  CHECK_THROWS_AS(new_session({0, 4096, std::nullopt}), Error);
  try {
    new_session({0, 4096, std::nullopt});
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_config);
  }
  CHECK_THROWS_AS(new_session({10, 255, std::nullopt}), Error);
  CHECK_NOTHROW(new_session({1, 256, std::nullopt}));
  CHECK_THROWS_AS(new_session({10, 4096, 4096}), Error);
  CHECK_THROWS_AS(new_session({10, 4096, 0}), Error);
}

TEST_CASE("reserved_for_completion defaults to 512 and shrinks for small budgets") {
  CHECK(SessionConfig{10, 4096, std::nullopt}.effective_reserved() == 512);
  CHECK(SessionConfig{10, 256, std::nullopt}.effective_reserved() == 128);
  CHECK(SessionConfig{10, 4096, 100}.effective_reserved() == 100);
}

TEST_CASE("two sessions get distinct ids") {
  SessionConfig c;
  CHECK(new_session(c).id() != new_session(c).id());
}

TEST_CASE("register_media stores paths verbatim") {
  auto s = new_session({});
  const auto& h = s.register_media("/tmp/receipt1.png", MediaKind::image);
  CHECK(h.path == "/tmp/receipt1.png");
  CHECK(h.kind == MediaKind::image);
  CHECK(h.display_name == "receipt1.png");

  const auto& v = s.register_media("https://host/video.mp4", MediaKind::video);
  CHECK(v.kind == MediaKind::video);
  CHECK(v.path == "https://host/video.mp4");
  CHECK(v.display_name == "video.mp4");

  // Not canonicalized: these are different strings.
  CHECK_NOTHROW(s.register_media("/tmp/./receipt1.png", MediaKind::image));
  CHECK(s.media().size() == 3);
}

TEST_CASE("register_media rejects duplicates and empty paths") {
  auto s = new_session({});
  s.register_media("a.png", MediaKind::image);
  try {
    s.register_media("a.png", MediaKind::video);
    FAIL("expected duplicate-path");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::duplicate_path);
  }
  CHECK_THROWS_AS(s.register_media("", MediaKind::image), Error);
  CHECK(s.media().size() == 1);
  CHECK(s.media()[0].kind == MediaKind::image);
}

TEST_CASE("append_message") {
  auto s = new_session({});

  SUBCASE("appends at the end") {
    s.append(user("hi"));
    CHECK(s.messages().size() == 1);
    s.append(final_answer("hello"));
    CHECK(s.messages().back().text == "hello");
    CHECK(s.messages().front().text == "hi");
  }
  SUBCASE("unknown media id is dangling") {
    try {
      s.append(user("look", {"media-9"}));
      FAIL("expected dangling-media");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::dangling_media);
    }
    CHECK(s.messages().empty());
  }
  SUBCASE("thought keeps its step") {
    s.append(internal(Role::thought, "thinking", 3));
    REQUIRE(s.messages().back().step.has_value());
    CHECK(*s.messages().back().step == 3);
  }
  SUBCASE("step is required exactly for internal roles") {
    CHECK_THROWS_AS(s.append(Message{Role::thought, "x", {}, std::nullopt, 0}), Error);
    CHECK_THROWS_AS(s.append(Message{Role::user, "x", {}, 1, 0}), Error);
    CHECK_THROWS_AS(s.append(Message{Role::assistant_final, "x", {}, 2, 0}), Error);
  }
  SUBCASE("empty text only for pure uploads") {
    CHECK_THROWS_AS(s.append(user("")), Error);
    const auto id = s.register_media("a.png", MediaKind::image).id;
    CHECK_NOTHROW(s.append(user("", {id})));
    CHECK_THROWS_AS(s.append(final_answer("")), Error);
  }
}

TEST_CASE("visible_transcript filters by role") {
  auto s = new_session({});
  CHECK(s.visible_transcript().empty());

  s.append(user("q"));
  s.append(internal(Role::thought, "t", 1));
  s.append(internal(Role::action_request, "a", 1));
  s.append(internal(Role::observation, "o", 2));
  s.append(final_answer("f"));
  CHECK(roles(s.visible_transcript()) == std::vector<Role>{Role::user, Role::assistant_final});

  auto s2 = new_session({});
  s2.append(user("1"));
  s2.append(final_answer("2"));
  s2.append(user("3"));
  s2.append(internal(Role::thought, "4", 1));
  const auto vis = visible_transcript(s2);
  REQUIRE(vis.size() == 3);
  CHECK(vis[0].text == "1");
  CHECK(vis[1].text == "2");
  CHECK(vis[2].text == "3");
}

TEST_CASE("role visibility table") {
  CHECK(is_user_visible(Role::user));
  CHECK(is_user_visible(Role::assistant_final));
  for (auto r : {Role::thought, Role::action_request, Role::observation, Role::system}) {
    CHECK_FALSE(is_user_visible(r));
  }
  CHECK(is_internal_step(Role::thought));
  CHECK(is_internal_step(Role::action_request));
  CHECK(is_internal_step(Role::observation));
  CHECK_FALSE(is_internal_step(Role::system));
}

TEST_CASE("last_referenced_path follows the newest message with media") {
  auto s = new_session({});
  CHECK_FALSE(s.last_referenced_path().has_value());
  const auto a = s.register_media("a.png", MediaKind::image).id;
  const auto b = s.register_media("b.png", MediaKind::image).id;
  s.append(user("two", {a, b}));
  CHECK(s.last_referenced_path() == "b.png");
  s.append(Message{Role::action_request, "Assistant, ocr <a.png>", {a}, 1, 0});
  CHECK(s.last_referenced_path() == "a.png");
  s.append(internal(Role::observation, "Observation from ocr:\nhi", 2));
  CHECK(s.last_referenced_path() == "a.png");
}

TEST_CASE("display names") {
  CHECK(default_display_name("/a/b/c.png") == "c.png");
  CHECK(default_display_name("https://x.org/v/clip.mp4?sig=1") == "clip.mp4");
  CHECK(default_display_name("dir/") == "dir");
  CHECK(default_display_name("plain") == "plain");
}

TEST_CASE("json round trip preserves the visible transcript") {
  auto s = new_session({5, 2048, 256});
  const auto id = s.register_media("/x/kitchen.png", MediaKind::image).id;
  s.append(user("what is this?", {id}));
  s.append(internal(Role::action_request, "Assistant, caption <x>", 1));
  s.append(internal(Role::observation, "Observation from image_captioning:\nkitchen", 2));
  s.append(final_answer("A kitchen."));
  s.complete_turn();

  const nlohmann::json j = s;
  const auto back = j.get<SessionState>();
  CHECK(back.id() == s.id());
  CHECK(back.config() == s.config());
  CHECK(back.turn_counter() == 1);
  CHECK(back.media() == s.media());
  CHECK(back.messages() == s.messages());
  CHECK(back.visible_transcript() == s.visible_transcript());
}

TEST_CASE("json rejects dangling media on load") {
  auto s = new_session({});
  s.append(user("x"));
  nlohmann::json j = s;
  j["messages"][0]["media"] = {"media-4"};
  CHECK_THROWS_AS(j.get<SessionState>(), Error);
}

TEST_CASE("error codes have stable names") {
  CHECK(to_string(Errc::budget_impossible) == "budget-impossible");
  CHECK(to_string(Errc::malformed_action) == "malformed-action");
  CHECK(to_string(Errc::session_busy) == "session-busy");
  Error e(Errc::unknown_expert, "nope");
  CHECK(e.code() == Errc::unknown_expert);
  CHECK(std::string(e.what()) == "nope");
}

TEST_CASE("logical clock is strictly increasing") {
  LogicalClock clock(5);
  const auto a = clock.now_ns();
  const auto b = clock.now_ns();
  CHECK(a == 5);
  CHECK(b == 10);
  SteadyClock steady;
  const auto t0 = steady.now_ns();
  const auto t1 = steady.now_ns();
  CHECK(t0 <= t1);
}

TEST_CASE("property: visible transcript is an order-preserving filter") {
  testing::Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = new_session({});
    std::size_t registered = 0;
    const auto n = testing::uniform(rng, 0, 40);
    for (std::size_t i = 0; i < n; ++i) {
      switch (testing::uniform(rng, 0, 5)) {
        case 0:
          s.register_media("p" + std::to_string(i) + ".png", MediaKind::image);
          ++registered;
          break;
        case 1: s.append(user("u" + std::to_string(i))); break;
        case 2: s.append(final_answer("f" + std::to_string(i))); break;
        case 3: s.append(internal(Role::thought, "t" + std::to_string(i), 1)); break;
        case 4: s.append(internal(Role::observation, "o" + std::to_string(i), 2)); break;
        default:
          // Rejected registrations do not count.
          if (!s.media().empty()) CHECK_THROWS(s.register_media(s.media().front().path, MediaKind::image));
      }
    }
    CHECK(s.media().size() == registered);
    const auto vis = s.visible_transcript();
    std::size_t j = 0;
    for (const auto& m : s.messages()) {
      if (j < vis.size() && m == vis[j]) ++j;
    }
    CHECK(j == vis.size());
    for (const auto& m : vis) CHECK(is_user_visible(m.role));
  }
}
