#include "mmreact/session.hpp"

#include <algorithm>
#include <array>
#include <random>

#include <nlohmann/json.hpp>

#include "mmreact/error.hpp"

namespace mmreact {

std::string_view to_string(MediaKind kind) noexcept {
  return kind == MediaKind::video ? "video" : "image";
}

MediaKind media_kind_from_string(std::string_view name) {
  if (name == "image") return MediaKind::image;
  if (name == "video") return MediaKind::video;
  throw Error(Errc::invalid_message, "unknown media kind: " + std::string(name));
}

namespace {

constexpr std::array<std::pair<Role, std::string_view>, 6> kRoleNames{{
    {Role::user, "user"},
    {Role::assistant_final, "assistant_final"},
    {Role::thought, "thought"},
    {Role::action_request, "action_request"},
    {Role::observation, "observation"},
    {Role::system, "system"},
}};

}  // namespace

std::string_view to_string(Role role) noexcept {
  for (const auto& [r, name] : kRoleNames) {
    if (r == role) return name;
  }
  return "user";
}

Role role_from_string(std::string_view name) {
  for (const auto& [r, n] : kRoleNames) {
    if (n == name) return r;
  }
  throw Error(Errc::invalid_message, "unknown role: " + std::string(name));
}

bool is_user_visible(Role role) noexcept {
  return role == Role::user || role == Role::assistant_final;
}

bool is_internal_step(Role role) noexcept {
  return role == Role::thought || role == Role::action_request || role == Role::observation;
}

std::size_t SessionConfig::effective_reserved() const noexcept {
  return reserved_for_completion.value_or(std::min<std::size_t>(512, token_budget / 2));
}

void SessionConfig::validate() const {
  if (max_steps < 1) {
    throw Error(Errc::invalid_config, "max_steps must be >= 1, got " + std::to_string(max_steps));
  }
  if (token_budget < 256) {
    throw Error(Errc::invalid_config,
                "token budget must be >= 256, got " + std::to_string(token_budget));
  }
  const auto reserved = effective_reserved();
  if (reserved == 0 || reserved >= token_budget) {
    throw Error(Errc::invalid_config, "reserved_for_completion must be in [1, budget)");
  }
}

std::string default_display_name(std::string_view path) {
  auto end = path.find_first_of("?#");
  std::string_view p = path.substr(0, end);
  while (!p.empty() && p.back() == '/') p.remove_suffix(1);
  auto slash = p.find_last_of("/\\");
  auto name = slash == std::string_view::npos ? p : p.substr(slash + 1);
  return name.empty() ? std::string(path) : std::string(name);
}

std::string random_token(std::size_t bytes) {
  static thread_local std::mt19937_64 rng{[] {
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd()};
    return std::mt19937_64(seq);
  }()};
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes * 2);
  for (std::size_t i = 0; i < bytes; ++i) {
    auto b = static_cast<unsigned>(rng() & 0xff);
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xf]);
  }
  return out;
}

SessionState SessionState::create(const SessionConfig& config) {
  config.validate();
  SessionState s;
  s.id_ = random_token();
  s.config_ = config;
  return s;
}

const MediaHandle& SessionState::register_media(std::string path, MediaKind kind) {
  if (path.empty()) throw Error(Errc::invalid_message, "media path must not be empty");
  if (find_media_by_path(path) != nullptr) {
    throw Error(Errc::duplicate_path, "path already registered in this session: " + path);
  }
  MediaHandle handle;
  handle.id = "media-" + std::to_string(media_.size() + 1);
  handle.kind = kind;
  handle.display_name = default_display_name(path);
  handle.path = std::move(path);
  media_.push_back(std::move(handle));
  return media_.back();
}

void SessionState::append(Message message) {
  const bool internal = is_internal_step(message.role);
  if (message.step.has_value() != internal) {
    throw Error(Errc::invalid_message,
                std::string("step must be present exactly for internal roles (role ") +
                    std::string(to_string(message.role)) + ")");
  }
  if (message.text.empty() && !(message.role == Role::user && !message.media.empty())) {
    throw Error(Errc::invalid_message, "message text must not be empty");
  }
  for (const auto& id : message.media) {
    if (find_media(id) == nullptr) {
      throw Error(Errc::dangling_media, "message references unknown media id: " + id);
    }
  }
  messages_.push_back(std::move(message));
}

const MediaHandle* SessionState::find_media(std::string_view id) const noexcept {
  auto it = std::find_if(media_.begin(), media_.end(), [&](const auto& m) { return m.id == id; });
  return it == media_.end() ? nullptr : &*it;
}

const MediaHandle* SessionState::find_media_by_path(std::string_view path) const noexcept {
  auto it =
      std::find_if(media_.begin(), media_.end(), [&](const auto& m) { return m.path == path; });
  return it == media_.end() ? nullptr : &*it;
}

std::vector<Message> SessionState::visible_transcript() const {
  std::vector<Message> out;
  std::copy_if(messages_.begin(), messages_.end(), std::back_inserter(out),
               [](const Message& m) { return is_user_visible(m.role); });
  return out;
}

std::optional<std::string> SessionState::last_referenced_path() const {
  for (auto it = messages_.rbegin(); it != messages_.rend(); ++it) {
    if (!it->media.empty()) {
      if (const auto* m = find_media(it->media.back())) return m->path;
    }
  }
  return std::nullopt;
}

void to_json(nlohmann::json& j, const MediaHandle& m) {
  j = nlohmann::json{{"id", m.id},
                     {"kind", to_string(m.kind)},
                     {"path", m.path},
                     {"display_name", m.display_name}};
}

void from_json(const nlohmann::json& j, MediaHandle& m) {
  m.id = j.at("id").get<std::string>();
  m.kind = media_kind_from_string(j.at("kind").get<std::string>());
  m.path = j.at("path").get<std::string>();
  m.display_name = j.value("display_name", default_display_name(m.path));
}

void to_json(nlohmann::json& j, const Message& m) {
  j = nlohmann::json{{"role", to_string(m.role)}, {"text", m.text}, {"timestamp", m.timestamp}};
  if (!m.media.empty()) j["media"] = m.media;
  if (m.step) j["step"] = *m.step;
}

void from_json(const nlohmann::json& j, Message& m) {
  m.role = role_from_string(j.at("role").get<std::string>());
  m.text = j.at("text").get<std::string>();
  m.timestamp = j.value("timestamp", std::uint64_t{0});
  m.media = j.value("media", std::vector<std::string>{});
  m.step = j.contains("step") ? std::optional<int>(j.at("step").get<int>()) : std::nullopt;
}

void to_json(nlohmann::json& j, const SessionConfig& c) {
  j = nlohmann::json{{"max_steps", c.max_steps}, {"token_budget", c.token_budget}};
  if (c.reserved_for_completion) j["reserved_for_completion"] = *c.reserved_for_completion;
}

void from_json(const nlohmann::json& j, SessionConfig& c) {
  c = SessionConfig{};
  c.max_steps = j.value("max_steps", c.max_steps);
  c.token_budget = j.value("token_budget", c.token_budget);
  if (j.contains("reserved_for_completion")) {
    c.reserved_for_completion = j.at("reserved_for_completion").get<std::size_t>();
  }
}

void to_json(nlohmann::json& j, const SessionState& s) {
  j = nlohmann::json{{"session_id", s.id_},
                     {"config", s.config_},
                     {"turn_counter", s.turn_counter_},
                     {"media", s.media_},
                     {"messages", s.messages_}};
}

// Rebuilds through the public mutators so a loaded state satisfies the same
// invariants as one built in memory.
void from_json(const nlohmann::json& j, SessionState& s) {
  auto config = j.at("config").get<SessionConfig>();
  SessionState out = SessionState::create(config);
  out.id_ = j.at("session_id").get<std::string>();
  for (const auto& mj : j.at("media")) {
    auto handle = mj.get<MediaHandle>();
    if (out.find_media_by_path(handle.path) != nullptr) {
      throw Error(Errc::duplicate_path, "duplicate path in stored session: " + handle.path);
    }
    out.media_.push_back(std::move(handle));
  }
  for (const auto& mj : j.at("messages")) out.append(mj.get<Message>());
  out.turn_counter_ = j.value("turn_counter", 0);
  s = std::move(out);
}

}  // namespace mmreact
