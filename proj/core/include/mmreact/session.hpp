#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mmreact {

enum class MediaKind { image, video };

std::string_view to_string(MediaKind kind) noexcept;
MediaKind media_kind_from_string(std::string_view name);

// A non-text input. The path is an opaque placeholder: it is stored exactly
// as given and its content is never inspected.
struct MediaHandle {
  std::string id;
  MediaKind kind = MediaKind::image;
  std::string path;
  std::string display_name;

  friend bool operator==(const MediaHandle&, const MediaHandle&) = default;
};

enum class Role { user, assistant_final, thought, action_request, observation, system };

std::string_view to_string(Role role) noexcept;
Role role_from_string(std::string_view name);

// thought, action_request and observation are internal; user and
// assistant_final are shown to the user. system messages are internal too.
bool is_user_visible(Role role) noexcept;
bool is_internal_step(Role role) noexcept;

struct Message {
  Role role = Role::user;
  std::string text;
  std::vector<std::string> media;  // MediaHandle ids
  std::optional<int> step;
  std::uint64_t timestamp = 0;  // monotonic nanoseconds

  friend bool operator==(const Message&, const Message&) = default;
};

struct SessionConfig {
  int max_steps = 10;
  std::size_t token_budget = 4096;
  // Unset means min(512, token_budget / 2).
  std::optional<std::size_t> reserved_for_completion;

  std::size_t effective_reserved() const noexcept;
  // Throws Error{invalid_config}.
  void validate() const;

  friend bool operator==(const SessionConfig&, const SessionConfig&) = default;
};

// Last path segment, ignoring query strings and trailing slashes.
std::string default_display_name(std::string_view path);

class SessionState {
 public:
  // Throws Error{invalid_config} when the config is out of range.
  static SessionState create(const SessionConfig& config);

  const std::string& id() const noexcept { return id_; }
  const SessionConfig& config() const noexcept { return config_; }
  const std::vector<Message>& messages() const noexcept { return messages_; }
  const std::vector<MediaHandle>& media() const noexcept { return media_; }
  int turn_counter() const noexcept { return turn_counter_; }

  // Throws Error{duplicate_path} or Error{invalid_message} for an empty path.
  const MediaHandle& register_media(std::string path, MediaKind kind);
  // Throws Error{dangling_media} or Error{invalid_message}.
  void append(Message message);
  void complete_turn() noexcept { ++turn_counter_; }

  const MediaHandle* find_media(std::string_view id) const noexcept;
  const MediaHandle* find_media_by_path(std::string_view path) const noexcept;

  // Messages whose role is user-visible, original order.
  std::vector<Message> visible_transcript() const;

  // Path of the media most recently referenced by the dialogue: the newest
  // action request carrying a path, or the newest message with attached media.
  std::optional<std::string> last_referenced_path() const;

  friend void to_json(nlohmann::json& j, const SessionState& s);
  friend void from_json(const nlohmann::json& j, SessionState& s);

 private:
  std::string id_;
  SessionConfig config_;
  std::vector<Message> messages_;
  std::vector<MediaHandle> media_;
  int turn_counter_ = 0;
};

// Free-function forms of the session operations.
inline SessionState new_session(const SessionConfig& config) { return SessionState::create(config); }
inline std::vector<Message> visible_transcript(const SessionState& s) { return s.visible_transcript(); }

void to_json(nlohmann::json& j, const MediaHandle& m);
void from_json(const nlohmann::json& j, MediaHandle& m);
void to_json(nlohmann::json& j, const Message& m);
void from_json(const nlohmann::json& j, Message& m);
void to_json(nlohmann::json& j, const SessionConfig& c);
void from_json(const nlohmann::json& j, SessionConfig& c);

std::string random_token(std::size_t bytes = 16);

}  // namespace mmreact
