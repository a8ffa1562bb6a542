#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mmreact/orchestrate.hpp"
#include "mmreact/session.hpp"

namespace mmreact {

struct Upload {
  std::string filename;
  std::string content_type;
  std::string bytes;
};

struct ServiceOptions {
  std::filesystem::path data_dir;
  SessionConfig defaults;
  std::string bearer_token;  // empty disables the check
  std::chrono::milliseconds heartbeat{1000};
};

struct ConfigOverrides {
  std::optional<int> max_steps;
  std::optional<std::size_t> token_budget;
  std::optional<std::size_t> reserved_for_completion;
};

struct PostResult {
  std::string final_text;
  int steps_used = 0;
  int turn = 0;
  std::vector<std::string> media_ids;
};

// Stores uploads under <root>/<sha256(bytes)><ext>, keeping the original
// extension. Identical bytes map to the same absolute path.
class MediaStore {
 public:
  explicit MediaStore(std::filesystem::path root);
  // Throws Error{storage_failure}.
  std::filesystem::path store(const Upload& upload) const;
  static MediaKind classify(const Upload& upload);

 private:
  std::filesystem::path root_;
};

// One item read from a session's live event feed.
struct FeedItem {
  enum class Kind { event, heartbeat, aborted, closed };
  Kind kind = Kind::closed;
  TraceEvent event;
  std::string message;  // abort reason
};

class EventFeed;

// Hosts sessions over HTTP:
//
//   POST /v1/sessions                  -> {"session_id"}
//   GET  /v1/sessions/{id}             -> session view with visible transcript
//   POST /v1/sessions/{id}/messages    multipart: "text" field + "attachments" files
//   GET  /v1/sessions/{id}/events      server-sent events, name = trace kind
//   GET  /v1/sessions/{id}/trace       line-delimited export of every turn
//
// Every session is persisted as an append-only record log under
// <data_dir>/sessions/<id>.jsonl and reloaded on construction.
class Service {
 public:
  Service(ServiceOptions options, std::shared_ptr<const Engine> engine);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Throws Error{invalid_config}.
  std::string create_session(const ConfigOverrides& overrides = {});
  // Throws Error{unknown_session}.
  nlohmann::json session_view(std::string_view id) const;
  std::vector<Message> visible_transcript(std::string_view id) const;
  // Throws Error{unknown_session}, Error{session_busy}, Error{storage_failure},
  // Error{duplicate_path} or Error{backend_error}.
  PostResult post_message(std::string_view id, std::string_view text,
                          const std::vector<Upload>& attachments);
  std::string trace(std::string_view id) const;
  std::vector<std::string> session_ids() const;

  // Live feed of the running turn (missed events replayed first) or, for an
  // idle session, of the next turn. Throws Error{unknown_session}.
  std::shared_ptr<EventFeed> subscribe(std::string_view id);

  // HTTP. listen() blocks; start() runs the server on a background thread and
  // returns the bound port (0 picks a free one).
  void listen(const std::string& host, int port);
  int start(const std::string& host, int port = 0);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class EventFeed {
 public:
  virtual ~EventFeed() = default;
  // Blocks up to `timeout`; returns a heartbeat on timeout and on the first
  // read of a feed opened while the session was idle.
  virtual FeedItem next(std::chrono::milliseconds timeout) = 0;
};

// "event: <kind>\nid: <step>\ndata: <record>\n\n"
std::string sse_frame(const TraceEvent& event);

}  // namespace mmreact
