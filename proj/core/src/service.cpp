#include "mmreact/service.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mmreact/digest.hpp"
#include "mmreact/error.hpp"

namespace mmreact {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sse_frame(const TraceEvent& event) {
  return "event: " + std::string(to_string(event.kind)) + "\nid: " + std::to_string(event.step) +
         "\ndata: " + trace_record(event) + "\n\n";
}

// ---------------------------------------------------------------------------
// Media storage

MediaStore::MediaStore(fs::path root) : root_(std::move(root)) {}

namespace {

std::string safe_extension(std::string_view filename) {
  std::string ext = fs::path(std::string(filename)).extension().string();
  if (ext.size() < 2 || ext.size() > 8) return {};
  for (char& c : ext) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (c != '.' && !std::isalnum(static_cast<unsigned char>(c))) return {};
  }
  return ext;
}

}  // namespace

fs::path MediaStore::store(const Upload& upload) const {
  const fs::path target = fs::absolute(root_ / (sha256_hex(upload.bytes) + safe_extension(upload.filename)));
  std::error_code ec;
  if (fs::exists(target, ec) && fs::file_size(target, ec) == upload.bytes.size()) return target;
  fs::create_directories(root_, ec);
  const fs::path tmp = target.string() + ".tmp-" + random_token(4);
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(upload.bytes.data(), static_cast<std::streamsize>(upload.bytes.size()));
    if (!out) throw Error(Errc::storage_failure, "cannot write " + tmp.string());
  }
  fs::rename(tmp, target, ec);
  if (ec) throw Error(Errc::storage_failure, "cannot store upload: " + ec.message());
  return target;
}

MediaKind MediaStore::classify(const Upload& upload) {
  if (upload.content_type.starts_with("video/")) return MediaKind::video;
  static constexpr std::array<std::string_view, 6> kVideo{".mp4", ".mov", ".avi", ".mkv", ".webm", ".m4v"};
  const auto ext = safe_extension(upload.filename);
  return std::find(kVideo.begin(), kVideo.end(), ext) != kVideo.end() ? MediaKind::video
                                                                        : MediaKind::image;
}

// ---------------------------------------------------------------------------
// Live event channel

namespace {

// Events of the most recent turn of one session. `generation` counts turns
// started; subscribers follow one generation at a time.
struct Channel {
  enum class State { idle, running, finished, aborted };

  std::mutex mu;
  std::condition_variable cv;
  std::uint64_t generation = 0;
  State state = State::idle;
  std::vector<TraceEvent> events;
  std::string abort_message;
  bool closed = false;

  void begin() {
    std::lock_guard lock(mu);
    ++generation;
    state = State::running;
    events.clear();
    abort_message.clear();
    cv.notify_all();
  }
  void push(const TraceEvent& e) {
    std::lock_guard lock(mu);
    events.push_back(e);
    cv.notify_all();
  }
  void end(State s, std::string message = {}) {
    std::lock_guard lock(mu);
    state = s;
    abort_message = std::move(message);
    cv.notify_all();
  }
  void close() {
    std::lock_guard lock(mu);
    closed = true;
    cv.notify_all();
  }
};

class ChannelFeed final : public EventFeed {
 public:
  explicit ChannelFeed(std::shared_ptr<Channel> channel) : channel_(std::move(channel)) {
    std::lock_guard lock(channel_->mu);
    if (channel_->state == Channel::State::running) {
      target_ = channel_->generation;
    } else {
      target_ = channel_->generation + 1;
      greet_ = true;
    }
  }

  FeedItem next(std::chrono::milliseconds timeout) override {
    if (greet_) {
      greet_ = false;
      return {FeedItem::Kind::heartbeat, {}, {}};
    }
    std::unique_lock lock(channel_->mu);
    const bool ready = channel_->cv.wait_for(lock, timeout, [&] {
      if (channel_->closed || channel_->generation > target_) return true;
      if (channel_->generation < target_) return false;
      return cursor_ < channel_->events.size() || channel_->state != Channel::State::running;
    });
    if (!ready) return {FeedItem::Kind::heartbeat, {}, {}};
    if (channel_->generation > target_) {
      // The followed turn was superseded before we caught up; follow the new one.
      target_ = channel_->generation;
      cursor_ = 0;
    }
    if (cursor_ < channel_->events.size()) return {FeedItem::Kind::event, channel_->events[cursor_++], {}};
    if (channel_->closed) return {FeedItem::Kind::closed, {}, {}};
    if (channel_->state == Channel::State::aborted) {
      return {FeedItem::Kind::aborted, {}, channel_->abort_message};
    }
    return {FeedItem::Kind::closed, {}, {}};
  }

 private:
  std::shared_ptr<Channel> channel_;
  std::uint64_t target_ = 0;
  std::size_t cursor_ = 0;
  bool greet_ = false;
};

struct Slot {
  std::mutex mu;  // guards state, trace and busy
  SessionState state;
  std::vector<TraceEvent> trace;
  bool busy = false;
  std::shared_ptr<Channel> channel = std::make_shared<Channel>();
};

int http_status(Errc code) {
  switch (code) {
    case Errc::unknown_session: return 404;
    case Errc::session_busy:
    case Errc::duplicate_path: return 409;
    case Errc::budget_impossible: return 422;
    case Errc::backend_error:
    case Errc::transport_error: return 502;
    case Errc::storage_failure: return 500;
    default: return 400;
  }
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  res.status = status;
  res.set_content(json{{"error", code}, {"message", message}}.dump(), "application/json");
}

}  // namespace

// ---------------------------------------------------------------------------
// Service

struct Service::Impl {
  ServiceOptions options;
  std::shared_ptr<const Engine> engine;
  Service* owner = nullptr;
  MediaStore media;
  fs::path session_dir;

  mutable std::mutex mu;  // guards slots
  std::map<std::string, std::shared_ptr<Slot>, std::less<>> slots;

  httplib::Server server;
  std::thread thread;

  Impl(ServiceOptions opts, std::shared_ptr<const Engine> eng)
      : options(std::move(opts)),
        engine(std::move(eng)),
        media(options.data_dir / "media"),
        session_dir(options.data_dir / "sessions") {}

  std::shared_ptr<Slot> slot(std::string_view id) const {
    std::lock_guard lock(mu);
    auto it = slots.find(id);
    if (it == slots.end()) throw Error(Errc::unknown_session, "no session " + std::string(id));
    return it->second;
  }

  fs::path log_path(std::string_view id) const { return session_dir / (std::string(id) + ".jsonl"); }

  void append_records(std::string_view id, const std::vector<json>& records) const {
    std::error_code ec;
    fs::create_directories(session_dir, ec);
    std::string chunk;
    for (const auto& r : records) chunk += r.dump() + '\n';
    std::ofstream out(log_path(id), std::ios::binary | std::ios::app);
    out << chunk;
    out.flush();
    if (!out) throw Error(Errc::storage_failure, "cannot write session log for " + std::string(id));
  }

  // Rebuilds sessions from their logs. Records of a turn become visible only
  // once its turn_end record is read, so a torn write loses one turn at most.
  void replay() {
    std::error_code ec;
    if (!fs::is_directory(session_dir, ec)) return;
    for (const auto& entry : fs::directory_iterator(session_dir, ec)) {
      if (entry.path().extension() != ".jsonl") continue;
      std::ifstream in(entry.path(), std::ios::binary);
      json doc;
      std::vector<TraceEvent> trace;
      json pending_media = json::array();
      json pending_messages = json::array();
      std::vector<TraceEvent> pending_trace;
      std::string line;
      std::uintmax_t committed = 0;
      std::uintmax_t offset = 0;
      try {
        while (std::getline(in, line)) {
          offset += line.size() + 1;
          if (line.empty()) continue;
          const auto rec = json::parse(line, nullptr, false);
          if (rec.is_discarded()) break;
          const auto type = rec.value("type", "");
          if (type == "session") {
            doc = {{"session_id", rec.at("id")}, {"config", rec.at("config")}, {"turn_counter", 0},
                   {"media", json::array()}, {"messages", json::array()}};
            committed = offset;
          } else if (type == "media") {
            pending_media.push_back(rec.at("handle"));
          } else if (type == "message") {
            pending_messages.push_back(rec.at("message"));
          } else if (type == "trace") {
            pending_trace.push_back(rec.at("event").get<TraceEvent>());
          } else if (type == "turn_end" && !doc.is_null()) {
            for (auto& m : pending_media) doc["media"].push_back(std::move(m));
            for (auto& m : pending_messages) doc["messages"].push_back(std::move(m));
            trace.insert(trace.end(), pending_trace.begin(), pending_trace.end());
            doc["turn_counter"] = rec.at("turn");
            pending_media = json::array();
            pending_messages = json::array();
            pending_trace.clear();
            committed = offset;
          }
        }
        if (doc.is_null()) continue;
        in.close();
        // Drop the tail of an interrupted turn so later appends start on a
        // clean line.
        if (fs::file_size(entry.path()) > committed) fs::resize_file(entry.path(), committed);
        auto slot = std::make_shared<Slot>();
        slot->state = doc.get<SessionState>();
        slot->trace = std::move(trace);
        slots[slot->state.id()] = std::move(slot);
      } catch (const std::exception&) {
        // A log that cannot be replayed is left on disk untouched.
        continue;
      }
    }
  }

  void install_routes();
};

Service::Service(ServiceOptions options, std::shared_ptr<const Engine> engine)
    : impl_(std::make_unique<Impl>(std::move(options), std::move(engine))) {
  if (!impl_->engine) throw Error(Errc::invalid_config, "service needs an engine");
  impl_->options.defaults.validate();
  impl_->owner = this;
  impl_->replay();
  impl_->install_routes();
}

Service::~Service() { stop(); }

std::string Service::create_session(const ConfigOverrides& overrides) {
  SessionConfig config = impl_->options.defaults;
  if (overrides.max_steps) config.max_steps = *overrides.max_steps;
  if (overrides.token_budget) {
    config.token_budget = *overrides.token_budget;
    if (!overrides.reserved_for_completion) config.reserved_for_completion.reset();
  }
  if (overrides.reserved_for_completion) config.reserved_for_completion = overrides.reserved_for_completion;

  auto slot = std::make_shared<Slot>();
  slot->state = SessionState::create(config);
  const std::string id = slot->state.id();
  impl_->append_records(id, {json{{"type", "session"}, {"id", id}, {"config", config}}});
  std::lock_guard lock(impl_->mu);
  impl_->slots[id] = std::move(slot);
  return id;
}

json Service::session_view(std::string_view id) const {
  auto slot = impl_->slot(id);
  std::lock_guard lock(slot->mu);
  return json{{"session_id", slot->state.id()},
              {"config", slot->state.config()},
              {"turn_counter", slot->state.turn_counter()},
              {"busy", slot->busy},
              {"media", slot->state.media()},
              {"transcript", slot->state.visible_transcript()}};
}

std::vector<Message> Service::visible_transcript(std::string_view id) const {
  auto slot = impl_->slot(id);
  std::lock_guard lock(slot->mu);
  return slot->state.visible_transcript();
}

PostResult Service::post_message(std::string_view id, std::string_view text,
                                 const std::vector<Upload>& attachments) {
  auto slot = impl_->slot(id);
  SessionState working;
  {
    std::lock_guard lock(slot->mu);
    if (slot->busy) throw Error(Errc::session_busy, "session " + std::string(id) + " is running a turn");
    slot->busy = true;
    working = slot->state;
  }
  struct Release {
    Slot& s;
    ~Release() {
      std::lock_guard lock(s.mu);
      s.busy = false;
    }
  } release{*slot};

  std::vector<MediaInput> media;
  for (const auto& upload : attachments) {
    media.push_back({impl_->media.store(upload).string(), MediaStore::classify(upload)});
  }

  const auto media_before = working.media().size();
  const auto messages_before = working.messages().size();
  auto& channel = *slot->channel;
  channel.begin();
  TurnResult result;
  try {
    result = impl_->engine->run_turn(working, text, media,
                                     [&channel](const TraceEvent& e) { channel.push(e); });
  } catch (const Error& e) {
    channel.end(Channel::State::aborted, std::string(to_string(e.code())) + ": " + e.what());
    throw;
  } catch (const std::exception& e) {
    channel.end(Channel::State::aborted, e.what());
    throw;
  }

  std::vector<json> records;
  for (auto i = media_before; i < working.media().size(); ++i) {
    records.push_back({{"type", "media"}, {"handle", working.media()[i]}});
  }
  for (auto i = messages_before; i < working.messages().size(); ++i) {
    records.push_back({{"type", "message"}, {"message", working.messages()[i]}});
  }
  for (const auto& e : result.trace) records.push_back({{"type", "trace"}, {"event", e}});
  records.push_back({{"type", "turn_end"}, {"turn", working.turn_counter()}});
  try {
    impl_->append_records(id, records);
  } catch (const Error& e) {
    channel.end(Channel::State::aborted, e.what());
    throw;
  }

  {
    std::lock_guard lock(slot->mu);
    slot->state = std::move(working);
    slot->trace.insert(slot->trace.end(), result.trace.begin(), result.trace.end());
  }
  channel.end(Channel::State::finished);
  return PostResult{result.final_text, result.steps_used, result.trace.front().turn, result.media_ids};
}

std::string Service::trace(std::string_view id) const {
  auto slot = impl_->slot(id);
  std::lock_guard lock(slot->mu);
  return export_trace(slot->trace);
}

std::vector<std::string> Service::session_ids() const {
  std::lock_guard lock(impl_->mu);
  std::vector<std::string> ids;
  for (const auto& [id, _] : impl_->slots) ids.push_back(id);
  return ids;
}

std::shared_ptr<EventFeed> Service::subscribe(std::string_view id) {
  return std::make_shared<ChannelFeed>(impl_->slot(id)->channel);
}

// ---------------------------------------------------------------------------
// HTTP

void Service::Impl::install_routes() {
  server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    if (req.method == "OPTIONS") {
      res.status = 204;
      return httplib::Server::HandlerResponse::Handled;
    }
    if (options.bearer_token.empty() || req.path == "/healthz") {
      return httplib::Server::HandlerResponse::Unhandled;
    }
    if (req.get_header_value("Authorization") != "Bearer " + options.bearer_token) {
      send_error(res, 401, "unauthorized", "missing or wrong bearer token");
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), to_string(e.code()), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "invalid-message", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  });

  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });

  server.Get("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) {
    json ids = json::array();
    {
      std::lock_guard lock(mu);
      for (const auto& [id, _] : slots) ids.push_back(id);
    }
    res.set_content(json{{"sessions", ids}}.dump(), "application/json");
  });

  server.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    ConfigOverrides overrides;
    if (!req.body.empty()) {
      const auto body = json::parse(req.body);
      if (body.contains("max_steps")) overrides.max_steps = body.at("max_steps").get<int>();
      if (body.contains("token_budget")) overrides.token_budget = body.at("token_budget").get<std::size_t>();
      if (body.contains("reserved_for_completion")) {
        overrides.reserved_for_completion = body.at("reserved_for_completion").get<std::size_t>();
      }
    }
    const auto id = owner->create_session(overrides);
    res.status = 201;
    res.set_content(json{{"session_id", id}}.dump(), "application/json");
  });

  server.Get(R"(/v1/sessions/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
    res.set_content(owner->session_view(req.matches[1].str()).dump(), "application/json");
  });

  server.Post(R"(/v1/sessions/([0-9a-f]+)/messages)",
              [this](const httplib::Request& req, httplib::Response& res) {
                std::string text;
                std::vector<Upload> uploads;
                if (req.is_multipart_form_data()) {
                  for (const auto& [name, part] : req.files) {
                    if (name == "text") {
                      text = part.content;
                    } else if (name == "attachments" || name == "attachments[]") {
                      uploads.push_back({part.filename, part.content_type, part.content});
                    }
                  }
                } else {
                  text = json::parse(req.body).at("text").get<std::string>();
                }
                const auto result = owner->post_message(req.matches[1].str(), text, uploads);
                res.set_content(json{{"final_text", result.final_text},
                                     {"steps_used", result.steps_used},
                                     {"turn", result.turn},
                                     {"media_ids", result.media_ids}}
                                    .dump(),
                                "application/json");
              });

  server.Get(R"(/v1/sessions/([0-9a-f]+)/trace)", [this](const httplib::Request& req, httplib::Response& res) {
    res.set_content(owner->trace(req.matches[1].str()), "application/x-ndjson");
  });

  server.Get(R"(/v1/sessions/([0-9a-f]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
    auto feed = owner->subscribe(req.matches[1].str());
    const auto heartbeat = options.heartbeat;
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream", [feed, heartbeat](std::size_t, httplib::DataSink& sink) {
          const auto item = feed->next(heartbeat);
          std::string frame;
          bool done = false;
          switch (item.kind) {
            case FeedItem::Kind::event:
              frame = sse_frame(item.event);
              done = item.event.kind == TraceKind::final_response;
              break;
            case FeedItem::Kind::heartbeat:
              frame = ": heartbeat\n\n";
              break;
            case FeedItem::Kind::aborted:
              frame = "event: aborted\ndata: " + json{{"message", item.message}}.dump() + "\n\n";
              done = true;
              break;
            case FeedItem::Kind::closed:
              done = true;
              break;
          }
          if (!frame.empty() && !sink.write(frame.data(), frame.size())) return false;
          if (done) sink.done();
          return true;
        });
  });
}

void Service::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw Error(Errc::invalid_config, "cannot listen on " + host + ":" + std::to_string(port));
  }
}

int Service::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(Errc::invalid_config, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Service::stop() {
  if (!impl_) return;
  {
    std::lock_guard lock(impl_->mu);
    for (auto& [_, slot] : impl_->slots) slot->channel->close();
  }
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace mmreact
