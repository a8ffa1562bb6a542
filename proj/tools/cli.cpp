#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mmreact/error.hpp"
#include "mmreact/service.hpp"

namespace mmreact::cli {

namespace {

constexpr std::string_view kDim = "\x1b[2m";
constexpr std::string_view kReset = "\x1b[0m";

constexpr std::pair<std::string_view, Directive::Kind> kDirectives[] = {
    {"upload", Directive::Kind::upload},
    {"say", Directive::Kind::say},
    {"expect_contains", Directive::Kind::expect_contains},
    {"expect_trace_kinds", Directive::Kind::expect_trace_kinds},
    {"expect_experts", Directive::Kind::expect_experts},
    {"expect_visible_roles", Directive::Kind::expect_visible_roles},
};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::invalid_config:
    case Errc::parse_error:
    case Errc::duplicate_path:
    case Errc::dangling_media:
    case Errc::invalid_message:
    case Errc::empty_registry:
      return config_error;
    default:
      return backend_failure;
  }
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += ", ";
    out += s;
  }
  return out;
}

std::string_view internal_label(Role role) {
  switch (role) {
    case Role::thought: return "thought";
    case Role::action_request: return "action";
    case Role::observation: return "observation";
    default: return "system";
  }
}

// A session plus everything both front ends need to drive it.
class Conversation {
 public:
  Conversation(const CliOptions& options, std::shared_ptr<const Engine> engine)
      : options_(options),
        engine_(std::move(engine)),
        session_(SessionState::create(options.app.limits)) {}

  void upload(std::string path) {
    const Upload probe{path, {}, {}};
    pending_.push_back({std::move(path), MediaStore::classify(probe)});
  }

  const TurnResult& say(std::string_view text, std::ostream& out) {
    const auto first_new = session_.messages().size();
    auto media = std::move(pending_);
    pending_.clear();
    last_ = engine_->run_turn(session_, text, media);
    trace_.insert(trace_.end(), last_->trace.begin(), last_->trace.end());
    if (show_reasoning_) {
      const auto& messages = session_.messages();
      for (auto i = first_new; i < messages.size(); ++i) {
        if (!is_internal_step(messages[i].role)) continue;
        std::string line = "[" + std::string(internal_label(messages[i].role)) + "] " + messages[i].text;
        if (options_.color) line = std::string(kDim) + line + std::string(kReset);
        out << line << '\n';
      }
    }
    out << last_->final_text << '\n';
    return *last_;
  }

  void set_show_reasoning(bool on) { show_reasoning_ = on; }
  bool show_reasoning() const { return show_reasoning_; }
  const std::optional<TurnResult>& last() const { return last_; }
  const SessionState& session() const { return session_; }

  void write_trace(std::ostream& err) const {
    if (!options_.trace_out) return;
    std::ofstream file(*options_.trace_out, std::ios::binary);
    file << export_trace(trace_);
    if (!file) err << "warning: could not write trace to " << options_.trace_out->string() << '\n';
  }

 private:
  const CliOptions& options_;
  std::shared_ptr<const Engine> engine_;
  SessionState session_;
  std::vector<MediaInput> pending_;
  std::vector<TraceEvent> trace_;
  std::optional<TurnResult> last_;
  bool show_reasoning_ = options_.show_reasoning;
};

// Returns an empty string when the expectation holds, else the report.
std::string check(const Directive& d, const Conversation& conv) {
  const auto& last = conv.last();
  if (!last) return "no turn has run yet";
  const auto& trace = last->trace;
  const int turn = trace.empty() ? 0 : trace.front().turn;

  switch (d.kind) {
    case Directive::Kind::expect_contains: {
      if (last->final_text.find(d.argument) != std::string::npos) return {};
      const int step = trace.empty() ? 0 : trace.back().step;
      return "final text of turn " + std::to_string(turn) + " (step " + std::to_string(step) +
             ") does not contain the expected text\n--- expected substring\n" + d.argument +
             "\n+++ final text\n" + last->final_text;
    }
    case Directive::Kind::expect_trace_kinds: {
      const auto want = split_list(d.argument);
      std::vector<std::string> got;
      for (const auto& e : trace) got.emplace_back(to_string(e.kind));
      if (want == got) return {};
      std::size_t i = 0;
      while (i < want.size() && i < got.size() && want[i] == got[i]) ++i;
      return "trace kinds of turn " + std::to_string(turn) + " differ from step " +
             std::to_string(i + 1) + "\n--- expected\n[" + join(want) + "]\n+++ actual\n[" + join(got) + "]";
    }
    case Directive::Kind::expect_experts: {
      const auto want = split_list(d.argument);
      std::vector<std::string> got;
      std::vector<std::string> steps;
      for (const auto& e : trace) {
        if (const auto* batch = std::get_if<ExpertBatchDetail>(&e.detail)) {
          for (const auto& run : batch->runs) {
            got.push_back(run.expert);
            steps.push_back(std::to_string(e.step));
          }
        }
      }
      if (want == got) return {};
      return "experts run in turn " + std::to_string(turn) + " (batch steps " + join(steps) +
             ") differ\n--- expected\n[" + join(want) + "]\n+++ actual\n[" + join(got) + "]";
    }
    case Directive::Kind::expect_visible_roles: {
      const auto want = split_list(d.argument);
      std::vector<std::string> got;
      for (const auto& m : conv.session().visible_transcript()) got.emplace_back(to_string(m.role));
      if (want == got) return {};
      return "visible transcript after turn " + std::to_string(turn) + " differs\n--- expected\n[" +
             join(want) + "]\n+++ actual\n[" + join(got) + "]";
    }
    default:
      return {};
  }
}

}  // namespace

std::vector<Directive> parse_scenario(std::string_view text) {
  std::vector<Directive> out;
  std::size_t start = 0;
  std::size_t lineno = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++lineno;
    const auto line = trim(text.substr(start, end - start));
    start = end + 1;
    if (line.empty() || line.front() == '#') continue;

    const auto space = line.find_first_of(" \t");
    const auto keyword = line.substr(0, space);
    const auto argument = space == std::string_view::npos ? std::string_view{} : trim(line.substr(space));
    const auto* hit = std::find_if(std::begin(kDirectives), std::end(kDirectives),
                                   [&](const auto& d) { return d.first == keyword; });
    if (hit == std::end(kDirectives)) {
      throw Error(Errc::parse_error,
                  "scenario line " + std::to_string(lineno) + ": unknown directive '" + std::string(keyword) + "'");
    }
    if (argument.empty() && hit->second != Directive::Kind::expect_trace_kinds &&
        hit->second != Directive::Kind::expect_experts) {
      throw Error(Errc::parse_error, "scenario line " + std::to_string(lineno) + ": '" +
                                         std::string(keyword) + "' needs an argument");
    }
    out.push_back({hit->second, std::string(argument), lineno});
  }
  return out;
}

std::vector<Directive> load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(Errc::parse_error, "cannot read scenario " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

std::shared_ptr<const Engine> make_engine(const AppConfig& config) {
  config.validate();
  std::shared_ptr<Clock> clock;
  if (config.backend == AppConfig::Backend::scripted) clock = std::make_shared<LogicalClock>();
  return std::make_shared<const Engine>(make_registry(config), make_backend(config),
                                        make_engine_options(config), std::move(clock));
}

int run_batch(const std::vector<Directive>& scenario, const CliOptions& options, std::ostream& out,
              std::ostream& err) {
  if (scenario.empty()) return ok;
  std::shared_ptr<const Engine> engine;
  try {
    engine = make_engine(options.app);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return config_error;
  }

  Conversation conv(options, engine);
  int status = ok;
  for (const auto& d : scenario) {
    if (d.kind == Directive::Kind::upload) {
      conv.upload(d.argument);
      continue;
    }
    if (d.kind == Directive::Kind::say) {
      out << "> " << d.argument << '\n';
      try {
        conv.say(d.argument, out);
      } catch (const Error& e) {
        err << "line " << d.line << ": " << to_string(e.code()) << ": " << e.what() << '\n';
        conv.write_trace(err);
        return exit_code_for(e.code());
      }
      continue;
    }
    if (auto report = check(d, conv); !report.empty()) {
      err << "line " << d.line << ": expectation failed: " << report << '\n';
      status = expectation_failed;
    }
  }
  conv.write_trace(err);
  return status;
}

int run_batch(const std::filesystem::path& scenario, const CliOptions& options, std::ostream& out,
              std::ostream& err) {
  std::vector<Directive> directives;
  try {
    directives = load_scenario(scenario);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return config_error;
  }
  return run_batch(directives, options, out, err);
}

int repl(const CliOptions& options, std::istream& in, std::ostream& out, std::ostream& err) {
  std::shared_ptr<const Engine> engine;
  try {
    engine = make_engine(options.app);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return config_error;
  }

  Conversation conv(options, engine);
  std::string line;
  out << "> " << std::flush;
  while (std::getline(in, line)) {
    const auto input = trim(line);
    if (input == "/quit") break;
    if (input.empty()) {
      // nothing to send
    } else if (input == "/help") {
      out << "/upload <path>     attach an image or video to the next message\n"
             "/reasoning on|off  show or hide thoughts, actions and observations\n"
             "/quit              leave\n";
    } else if (input.starts_with("/upload")) {
      const auto path = trim(input.substr(7));
      if (path.empty()) {
        err << "usage: /upload <path>\n";
      } else {
        conv.upload(std::string(path));
        out << "attached " << path << '\n';
      }
    } else if (input.starts_with("/reasoning")) {
      const auto arg = trim(input.substr(10));
      if (arg == "on" || arg == "off") {
        conv.set_show_reasoning(arg == "on");
        out << "reasoning " << arg << '\n';
      } else {
        err << "usage: /reasoning on|off\n";
      }
    } else if (input.front() == '/') {
      err << "unknown command " << input << " (try /help)\n";
    } else {
      try {
        conv.say(input, out);
        conv.write_trace(err);
      } catch (const Error& e) {
        err << to_string(e.code()) << ": " << e.what() << '\n';
      }
    }
    out << "> " << std::flush;
  }
  out << '\n';
  return ok;
}

int serve(const CliOptions& options, std::ostream& out, std::ostream& err) {
  try {
    auto engine = make_engine(options.app);
    ServiceOptions service_options;
    service_options.data_dir = options.app.data_dir;
    service_options.defaults = options.app.limits;
    service_options.bearer_token = options.app.service_token;
    Service service(service_options, engine);
    out << "mmreact listening on http://" << options.app.host << ':' << options.app.port << std::endl;
    service.listen(options.app.host, options.app.port);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return config_error;
  }
  return ok;
}

}  // namespace mmreact::cli
