#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmreact/clock.hpp"
#include "mmreact/config.hpp"
#include "mmreact/orchestrate.hpp"

namespace mmreact::cli {

enum ExitCode : int { ok = 0, config_error = 2, expectation_failed = 3, backend_failure = 4 };

struct CliOptions {
  AppConfig app;
  std::optional<std::filesystem::path> trace_out;
  bool show_reasoning = false;
  bool color = true;  // ANSI dimming of internal lines
};

// One line of a scenario file.
struct Directive {
  enum class Kind {
    upload,
    say,
    expect_contains,
    expect_trace_kinds,
    expect_experts,
    expect_visible_roles,
  };
  Kind kind = Kind::say;
  std::string argument;
  std::size_t line = 0;
};

// Blank lines and lines starting with '#' are ignored. Throws
// Error{parse_error} naming the offending line.
std::vector<Directive> parse_scenario(std::string_view text);
std::vector<Directive> load_scenario(const std::filesystem::path& file);

// The engine both front ends share. The scripted backend gets a logical clock
// so traces are reproducible.
std::shared_ptr<const Engine> make_engine(const AppConfig& config);

int repl(const CliOptions& options, std::istream& in, std::ostream& out, std::ostream& err);
int run_batch(const std::filesystem::path& scenario, const CliOptions& options, std::ostream& out,
              std::ostream& err);
int run_batch(const std::vector<Directive>& scenario, const CliOptions& options, std::ostream& out,
              std::ostream& err);
int serve(const CliOptions& options, std::ostream& out, std::ostream& err);

}  // namespace mmreact::cli
