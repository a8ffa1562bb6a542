#include <iostream>
#include <unistd.h>

#include <CLI11.hpp>

#include "cli.hpp"
#include "mmreact/error.hpp"

namespace {

struct Flags {
  std::optional<std::string> config;
  std::optional<std::string> backend;
  std::optional<std::string> script;
  std::optional<std::string> experts;
  std::optional<int> max_steps;
  std::optional<std::string> trace_out;
  bool show_reasoning = false;
  std::optional<int> port;
};

void add_common(CLI::App& app, Flags& f) {
  app.add_option("--config", f.config, "INI config file (default: $MMREACT_CONFIG)");
  app.add_option("--backend", f.backend, "LLM backend")->check(CLI::IsMember({"scripted", "remote"}));
  app.add_option("--script", f.script, "script file for the scripted backend");
  app.add_option("--experts", f.experts, "comma-separated expert names");
  app.add_option("--max-steps", f.max_steps, "LLM calls allowed per turn")->check(CLI::PositiveNumber);
  app.add_option("--trace-out", f.trace_out, "write the execution trace here");
  app.add_flag("--show-reasoning", f.show_reasoning, "print thoughts, actions and observations");
}

mmreact::cli::CliOptions resolve(const Flags& f) {
  mmreact::cli::CliOptions o;
  o.app = mmreact::AppConfig::resolve(f.config ? std::optional<std::filesystem::path>(*f.config)
                                               : std::nullopt);
  if (f.backend) {
    o.app.backend = *f.backend == "remote" ? mmreact::AppConfig::Backend::remote
                                           : mmreact::AppConfig::Backend::scripted;
  }
  if (f.script) o.app.script = *f.script;
  if (f.experts) o.app.experts = mmreact::split_list(*f.experts);
  if (f.max_steps) o.app.limits.max_steps = *f.max_steps;
  if (f.port) o.app.port = *f.port;
  if (f.trace_out) o.trace_out = *f.trace_out;
  o.show_reasoning = f.show_reasoning;
  o.color = isatty(STDOUT_FILENO) != 0;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmreact: multimodal reasoning and action with vision experts"};
  app.require_subcommand(1);

  Flags flags;
  std::string scenario;
  auto* repl = app.add_subcommand("repl", "interactive chat in the terminal");
  add_common(*repl, flags);
  auto* batch = app.add_subcommand("batch", "run a scenario file and check its expectations");
  add_common(*batch, flags);
  batch->add_option("scenario", scenario, "scenario file")->required();
  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  add_common(*serve, flags);
  serve->add_option("--port", flags.port, "listen port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mmreact::cli::config_error;
  }

  mmreact::cli::CliOptions options;
  try {
    options = resolve(flags);
  } catch (const mmreact::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mmreact::cli::config_error;
  }

  if (repl->parsed()) return mmreact::cli::repl(options, std::cin, std::cout, std::cerr);
  if (batch->parsed()) return mmreact::cli::run_batch(scenario, options, std::cout, std::cerr);
  return mmreact::cli::serve(options, std::cout, std::cerr);
}
