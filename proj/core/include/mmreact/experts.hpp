#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmreact/expert_output.hpp"

namespace mmreact {

enum class InputSpec { image_path, video_path, text, path_plus_text };

std::string_view to_string(InputSpec spec) noexcept;
bool requires_path(InputSpec spec) noexcept;

struct ExpertExample {
  std::string utterance;
  std::string action;

  friend bool operator==(const ExpertExample&, const ExpertExample&) = default;
};

// Everything the prompt prefix needs to teach the LLM how to call an expert,
// plus the lowercase trigger phrases used to route free-form request clauses.
struct ExpertDescriptor {
  std::string name;
  std::string capability;
  InputSpec input_spec = InputSpec::image_path;
  OutputKind output_kind = OutputKind::plain_text;
  std::vector<std::string> trigger_phrases;
  std::vector<ExpertExample> examples;

  // Throws Error{invalid_config}.
  void validate() const;

  friend bool operator==(const ExpertDescriptor&, const ExpertDescriptor&) = default;
};

struct ExpertCall {
  std::optional<std::string> path;
  std::optional<std::string> query;
};

// Executors report failures by throwing; anything thrown is wrapped into
// Error{expert_failure} by execute().
using ExpertExecutor = std::function<RawExpertOutput(const ExpertCall&)>;

class ExpertRegistry {
 public:
  struct Entry {
    ExpertDescriptor descriptor;
    ExpertExecutor executor;
  };

  // Throws Error{duplicate_name} or Error{invalid_config}.
  ExpertRegistry& add(ExpertDescriptor descriptor, ExpertExecutor executor);

  const Entry* find(std::string_view name) const noexcept;
  // Case-insensitive; spaces and hyphens compare equal to underscores.
  const Entry* find_normalized(std::string_view name) const noexcept;

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::vector<std::string> names() const;

 private:
  std::vector<Entry> entries_;  // registration order
};

// Lowercase, trimmed, internal runs of space/hyphen collapsed to '_'.
std::string normalize_expert_name(std::string_view name);

// Runs the named expert and validates its payload against the descriptor.
// Throws Error{missing_path}, Error{unknown_expert} or Error{expert_failure}.
RawExpertOutput execute(const ExpertRegistry& registry, std::string_view expert,
                        const ExpertCall& call);

// ---------------------------------------------------------------------------
// Built-in experts

// Fixture lookup for the mock experts. Layout:
//   <root>/<sha256-hex(path)>/<expert_name>.json
// with a fallback to the hash of the path's final segment, so content-addressed
// uploads resolve the same fixtures regardless of the storage directory.
class FixtureStore {
 public:
  explicit FixtureStore(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const noexcept { return root_; }
  std::optional<RawExpertOutput> load(std::string_view expert, std::string_view path) const;
  // Directory name used for a path.
  static std::string key_for(std::string_view path);

 private:
  std::filesystem::path root_;
};

inline constexpr std::string_view kNoSearchResults = "no results";

// Offline search backend: a JSON object mapping normalized query to snippet.
class SearchCorpus {
 public:
  SearchCorpus() = default;
  explicit SearchCorpus(std::map<std::string, std::string> entries);
  static SearchCorpus load(const std::filesystem::path& file);

  // Snippet for the query, or kNoSearchResults.
  std::string lookup(std::string_view query) const;
  static std::string normalize(std::string_view query);

 private:
  std::map<std::string, std::string> entries_;
};

struct RemoteEndpoint {
  std::string url;
  std::string bearer_token;
  int timeout_seconds = 30;
};

// One POST per call with body {expert, path_or_url, query}; the response
// body is a RawExpertOutput document. Transport and status failures throw
// Error{expert_failure} carrying the transport message.
ExpertExecutor make_remote_executor(std::string expert_name, RemoteEndpoint endpoint);

// Mock executor reading the expert's fixture for the call's path.
ExpertExecutor make_fixture_executor(std::string expert_name,
                                     std::shared_ptr<const FixtureStore> fixtures);

ExpertExecutor make_search_executor(std::shared_ptr<const SearchCorpus> corpus);
ExpertExecutor make_math_executor();
// Returns a new placeholder path derived from the source path and the edit
// instruction; the orchestrator registers it as media.
ExpertExecutor make_editing_executor();

// Names of every shipped expert, and the subset registered by default.
// image_editing ships as a plug-in and is not in the default set.
const std::vector<std::string>& builtin_expert_names();
const std::vector<std::string>& default_expert_names();

// Throws Error{unknown_expert}.
ExpertDescriptor builtin_descriptor(std::string_view name);

struct ExpertEnvironment {
  std::shared_ptr<const FixtureStore> fixtures;
  std::shared_ptr<const SearchCorpus> search;
  // Experts listed here are served remotely instead of by their mock.
  std::map<std::string, RemoteEndpoint> remote;
};

// Registers the named built-ins in the given order.
ExpertRegistry make_builtin_registry(const ExpertEnvironment& env,
                                     const std::vector<std::string>& names);

}  // namespace mmreact
