#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mmreact/error.hpp"
#include "mmreact/experts.hpp"
#include "mmreact/session.hpp"

namespace testing {

namespace fs = std::filesystem;

inline fs::path data_dir() { return MMREACT_DATA_DIR; }
inline fs::path tests_dir() { return MMREACT_TESTS_DIR; }

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, std::string_view text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("mmreact-test-" + mmreact::random_token(6))) {
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(std::string_view name) const { return path_ / name; }

 private:
  fs::path path_;
};

// Expert with a canned executor, for tests that need a registry without the
// fixture machinery.
inline mmreact::ExpertDescriptor descriptor(std::string name, mmreact::InputSpec spec,
                                            mmreact::OutputKind kind,
                                            std::vector<std::string> triggers = {}) {
  mmreact::ExpertDescriptor d;
  d.name = std::move(name);
  d.capability = "Test expert " + d.name + ".";
  d.input_spec = spec;
  d.output_kind = kind;
  d.trigger_phrases = std::move(triggers);
  return d;
}

inline mmreact::ExpertExecutor constant(mmreact::RawExpertOutput out) {
  return [out = std::move(out)](const mmreact::ExpertCall&) { return out; };
}

inline mmreact::ExpertExecutor failing(std::string message) {
  return [message = std::move(message)](const mmreact::ExpertCall&) -> mmreact::RawExpertOutput {
    throw mmreact::Error(mmreact::Errc::expert_failure, message);
  };
}

// Shipped fixtures and corpus with the default expert set, optionally plus
// the editing plug-in.
inline mmreact::ExpertRegistry shipped_registry(bool with_editing = false) {
  mmreact::ExpertEnvironment env;
  env.fixtures = std::make_shared<mmreact::FixtureStore>(data_dir() / "fixtures");
  env.search = std::make_shared<mmreact::SearchCorpus>(
      mmreact::SearchCorpus::load(data_dir() / "search_corpus.json"));
  auto names = mmreact::default_expert_names();
  if (with_editing) names.push_back("image_editing");
  return mmreact::make_builtin_registry(env, names);
}

using Rng = std::mt19937_64;

inline std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline bool coin(Rng& rng, double p = 0.5) { return std::bernoulli_distribution(p)(rng); }

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& items) {
  return items[uniform(rng, 0, items.size() - 1)];
}

inline std::string random_word(Rng& rng, std::size_t min_len = 1, std::size_t max_len = 8) {
  static constexpr std::string_view kLetters = "abcdefghijklmnopqrstuvwxyz";
  std::string out;
  const auto n = uniform(rng, min_len, max_len);
  for (std::size_t i = 0; i < n; ++i) out += kLetters[uniform(rng, 0, kLetters.size() - 1)];
  return out;
}

inline std::string random_words(Rng& rng, std::size_t min_words, std::size_t max_words) {
  std::string out;
  const auto n = uniform(rng, min_words, max_words);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += random_word(rng);
  }
  return out;
}

}  // namespace testing
