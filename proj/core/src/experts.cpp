#include "mmreact/experts.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "http_client.hpp"
#include "mmreact/digest.hpp"
#include "mmreact/error.hpp"
#include "mmreact/pal_math.hpp"

namespace mmreact {

std::string_view to_string(InputSpec spec) noexcept {
  switch (spec) {
    case InputSpec::image_path: return "image_path";
    case InputSpec::video_path: return "video_path";
    case InputSpec::text: return "text";
    case InputSpec::path_plus_text: return "path_plus_text";
  }
  return "text";
}

bool requires_path(InputSpec spec) noexcept { return spec != InputSpec::text; }

void ExpertDescriptor::validate() const {
  if (name.empty()) throw Error(Errc::invalid_config, "expert name must not be empty");
  for (const auto& phrase : trigger_phrases) {
    const bool lowercase = std::none_of(phrase.begin(), phrase.end(), [](unsigned char c) {
      return std::isupper(c) != 0;
    });
    if (phrase.empty() || !lowercase) {
      throw Error(Errc::invalid_config,
                  "trigger phrases must be non-empty lowercase (expert " + name + ")");
    }
  }
}

std::string normalize_expert_name(std::string_view name) {
  while (!name.empty() && std::isspace(static_cast<unsigned char>(name.front()))) name.remove_prefix(1);
  while (!name.empty() && (std::isspace(static_cast<unsigned char>(name.back())) ||
                           std::string_view(":,.;!?").find(name.back()) != std::string_view::npos)) {
    name.remove_suffix(1);
  }
  std::string out;
  bool gap = false;
  for (char c : name) {
    if (c == ' ' || c == '\t' || c == '-' || c == '_') {
      gap = true;
      continue;
    }
    if (gap && !out.empty()) out.push_back('_');
    gap = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

ExpertRegistry& ExpertRegistry::add(ExpertDescriptor descriptor, ExpertExecutor executor) {
  descriptor.validate();
  if (!executor) throw Error(Errc::invalid_config, "expert " + descriptor.name + " has no executor");
  if (find_normalized(descriptor.name) != nullptr) {
    throw Error(Errc::duplicate_name, "expert already registered: " + descriptor.name);
  }
  entries_.push_back({std::move(descriptor), std::move(executor)});
  return *this;
}

const ExpertRegistry::Entry* ExpertRegistry::find(std::string_view name) const noexcept {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Entry& e) { return e.descriptor.name == name; });
  return it == entries_.end() ? nullptr : &*it;
}

const ExpertRegistry::Entry* ExpertRegistry::find_normalized(std::string_view name) const noexcept {
  const auto key = normalize_expert_name(name);
  if (key.empty()) return nullptr;
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) {
    return normalize_expert_name(e.descriptor.name) == key;
  });
  return it == entries_.end() ? nullptr : &*it;
}

std::vector<std::string> ExpertRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.descriptor.name);
  return out;
}

RawExpertOutput execute(const ExpertRegistry& registry, std::string_view expert,
                        const ExpertCall& call) {
  const auto* entry = registry.find(expert);
  if (entry == nullptr) throw Error(Errc::unknown_expert, "unknown expert: " + std::string(expert));
  const auto& d = entry->descriptor;
  if (requires_path(d.input_spec) && (!call.path || call.path->empty())) {
    throw Error(Errc::missing_path, d.name + " needs a file path and none was given");
  }

  RawExpertOutput out;
  try {
    out = entry->executor(call);
  } catch (const Error& e) {
    if (e.code() == Errc::expert_failure) throw;
    throw Error(Errc::expert_failure, std::string(to_string(e.code())) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(Errc::expert_failure, e.what());
  }
  out.validate();
  if (out.kind != d.output_kind) {
    throw Error(Errc::expert_failure, d.name + " returned " + std::string(to_string(out.kind)) +
                                          ", expected " + std::string(to_string(d.output_kind)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixtures and mock executors

std::string FixtureStore::key_for(std::string_view path) { return sha256_hex(path); }

std::optional<RawExpertOutput> FixtureStore::load(std::string_view expert,
                                                  std::string_view path) const {
  const std::string file = std::string(expert) + ".json";
  std::vector<std::filesystem::path> candidates{root_ / key_for(path) / file};
  const auto base = default_display_name(path);
  if (base != path) candidates.push_back(root_ / key_for(base) / file);

  for (const auto& candidate : candidates) {
    std::ifstream in(candidate);
    if (!in) continue;
    try {
      return nlohmann::json::parse(in).get<RawExpertOutput>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::parse_error, "bad fixture " + candidate.string() + ": " + e.what());
    }
  }
  return std::nullopt;
}

SearchCorpus::SearchCorpus(std::map<std::string, std::string> entries) {
  for (auto& [k, v] : entries) entries_[normalize(k)] = std::move(v);
}

SearchCorpus SearchCorpus::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::invalid_config, "cannot read search corpus: " + file.string());
  try {
    return SearchCorpus(nlohmann::json::parse(in).get<std::map<std::string, std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_config, "bad search corpus " + file.string() + ": " + e.what());
  }
}

std::string SearchCorpus::normalize(std::string_view query) {
  std::string out;
  bool gap = false;
  for (char c : query) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      gap = true;
      continue;
    }
    if (gap && !out.empty()) out.push_back(' ');
    gap = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string SearchCorpus::lookup(std::string_view query) const {
  auto it = entries_.find(normalize(query));
  return it == entries_.end() ? std::string(kNoSearchResults) : it->second;
}

ExpertExecutor make_fixture_executor(std::string expert_name,
                                     std::shared_ptr<const FixtureStore> fixtures) {
  return [expert_name = std::move(expert_name), fixtures = std::move(fixtures)](const ExpertCall& call) {
    if (!fixtures) throw Error(Errc::expert_failure, "no fixture directory configured");
    const std::string path = call.path.value_or("");
    auto out = fixtures->load(expert_name, path);
    if (!out) throw Error(Errc::expert_failure, "no " + expert_name + " result for " + path);
    return *out;
  };
}

ExpertExecutor make_search_executor(std::shared_ptr<const SearchCorpus> corpus) {
  return [corpus = std::move(corpus)](const ExpertCall& call) {
    if (!call.query) throw Error(Errc::expert_failure, "search needs a query");
    return RawExpertOutput::text(corpus ? corpus->lookup(*call.query) : std::string(kNoSearchResults));
  };
}

ExpertExecutor make_math_executor() {
  return [](const ExpertCall& call) {
    if (!call.query) throw Error(Errc::expert_failure, "pal_math needs an expression");
    return RawExpertOutput::text(eval_math(*call.query));
  };
}

ExpertExecutor make_editing_executor() {
  return [](const ExpertCall& call) {
    const std::string& source = *call.path;
    const std::string instruction = call.query.value_or("");
    const auto slash = source.find_last_of('/');
    const auto dot = source.find_last_of('.');
    const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
    const std::string stem = has_ext ? source.substr(0, dot) : source;
    const std::string ext = has_ext ? source.substr(dot) : std::string(".png");
    const std::string edited =
        stem + ".edit-" + sha256_hex(source + '\n' + instruction).substr(0, 8) + ext;

    RawExpertOutput out = RawExpertOutput::text(
        "Edited image saved as <" + edited + ">" +
        (instruction.empty() ? std::string() : " (instruction: " + instruction + ")"));
    out.produced_media.push_back({edited, MediaKind::image});
    return out;
  };
}

ExpertExecutor make_remote_executor(std::string expert_name, RemoteEndpoint endpoint) {
  return [expert_name = std::move(expert_name), endpoint = std::move(endpoint)](const ExpertCall& call) {
    nlohmann::json body{{"expert", expert_name},
                        {"path_or_url", call.path ? nlohmann::json(*call.path) : nlohmann::json()},
                        {"query", call.query ? nlohmann::json(*call.query) : nlohmann::json()}};
    detail::Headers headers;
    if (!endpoint.bearer_token.empty()) {
      headers.emplace_back("Authorization", "Bearer " + endpoint.bearer_token);
    }
    detail::HttpResult res;
    try {
      res = detail::post_json(endpoint.url, body.dump(), headers, endpoint.timeout_seconds);
    } catch (const Error& e) {
      throw Error(Errc::expert_failure, e.what());
    }
    if (res.status != 200) {
      throw Error(Errc::expert_failure, expert_name + " endpoint returned HTTP " +
                                            std::to_string(res.status) + ": " +
                                            detail::excerpt(res.body));
    }
    try {
      return nlohmann::json::parse(res.body).get<RawExpertOutput>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::expert_failure, expert_name + " endpoint sent malformed JSON: " + e.what());
    }
  };
}

// ---------------------------------------------------------------------------
// Built-in descriptors

namespace {

std::vector<ExpertDescriptor> builtin_descriptors() {
  const std::string ww = "Assistant,";
  return {
      {"image_captioning",
       "Describes an image in one natural sentence. Use it first to get an overview of what an "
       "image shows.",
       InputSpec::image_path,
       OutputKind::plain_text,
       {"caption", "describe", "description", "what is in", "what's in", "what is this"},
       {{"What is in this picture? <beach.jpg>", ww + " image_captioning <beach.jpg>"},
        {"Describe <street.png>", ww + " image_captioning <street.png>"}}},
      {"dense_captioning",
       "Captions many regions of an image separately, giving detail about smaller parts of the "
       "scene.",
       InputSpec::image_path,
       OutputKind::plain_text,
       {"dense caption", "regions", "in detail", "details"},
       {{"Describe <room.jpg> in detail", ww + " dense_captioning <room.jpg>"}}},
      {"image_tagging",
       "Lists tags for the objects, scenery and concepts in an image, most confident first.",
       InputSpec::image_path,
       OutputKind::tags,
       {"tags", "tag", "keywords"},
       {{"Give me keywords for <park.jpg>", ww + " image_tagging <park.jpg>"}}},
      {"object_detection",
       "Finds objects in an image and reports each with a bounding box in pixel coordinates. Use "
       "it for questions about objects, counting, or where things are.",
       InputSpec::image_path,
       OutputKind::detections,
       {"objects", "object", "detect", "bounding box", "locate", "where is", "how many"},
       {{"How many cars are in <lot.jpg>?", ww + " object_detection <lot.jpg>"},
        {"What objects do you see? <desk.png>", ww + " what objects do you see in this image? <desk.png>"}}},
      {"ocr",
       "Reads the text that appears in an image, such as signs, documents or screenshots.",
       InputSpec::image_path,
       OutputKind::ocr_lines,
       {"ocr", "text", "read", "written", "says"},
       {{"What does the sign say? <sign.jpg>", ww + " ocr <sign.jpg>"}}},
      {"celebrity_recognition",
       "Names well-known people visible in an image.",
       InputSpec::image_path,
       OutputKind::plain_text,
       {"celebrity", "celebrities", "who is", "famous"},
       {{"Who is this? <portrait.jpg>", ww + " celebrity_recognition <portrait.jpg>"}}},
      {"receipt_understanding",
       "Extracts merchant, date, total and line items from a photo of a receipt.",
       InputSpec::image_path,
       OutputKind::receipt_fields,
       {"receipt", "receipts", "invoice", "total cost"},
       {{"How much was this? <receipt.jpg>", ww + " receipt_understanding <receipt.jpg>"}}},
      {"video_captioning",
       "Captions frames sampled from a video, each with its timestamp in seconds.",
       InputSpec::video_path,
       OutputKind::frame_captions,
       {"video", "frames", "clip"},
       {{"Summarize <match.mp4>", ww + " video_captioning <match.mp4>"}}},
      {"bing_search",
       "Searches the web and returns a short snippet. Use it for facts the images cannot show.",
       InputSpec::text,
       OutputKind::plain_text,
       {"search", "look up", "bing"},
       {{"When do morels grow?", ww + " bing_search: morel mushroom season"}}},
      {"pal_math",
       "Evaluates an arithmetic expression exactly. Supports + - * / and parentheses.",
       InputSpec::text,
       OutputKind::plain_text,
       {"calculate", "compute", "sum", "math", "add up"},
       {{"What is 12.5 plus 7.25?", ww + " pal_math: 12.5 + 7.25"}}},
      {"image_editing",
       "Edits an image according to an instruction and returns the path of the new image.",
       InputSpec::path_plus_text,
       OutputKind::plain_text,
       {"edit", "remove", "replace", "change"},
       {{"Remove the dog from <yard.png>", ww + " image_editing <yard.png> remove the dog"}}},
  };
}

}  // namespace

const std::vector<std::string>& builtin_expert_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& d : builtin_descriptors()) out.push_back(d.name);
    return out;
  }();
  return names;
}

const std::vector<std::string>& default_expert_names() {
  static const std::vector<std::string> names = [] {
    auto out = builtin_expert_names();
    out.erase(std::remove(out.begin(), out.end(), "image_editing"), out.end());
    return out;
  }();
  return names;
}

ExpertDescriptor builtin_descriptor(std::string_view name) {
  for (auto& d : builtin_descriptors()) {
    if (d.name == name) return d;
  }
  throw Error(Errc::unknown_expert, "no built-in expert named " + std::string(name));
}

ExpertRegistry make_builtin_registry(const ExpertEnvironment& env,
                                     const std::vector<std::string>& names) {
  ExpertRegistry registry;
  for (const auto& name : names) {
    auto descriptor = builtin_descriptor(name);
    ExpertExecutor executor;
    if (auto it = env.remote.find(name); it != env.remote.end()) {
      executor = make_remote_executor(name, it->second);
    } else if (name == "bing_search") {
      executor = make_search_executor(env.search);
    } else if (name == "pal_math") {
      executor = make_math_executor();
    } else if (name == "image_editing") {
      executor = make_editing_executor();
    } else {
      executor = make_fixture_executor(name, env.fixtures);
    }
    registry.add(std::move(descriptor), std::move(executor));
  }
  return registry;
}

}  // namespace mmreact
