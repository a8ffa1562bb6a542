#include "mmreact/prompting.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "mmreact/error.hpp"

namespace mmreact {

namespace {

constexpr std::string_view kPrefixTemplate =
    R"(You are a multimodal assistant. You cannot see images or videos yourself. Each image or video in the conversation appears as a file path in angle brackets, for example <photo.png>. The path is only a placeholder: to learn what it shows, ask one of the experts below.

When you need an expert, first write a short thought explaining why, then write a request line that starts with the watchword "{watchword}" followed by the expert name, the file path in angle brackets, and an optional question. Experts that take text instead of a file use a colon before the text:
{watchword} image_captioning <photo.png>
{watchword} pal_math: 12 + 30

You may write several request lines at once, each on its own line. The result of every request is returned to you as an observation. Never write observations yourself. When you can answer the user, reply directly without the watchword.

Available experts:

{expert_blocks}

Examples:

{examples}

Remember: only lines that start with "{watchword}" are sent to experts.)";

std::string substitute(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size() * 2);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = values.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

std::string_view input_description(InputSpec spec) {
  switch (spec) {
    case InputSpec::image_path: return "an image file path";
    case InputSpec::video_path: return "a video file path";
    case InputSpec::text: return "text after a colon";
    case InputSpec::path_plus_text: return "an image file path followed by an instruction";
  }
  return "";
}

std::string_view output_description(OutputKind kind) {
  switch (kind) {
    case OutputKind::plain_text: return "plain text";
    case OutputKind::tags: return "comma-separated tags, most confident first";
    case OutputKind::detections: return "one <object name, x1, y1, x2, y2> line per object";
    case OutputKind::ocr_lines: return "the recognized text, one line per text line";
    case OutputKind::receipt_fields: return "receipt fields as key: value lines";
    case OutputKind::key_values: return "key: value lines";
    case OutputKind::frame_captions: return "one \"at <seconds>s: <caption>\" line per sampled frame";
  }
  return "";
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

std::size_t count_code_points(std::string_view text) noexcept {
  return static_cast<std::size_t>(std::count_if(
      text.begin(), text.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::size_t estimate_tokens(std::string_view text) noexcept {
  return (count_code_points(text) + 3) / 4;
}

void TokenBudget::validate() const {
  if (reserved_for_completion == 0 || reserved_for_completion >= limit) {
    throw Error(Errc::invalid_config, "reserved_for_completion must be in [1, limit)");
  }
}

TokenBudget TokenBudget::from(const SessionConfig& config) {
  TokenBudget b{config.token_budget, config.effective_reserved()};
  b.validate();
  return b;
}

std::string_view default_prefix_template() noexcept { return kPrefixTemplate; }

std::string load_prefix_template(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(Errc::invalid_config, "cannot read prefix template: " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  for (std::string_view required : {"{expert_blocks}", "{watchword}"}) {
    if (text.find(required) == std::string::npos) {
      throw Error(Errc::invalid_config,
                  "prefix template " + file.string() + " lacks " + std::string(required));
    }
  }
  return text;
}

PromptPrefix build_prefix(const ExpertRegistry& registry, const PrefixOptions& options) {
  if (registry.empty()) throw Error(Errc::empty_registry, "cannot build a prefix without experts");

  PromptPrefix prefix;
  for (const auto& entry : registry.entries()) {
    const auto& d = entry.descriptor;
    std::string block = "Name: " + d.name + "\nCapability: " + d.capability +
                        "\nInput: " + std::string(input_description(d.input_spec)) +
                        "\nOutput: " + std::string(output_description(d.output_kind));
    prefix.expert_blocks.push_back(std::move(block));

    const auto n = std::min(options.examples_per_expert, d.examples.size());
    for (std::size_t i = 0; i < n; ++i) {
      prefix.example_dialogues.push_back("[" + d.name + "]\nHuman: " + d.examples[i].utterance +
                                         "\nAI: " + d.examples[i].action);
    }
  }

  const std::string examples =
      prefix.example_dialogues.empty() ? std::string("(none)") : join(prefix.example_dialogues, "\n\n");
  prefix.system_instructions = substitute(options.template_text,
                                          {{"expert_blocks", join(prefix.expert_blocks, "\n\n")},
                                           {"examples", examples},
                                           {"watchword", options.watchword}});
  return prefix;
}

SegmentRole segment_role(Role role) noexcept {
  switch (role) {
    case Role::user:
    case Role::observation: return SegmentRole::user;
    case Role::assistant_final:
    case Role::thought:
    case Role::action_request: return SegmentRole::assistant;
    case Role::system: return SegmentRole::system;
  }
  return SegmentRole::user;
}

std::string render_message(const Message& message, const SessionState& session) {
  std::string out = message.text;
  if (message.role == Role::user) {
    for (const auto& id : message.media) {
      const auto* handle = session.find_media(id);
      if (handle == nullptr) continue;
      if (!out.empty()) out += '\n';
      out += '<' + handle->path + '>';
    }
  }
  return out;
}

namespace {

constexpr std::size_t kSeparatorChars = 2;  // "\n\n" between segments

std::size_t tokens_for(std::size_t chars) { return (chars + 3) / 4; }

// A user message is pinned while any later message still refers to one of
// its media, by id or by path.
bool pinned(const SessionState& session, std::size_t index, const std::vector<std::string>& rendered) {
  const auto& messages = session.messages();
  const auto& msg = messages[index];
  for (const auto& id : msg.media) {
    const auto* handle = session.find_media(id);
    for (std::size_t j = index + 1; j < messages.size(); ++j) {
      const auto& later = messages[j].media;
      if (std::find(later.begin(), later.end(), id) != later.end()) return true;
      if (handle != nullptr && rendered[j].find(handle->path) != std::string::npos) return true;
    }
  }
  return false;
}

}  // namespace

std::vector<bool> plan_retention(const SessionState& session, const PromptPrefix& prefix,
                                 const TokenBudget& budget) {
  budget.validate();
  const auto& messages = session.messages();
  const std::size_t n = messages.size();
  const std::size_t available = budget.available();

  std::vector<std::string> rendered(n);
  std::vector<std::size_t> chars(n);
  for (std::size_t i = 0; i < n; ++i) {
    rendered[i] = render_message(messages[i], session);
    chars[i] = count_code_points(rendered[i]);
  }

  std::size_t current_start = n;
  for (std::size_t i = n; i-- > 0;) {
    if (messages[i].role == Role::user) {
      current_start = i;
      break;
    }
  }
  if (current_start == n) current_start = 0;

  const std::size_t prefix_chars = count_code_points(prefix.system_instructions);
  if (current_start < n && messages[current_start].role == Role::user &&
      tokens_for(prefix_chars + kSeparatorChars + chars[current_start]) > available) {
    throw Error(Errc::budget_impossible,
                "prompt prefix plus the latest user message exceed the token budget");
  }

  std::vector<bool> keep(n, true);
  std::size_t total = prefix_chars;
  for (std::size_t i = 0; i < n; ++i) total += kSeparatorChars + chars[i];
  auto drop = [&](std::size_t i) {
    if (!keep[i]) return;
    keep[i] = false;
    total -= kSeparatorChars + chars[i];
  };
  auto fits = [&] { return tokens_for(total) <= available; };

  for (std::size_t i = 0; i < current_start && !fits(); ++i) {
    const auto role = messages[i].role;
    if (is_internal_step(role) || role == Role::system) drop(i);
  }

  for (std::size_t i = 0; i < current_start && !fits(); ++i) {
    if (messages[i].role != Role::user || !keep[i]) continue;
    std::size_t end = i + 1;
    while (end < current_start && messages[end].role != Role::user) ++end;
    if (pinned(session, i, rendered)) {
      i = end - 1;
      continue;
    }
    for (std::size_t k = i; k < end; ++k) drop(k);
    i = end - 1;
  }

  if (!fits()) {
    throw Error(Errc::budget_impossible,
                "dialogue cannot fit the token budget without dropping current-turn content");
  }
  return keep;
}

LlmInput render_dialogue(const SessionState& session, const PromptPrefix& prefix,
                         const TokenBudget& budget) {
  const auto keep = plan_retention(session, prefix, budget);
  LlmInput input;
  input.segments.push_back({SegmentRole::system, prefix.system_instructions});
  const auto& messages = session.messages();
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (!keep[i]) continue;
    input.segments.push_back({segment_role(messages[i].role), render_message(messages[i], session)});
  }
  return input;
}

std::string_view to_string(SegmentRole role) noexcept {
  switch (role) {
    case SegmentRole::system: return "system";
    case SegmentRole::user: return "user";
    case SegmentRole::assistant: return "assistant";
  }
  return "user";
}

std::string LlmInput::flatten() const {
  std::string out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i) out += "\n\n";
    out += segments[i].text;
  }
  return out;
}

std::size_t LlmInput::estimated_tokens() const { return estimate_tokens(flatten()); }

}  // namespace mmreact
