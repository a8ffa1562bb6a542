#include "mmreact/serialize.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <regex>

#include "mmreact/error.hpp"

namespace mmreact {

namespace {

template <typename T>
const T& payload_as(const RawExpertOutput& out, std::string_view what) {
  const auto* p = std::get_if<T>(&out.payload);
  if (p == nullptr) {
    throw Error(Errc::unknown_kind, std::string(what) + " serializer got a " +
                                        std::string(to_string(out.kind)) + " payload");
  }
  return *p;
}

std::string format_seconds(double seconds) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), seconds);
  if (ec != std::errc{}) return std::to_string(seconds);
  return std::string(buf.data(), end);
}

// Receipt fields come first in this order; anything else follows
// alphabetically.
constexpr std::array<std::string_view, 4> kReceiptSchema{"merchant", "date", "total", "line_items"};

void append_field(std::string& out, const std::string& key, const FieldValue& value) {
  if (!out.empty()) out += '\n';
  if (const auto* s = std::get_if<std::string>(&value)) {
    out += key + ": " + *s;
    return;
  }
  const auto& items = std::get<1>(value);
  if (items.empty()) {
    out += key + ": none";
    return;
  }
  out += key + ':';
  for (const auto& [name, v] : items) out += "\n  " + name + ": " + v;
}

}  // namespace

std::string observation_header(std::string_view expert_name) {
  return "Observation from " + std::string(expert_name) + ":";
}

std::string Observation::message_text() const { return observation_header(expert_name) + "\n" + text; }

std::string serialize_detections(const RawExpertOutput& payload) {
  const auto& dets = payload_as<std::vector<Detection>>(payload, "detection");
  std::string out(kDetectionExplanation);
  if (dets.empty()) return out + "\nno objects detected";
  for (const auto& d : dets) {
    out += "\n<" + d.label + ", " + std::to_string(d.x1) + ", " + std::to_string(d.y1) + ", " +
           std::to_string(d.x2) + ", " + std::to_string(d.y2) + ">";
  }
  return out;
}

std::vector<Detection> parse_detections(std::string_view text) {
  static const std::regex kLine(R"(^<([^,<>]*), (-?\d+), (-?\d+), (-?\d+), (-?\d+)>$)");
  std::vector<Detection> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string line(text.substr(start, end - start));
    std::smatch m;
    if (std::regex_match(line, m, kLine)) {
      try {
        out.push_back({m[1].str(), std::stoll(m[2].str()), std::stoll(m[3].str()),
                       std::stoll(m[4].str()), std::stoll(m[5].str())});
      } catch (const std::out_of_range&) {
        throw Error(Errc::parse_error, "coordinate out of range in: " + line);
      }
    }
    start = end + 1;
  }
  return out;
}

std::string serialize_tags(const RawExpertOutput& payload, double threshold) {
  auto tags = payload_as<std::vector<Tag>>(payload, "tag");
  std::erase_if(tags, [&](const Tag& t) { return t.confidence < threshold; });
  if (tags.empty()) return "no confident tags";
  std::sort(tags.begin(), tags.end(), [](const Tag& a, const Tag& b) {
    return a.confidence != b.confidence ? a.confidence > b.confidence : a.tag < b.tag;
  });
  std::string out;
  for (const auto& t : tags) {
    if (!out.empty()) out += ", ";
    out += t.tag;
  }
  return out;
}

std::string serialize_key_values(const RawExpertOutput& payload) {
  const auto& kv = payload_as<KeyValues>(payload, "key-value");
  if (kv.empty()) return "no fields extracted";
  std::string out;
  if (payload.kind == OutputKind::receipt_fields) {
    for (auto key : kReceiptSchema) {
      if (auto it = kv.find(std::string(key)); it != kv.end()) append_field(out, it->first, it->second);
    }
    for (const auto& [key, value] : kv) {
      if (std::find(kReceiptSchema.begin(), kReceiptSchema.end(), key) == kReceiptSchema.end()) {
        append_field(out, key, value);
      }
    }
  } else {
    for (const auto& [key, value] : kv) append_field(out, key, value);
  }
  return out;
}

std::string serialize_ocr_lines(const RawExpertOutput& payload) {
  const auto& lines = payload_as<std::vector<std::string>>(payload, "ocr");
  if (lines.empty()) return "no text detected";
  std::string out;
  for (const auto& line : lines) {
    if (!out.empty()) out += '\n';
    out += line;
  }
  return out;
}

std::string serialize_plain_text(const RawExpertOutput& payload) {
  const auto& text = payload_as<std::string>(payload, "plain text");
  return text.empty() ? std::string("no output") : text;
}

std::string serialize_frame_captions(const RawExpertOutput& payload) {
  const auto& frames = payload_as<std::vector<FrameCaption>>(payload, "frame caption");
  if (frames.empty()) return "no frames captioned";
  std::string out;
  for (const auto& f : frames) {
    if (!out.empty()) out += '\n';
    out += "at " + format_seconds(f.timestamp_seconds) + "s: " + f.caption;
  }
  return out;
}

SerializerTable SerializerTable::builtin() {
  SerializerTable t;
  t.set(OutputKind::plain_text, [](const auto& p, const auto&) { return serialize_plain_text(p); });
  t.set(OutputKind::tags, [](const auto& p, const auto& o) { return serialize_tags(p, o.tag_threshold); });
  t.set(OutputKind::detections, [](const auto& p, const auto&) { return serialize_detections(p); });
  t.set(OutputKind::ocr_lines, [](const auto& p, const auto&) { return serialize_ocr_lines(p); });
  t.set(OutputKind::receipt_fields, [](const auto& p, const auto&) { return serialize_key_values(p); });
  t.set(OutputKind::key_values, [](const auto& p, const auto&) { return serialize_key_values(p); });
  t.set(OutputKind::frame_captions, [](const auto& p, const auto&) { return serialize_frame_captions(p); });
  return t;
}

const Serializer* SerializerTable::find(OutputKind kind) const {
  auto it = table_.find(kind);
  return it == table_.end() ? nullptr : &it->second;
}

Observation standardize(std::string_view expert_name, const RawExpertOutput& payload,
                        std::int64_t duration_ms, const SerializeOptions& options,
                        const SerializerTable& table) {
  const auto* serializer = table.find(payload.kind);
  if (serializer == nullptr) {
    throw Error(Errc::unknown_kind,
                "no serializer registered for output kind " + std::string(to_string(payload.kind)));
  }
  Observation obs;
  obs.expert_name = std::string(expert_name);
  obs.text = (*serializer)(payload, options);
  if (obs.text.empty()) obs.text = "no output";
  obs.source_payload = payload;
  obs.duration_ms = std::max<std::int64_t>(0, duration_ms);
  return obs;
}

}  // namespace mmreact
