#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mmreact/expert_output.hpp"

namespace mmreact {

// Emitted once at the top of every detection observation.
inline constexpr std::string_view kDetectionExplanation =
    "Each detected object is listed as <object name, x1, y1, x2, y2>, where (x1, y1) is the "
    "top-left corner and (x2, y2) is the bottom-right corner of its bounding box, in pixels.";

struct Observation {
  std::string expert_name;
  std::string text;  // serialized payload, never empty
  RawExpertOutput source_payload;
  std::int64_t duration_ms = 0;

  // "Observation from <expert>:" followed by the text on the next line. This
  // is what gets appended to the dialogue.
  std::string message_text() const;
};

std::string observation_header(std::string_view expert_name);

std::string serialize_detections(const RawExpertOutput& payload);
std::string serialize_tags(const RawExpertOutput& payload, double threshold);
std::string serialize_key_values(const RawExpertOutput& payload);
std::string serialize_ocr_lines(const RawExpertOutput& payload);
std::string serialize_plain_text(const RawExpertOutput& payload);
std::string serialize_frame_captions(const RawExpertOutput& payload);

// Inverse of serialize_detections for labels free of ',', '<' and '>'.
// Throws Error{parse_error}.
std::vector<Detection> parse_detections(std::string_view text);

struct SerializeOptions {
  double tag_threshold = 0.5;
};

using Serializer = std::function<std::string(const RawExpertOutput&, const SerializeOptions&)>;

// Kind -> serializer. The default table covers every built-in kind.
class SerializerTable {
 public:
  static SerializerTable builtin();

  void set(OutputKind kind, Serializer serializer) { table_[kind] = std::move(serializer); }
  void erase(OutputKind kind) { table_.erase(kind); }
  const Serializer* find(OutputKind kind) const;

 private:
  std::map<OutputKind, Serializer> table_;
};

// Throws Error{unknown_kind} when the table has no serializer for the kind.
Observation standardize(std::string_view expert_name, const RawExpertOutput& payload,
                        std::int64_t duration_ms, const SerializeOptions& options = {},
                        const SerializerTable& table = SerializerTable::builtin());

}  // namespace mmreact
