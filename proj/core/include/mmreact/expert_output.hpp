#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mmreact/session.hpp"

namespace mmreact {

enum class OutputKind {
  plain_text,
  tags,
  detections,
  ocr_lines,
  receipt_fields,
  key_values,
  frame_captions,
};

std::string_view to_string(OutputKind kind) noexcept;
// Throws Error{unknown_kind}.
OutputKind output_kind_from_string(std::string_view name);

struct Tag {
  std::string tag;
  double confidence = 0.0;

  friend bool operator==(const Tag&, const Tag&) = default;
};

// Pixel box; (x1, y1) top-left, (x2, y2) bottom-right.
struct Detection {
  std::string label;
  std::int64_t x1 = 0;
  std::int64_t y1 = 0;
  std::int64_t x2 = 0;
  std::int64_t y2 = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct FrameCaption {
  double timestamp_seconds = 0.0;
  std::string caption;

  friend bool operator==(const FrameCaption&, const FrameCaption&) = default;
};

// Field value: a scalar, or an ordered list of (name, value) sub-entries such
// as a receipt's line items.
using FieldValue = std::variant<std::string, std::vector<std::pair<std::string, std::string>>>;
using KeyValues = std::map<std::string, FieldValue>;

using Payload = std::variant<std::string,                // plain_text
                             std::vector<Tag>,           // tags
                             std::vector<Detection>,     // detections
                             std::vector<std::string>,   // ocr_lines
                             KeyValues,                  // receipt_fields, key_values
                             std::vector<FrameCaption>>; // frame_captions

struct ProducedMedia {
  std::string path;
  MediaKind kind = MediaKind::image;

  friend bool operator==(const ProducedMedia&, const ProducedMedia&) = default;
};

struct RawExpertOutput {
  OutputKind kind = OutputKind::plain_text;
  Payload payload;
  // Media created by the expert (e.g. an edited image).
  std::vector<ProducedMedia> produced_media;

  // Payload alternative matches kind, detections have 0 <= x1 < x2 and
  // 0 <= y1 < y2, confidences in [0, 1]. Throws Error{expert_failure}.
  void validate() const;

  static RawExpertOutput text(std::string s);

  friend bool operator==(const RawExpertOutput&, const RawExpertOutput&) = default;
};

void to_json(nlohmann::json& j, const RawExpertOutput& out);
// Throws Error{unknown_kind} for an unrecognized kind and Error{parse_error}
// for a malformed payload.
void from_json(const nlohmann::json& j, RawExpertOutput& out);

}  // namespace mmreact
