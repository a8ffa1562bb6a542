#include "mmreact/expert_output.hpp"

#include <array>

#include <nlohmann/json.hpp>

#include "mmreact/error.hpp"

namespace mmreact {

namespace {

constexpr std::array<std::pair<OutputKind, std::string_view>, 7> kKindNames{{
    {OutputKind::plain_text, "plain_text"},
    {OutputKind::tags, "tags"},
    {OutputKind::detections, "detections"},
    {OutputKind::ocr_lines, "ocr_lines"},
    {OutputKind::receipt_fields, "receipt_fields"},
    {OutputKind::key_values, "key_values"},
    {OutputKind::frame_captions, "frame_captions"},
}};

// Index of the Payload alternative that carries each kind.
std::size_t payload_index(OutputKind kind) {
  switch (kind) {
    case OutputKind::plain_text: return 0;
    case OutputKind::tags: return 1;
    case OutputKind::detections: return 2;
    case OutputKind::ocr_lines: return 3;
    case OutputKind::receipt_fields:
    case OutputKind::key_values: return 4;
    case OutputKind::frame_captions: return 5;
  }
  return 0;
}

[[noreturn]] void invalid(const std::string& what) {
  throw Error(Errc::expert_failure, "invalid expert output: " + what);
}

}  // namespace

std::string_view to_string(OutputKind kind) noexcept {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "plain_text";
}

OutputKind output_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw Error(Errc::unknown_kind, "unknown output kind: " + std::string(name));
}

RawExpertOutput RawExpertOutput::text(std::string s) {
  return RawExpertOutput{OutputKind::plain_text, std::move(s), {}};
}

void RawExpertOutput::validate() const {
  if (payload.index() != payload_index(kind)) {
    invalid("payload does not match kind " + std::string(to_string(kind)));
  }
  if (const auto* dets = std::get_if<std::vector<Detection>>(&payload)) {
    for (const auto& d : *dets) {
      if (d.x1 < 0 || d.y1 < 0 || d.x1 >= d.x2 || d.y1 >= d.y2) {
        invalid("bad box for \"" + d.label + "\"");
      }
    }
  }
  if (const auto* tags = std::get_if<std::vector<Tag>>(&payload)) {
    for (const auto& t : *tags) {
      if (!(t.confidence >= 0.0 && t.confidence <= 1.0)) {
        invalid("confidence out of [0, 1] for tag \"" + t.tag + "\"");
      }
    }
  }
  for (const auto& m : produced_media) {
    if (m.path.empty()) invalid("produced media with empty path");
  }
}

void to_json(nlohmann::json& j, const RawExpertOutput& out) {
  j = nlohmann::json::object();
  j["kind"] = to_string(out.kind);
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::string>) {
          j["payload"] = p;
        } else if constexpr (std::is_same_v<T, std::vector<Tag>>) {
          auto arr = nlohmann::json::array();
          for (const auto& t : p) arr.push_back({{"tag", t.tag}, {"confidence", t.confidence}});
          j["payload"] = std::move(arr);
        } else if constexpr (std::is_same_v<T, std::vector<Detection>>) {
          auto arr = nlohmann::json::array();
          for (const auto& d : p) {
            arr.push_back({{"label", d.label}, {"box", {d.x1, d.y1, d.x2, d.y2}}});
          }
          j["payload"] = std::move(arr);
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
          j["payload"] = p;
        } else if constexpr (std::is_same_v<T, KeyValues>) {
          auto obj = nlohmann::json::object();
          for (const auto& [key, value] : p) {
            if (const auto* s = std::get_if<std::string>(&value)) {
              obj[key] = *s;
            } else {
              auto items = nlohmann::json::array();
              for (const auto& [k, v] : std::get<1>(value)) items.push_back({k, v});
              obj[key] = std::move(items);
            }
          }
          j["payload"] = std::move(obj);
        } else {
          auto arr = nlohmann::json::array();
          for (const auto& f : p) {
            arr.push_back({{"timestamp_seconds", f.timestamp_seconds}, {"caption", f.caption}});
          }
          j["payload"] = std::move(arr);
        }
      },
      out.payload);
  if (!out.produced_media.empty()) {
    auto arr = nlohmann::json::array();
    for (const auto& m : out.produced_media) {
      arr.push_back({{"path", m.path}, {"kind", to_string(m.kind)}});
    }
    j["produced_media"] = std::move(arr);
  }
}

void from_json(const nlohmann::json& j, RawExpertOutput& out) {
  if (!j.is_object() || !j.contains("kind")) {
    throw Error(Errc::parse_error, "expert output must be an object with a \"kind\" field");
  }
  const auto kind = output_kind_from_string(j.at("kind").get<std::string>());
  RawExpertOutput result;
  result.kind = kind;
  try {
    const auto& p = j.at("payload");
    switch (kind) {
      case OutputKind::plain_text:
        result.payload = p.get<std::string>();
        break;
      case OutputKind::tags: {
        std::vector<Tag> tags;
        for (const auto& t : p) tags.push_back({t.at("tag").get<std::string>(), t.at("confidence").get<double>()});
        result.payload = std::move(tags);
        break;
      }
      case OutputKind::detections: {
        std::vector<Detection> dets;
        for (const auto& d : p) {
          const auto& box = d.at("box");
          if (!box.is_array() || box.size() != 4) throw Error(Errc::parse_error, "box needs 4 numbers");
          dets.push_back({d.at("label").get<std::string>(), box[0].get<std::int64_t>(),
                          box[1].get<std::int64_t>(), box[2].get<std::int64_t>(),
                          box[3].get<std::int64_t>()});
        }
        result.payload = std::move(dets);
        break;
      }
      case OutputKind::ocr_lines:
        result.payload = p.get<std::vector<std::string>>();
        break;
      case OutputKind::receipt_fields:
      case OutputKind::key_values: {
        KeyValues kv;
        for (const auto& [key, value] : p.items()) {
          if (value.is_string()) {
            kv[key] = value.get<std::string>();
          } else {
            std::vector<std::pair<std::string, std::string>> items;
            for (const auto& item : value) {
              if (!item.is_array() || item.size() != 2) {
                throw Error(Errc::parse_error, "sub-entries of \"" + key + "\" must be [name, value] pairs");
              }
              items.emplace_back(item[0].get<std::string>(), item[1].get<std::string>());
            }
            kv[key] = std::move(items);
          }
        }
        result.payload = std::move(kv);
        break;
      }
      case OutputKind::frame_captions: {
        std::vector<FrameCaption> frames;
        for (const auto& f : p) {
          frames.push_back({f.at("timestamp_seconds").get<double>(), f.at("caption").get<std::string>()});
        }
        result.payload = std::move(frames);
        break;
      }
    }
    if (j.contains("produced_media")) {
      for (const auto& m : j.at("produced_media")) {
        result.produced_media.push_back(
            {m.at("path").get<std::string>(), media_kind_from_string(m.value("kind", "image"))});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, std::string("malformed expert output: ") + e.what());
  }
  out = std::move(result);
}

}  // namespace mmreact
