/* Copyright 2026 The DIPE Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "dipe/plan.hpp"

#include <algorithm>
#include <charconv>

#include "dipe/error.hpp"
#include "json_util.hpp"

namespace dipe {

using nlohmann::json;

std::string_view to_string(Modality m) {
  return m == Modality::kText ? "text" : "visual";
}

std::string_view to_string(IndexMode m) {
  return m == IndexMode::kMrope ? "mrope" : "vanilla";
}

Modality modality_from_string(std::string_view s) {
  if (s == "text" || s == "txt") return Modality::kText;
  if (s == "visual" || s == "img" || s == "image") return Modality::kVisual;
  throw Error("bad_spec", "unknown modality '" + std::string(s) + "'");
}

IndexMode index_mode_from_string(std::string_view s) {
  if (s == "mrope") return IndexMode::kMrope;
  if (s == "vanilla") return IndexMode::kVanilla;
  throw Error("bad_spec", "unknown index mode '" + std::string(s) + "'");
}

std::int64_t PositionPlan::next_offset() const {
  std::int64_t best = -1;
  for (const PositionTuple& p : spe) best = std::max(best, p.max_component());
  return best + 1;
}

std::size_t PositionPlan::segment_of(std::size_t token) const {
  const auto it = std::upper_bound(
      segments.begin(), segments.end(), token,
      [](std::size_t tok, const SegmentSpan& s) { return tok < s.end; });
  return static_cast<std::size_t>(it - segments.begin());
}

namespace {

void check_segment(const ModalitySegment& seg) {
  if (seg.length <= 0) {
    throw Error("bad_grid", "segment length must be positive");
  }
  if (seg.modality == Modality::kVisual) {
    if (!seg.grid || seg.grid->rows <= 0 || seg.grid->cols <= 0 ||
        seg.grid->rows * seg.grid->cols != seg.length) {
      throw Error("bad_grid", "visual segment of length " +
                                  std::to_string(seg.length) +
                                  " needs a rows x cols grid of that size");
    }
  } else if (seg.grid) {
    throw Error("bad_grid", "text segments carry no grid");
  }
}

std::vector<PositionTuple> sequential_indices(const ModalitySegment& seg,
                                              IndexMode mode,
                                              std::int64_t offset) {
  if (mode == IndexMode::kVanilla) {
    return vanilla_rope_indices(offset, seg.length);
  }
  if (seg.modality == Modality::kVisual) {
    return mrope_image_indices(offset, seg.grid->rows, seg.grid->cols);
  }
  return mrope_text_indices(offset, seg.length);
}

void append_tokens(PositionPlan& plan, Modality modality,
                   const std::vector<PositionTuple>& spe, bool join_last) {
  if (!join_last) {
    const std::size_t begin = plan.size();
    plan.segments.push_back({begin, begin, modality});
  }
  const std::size_t seg_begin = plan.segments.back().begin;
  const PositionTuple anchor =
      seg_begin < plan.size() ? plan.spe[seg_begin] : spe.front();
  for (const PositionTuple& p : spe) {
    plan.spe.push_back(p);
    plan.ape.push_back(anchor);
    plan.modality.push_back(modality);
  }
  plan.segments.back().end = plan.size();
}

}  // namespace

PositionPlan build_plan(std::span<const ModalitySegment> segments,
                        IndexMode mode) {
  if (segments.empty()) {
    throw Error("empty_sequence", "at least one segment is required");
  }
  PositionPlan plan;
  plan.mode = mode;
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const ModalitySegment& seg = segments[i];
    check_segment(seg);
    const std::vector<PositionTuple> spe = sequential_indices(seg, mode, offset);
    const bool join = i > 0 && segments[i - 1].modality == seg.modality;
    append_tokens(plan, seg.modality, spe, join);
    std::int64_t seg_max = offset;
    for (const PositionTuple& p : spe) {
      seg_max = std::max(seg_max, p.max_component());
    }
    offset = seg_max + 1;
  }
  return plan;
}

PositionPlan extend_plan(const PositionPlan& plan, std::int64_t new_tokens,
                         Modality modality) {
  if (plan.empty()) {
    throw Error("empty_sequence", "cannot extend an empty plan");
  }
  if (new_tokens <= 0) {
    throw Error("bad_grid", "new_tokens must be positive");
  }
  PositionPlan out = plan;
  const std::int64_t offset = plan.next_offset();
  std::vector<PositionTuple> spe;
  if (modality == Modality::kVisual && plan.mode == IndexMode::kMrope) {
    spe = mrope_image_indices(offset, 1, new_tokens);
  } else {
    spe = mrope_text_indices(offset, new_tokens);
  }
  const bool join = plan.segments.back().modality == modality;
  append_tokens(out, modality, spe, join);
  return out;
}

namespace detail {

namespace {

json tuples_to_value(const std::vector<PositionTuple>& tuples) {
  json arr = json::array();
  for (const PositionTuple& p : tuples) arr.push_back({p.t, p.h, p.w});
  return arr;
}

std::vector<PositionTuple> tuples_from_value(const json& value,
                                             const char* field) {
  if (!value.is_array()) {
    throw ParseError(std::string("field '") + field + "' must be an array");
  }
  std::vector<PositionTuple> out;
  out.reserve(value.size());
  for (const json& triple : value) {
    if (!triple.is_array() || triple.size() != 3 ||
        !std::all_of(triple.begin(), triple.end(),
                     [](const json& v) { return v.is_number_integer(); })) {
      throw ParseError(std::string("field '") + field +
                       "' must hold [t,h,w] integer triples");
    }
    out.push_back({triple[0].get<std::int64_t>(), triple[1].get<std::int64_t>(),
                   triple[2].get<std::int64_t>()});
  }
  return out;
}

const json& require(const json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ParseError(std::string("missing field '") + key + "'");
  }
  return obj.at(key);
}

}  // namespace

json plan_to_value(const PositionPlan& plan) {
  json modality = json::array();
  for (Modality m : plan.modality) modality.push_back(to_string(m));
  json segments = json::array();
  for (const SegmentSpan& s : plan.segments) {
    segments.push_back(
        {{"start", s.begin}, {"end", s.end}, {"modality", to_string(s.modality)}});
  }
  return json{{"mode", to_string(plan.mode)},
              {"spe", tuples_to_value(plan.spe)},
              {"ape", tuples_to_value(plan.ape)},
              {"modality", modality},
              {"segments", segments}};
}

PositionPlan plan_from_value(const json& value) {
  PositionPlan plan;
  try {
    if (value.is_object() && value.contains("mode")) {
      plan.mode = index_mode_from_string(value.at("mode").get<std::string>());
    }
    plan.spe = tuples_from_value(require(value, "spe"), "spe");
    plan.ape = tuples_from_value(require(value, "ape"), "ape");
    for (const json& m : require(value, "modality")) {
      plan.modality.push_back(modality_from_string(m.get<std::string>()));
    }
    for (const json& s : require(value, "segments")) {
      plan.segments.push_back(
          {require(s, "start").get<std::size_t>(),
           require(s, "end").get<std::size_t>(),
           modality_from_string(require(s, "modality").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed plan: ") + e.what());
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(e.what());
  }
  const std::size_t n = plan.spe.size();
  if (plan.ape.size() != n || plan.modality.size() != n) {
    throw ParseError("spe, ape and modality must have equal length");
  }
  std::size_t cursor = 0;
  for (const SegmentSpan& s : plan.segments) {
    if (s.begin != cursor || s.end <= s.begin || s.end > n) {
      throw ParseError("segments must tile the token range contiguously");
    }
    cursor = s.end;
  }
  if (cursor != n) {
    throw ParseError("segments must cover every token");
  }
  return plan;
}

std::vector<ModalitySegment> segments_from_value(const json& value) {
  if (value.is_string()) {
    return parse_segment_spec(value.get<std::string>());
  }
  if (!value.is_array()) {
    throw ParseError("segments must be a spec string or an array");
  }
  std::vector<ModalitySegment> out;
  try {
    for (const json& s : value) {
      const Modality m =
          modality_from_string(require(s, "modality").get<std::string>());
      if (m == Modality::kVisual) {
        out.push_back(ModalitySegment::image(require(s, "rows").get<std::int64_t>(),
                                             require(s, "cols").get<std::int64_t>()));
      } else {
        out.push_back(ModalitySegment::text(require(s, "length").get<std::int64_t>()));
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed segments: ") + e.what());
  }
  return out;
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), e.byte);
  }
}

}  // namespace detail

std::string plan_to_json(const PositionPlan& plan, int indent) {
  return detail::plan_to_value(plan).dump(indent);
}

PositionPlan plan_from_json(std::string_view text) {
  return detail::plan_from_value(detail::parse_json(text));
}

std::vector<ModalitySegment> segments_from_json(std::string_view text) {
  const json doc = detail::parse_json(text);
  if (doc.is_object()) {
    if (!doc.contains("segments")) throw ParseError("missing field 'segments'");
    return detail::segments_from_value(doc.at("segments"));
  }
  return detail::segments_from_value(doc);
}

std::vector<ModalitySegment> parse_segment_spec(std::string_view spec) {
  auto parse_count = [&](std::string_view digits) {
    std::int64_t value = 0;
    const auto [ptr, ec] =
        std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (digits.empty() || ec != std::errc{} ||
        ptr != digits.data() + digits.size() || value <= 0) {
      throw Error("bad_spec", "expected a positive count, got '" +
                                  std::string(digits) + "' in '" +
                                  std::string(spec) + "'");
    }
    return value;
  };

  std::vector<ModalitySegment> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t comma = std::min(spec.find(',', pos), spec.size());
    const std::string_view item = spec.substr(pos, comma - pos);
    const std::size_t colon = item.find(':');
    if (colon == std::string_view::npos) {
      throw Error("bad_spec", "segment '" + std::string(item) +
                                  "' must look like txt:N or img:RxC");
    }
    const std::string_view kind = item.substr(0, colon);
    const std::string_view arg = item.substr(colon + 1);
    if (kind == "txt" || kind == "text") {
      out.push_back(ModalitySegment::text(parse_count(arg)));
    } else if (kind == "img" || kind == "image") {
      const std::size_t x = arg.find('x');
      if (x == std::string_view::npos) {
        throw Error("bad_spec", "image segment '" + std::string(item) +
                                    "' must look like img:RxC");
      }
      out.push_back(ModalitySegment::image(parse_count(arg.substr(0, x)),
                                           parse_count(arg.substr(x + 1))));
    } else {
      throw Error("bad_spec", "unknown segment kind '" + std::string(kind) + "'");
    }
    pos = comma + 1;
  }
  return out;
}

}  // namespace dipe
