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

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dipe/mrope.hpp"

namespace dipe {

enum class Modality { kText, kVisual };

// How sequential (SPE) indices are assigned: MRoPE tuples, or the 1D
// running index for every token.
enum class IndexMode { kMrope, kVanilla };

std::string_view to_string(Modality m);
std::string_view to_string(IndexMode m);
Modality modality_from_string(std::string_view s);
IndexMode index_mode_from_string(std::string_view s);

struct Grid {
  std::int64_t rows = 1;
  std::int64_t cols = 1;
  bool operator==(const Grid&) const = default;
};

struct ModalitySegment {
  Modality modality = Modality::kText;
  std::int64_t length = 0;
  std::optional<Grid> grid;  // required iff modality == kVisual

  static ModalitySegment text(std::int64_t length) {
    return {Modality::kText, length, std::nullopt};
  }
  static ModalitySegment image(std::int64_t rows, std::int64_t cols) {
    return {Modality::kVisual, rows * cols, Grid{rows, cols}};
  }
};

// Half-open token range [begin, end) of one maximal same-modality run.
struct SegmentSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  Modality modality = Modality::kText;
  bool operator==(const SegmentSpan&) const = default;
};

// Dual position indices for a token sequence. spe holds the sequential
// tuples used for keys and intra-modal queries; ape holds, per token, the
// first spe tuple of its segment, used for inter-modal queries.
struct PositionPlan {
  IndexMode mode = IndexMode::kMrope;
  std::vector<PositionTuple> spe;
  std::vector<PositionTuple> ape;
  std::vector<Modality> modality;
  std::vector<SegmentSpan> segments;

  std::size_t size() const { return spe.size(); }
  bool empty() const { return spe.empty(); }
  // Offset where the next segment would start: max spe component + 1.
  std::int64_t next_offset() const;
  // Index into `segments` of the run containing `token`.
  std::size_t segment_of(std::size_t token) const;

  bool operator==(const PositionPlan&) const = default;
};

// Builds SPE/APE indices segment by segment. Adjacent same-modality
// segments are merged into one anchored run; inside a merged visual run
// each image still receives its own grid indices.
// Errors: "empty_sequence", "bad_grid".
PositionPlan build_plan(std::span<const ModalitySegment> segments,
                        IndexMode mode = IndexMode::kMrope);

// Appends new_tokens of the given modality. Tokens matching the trailing
// segment join it and share its anchor; otherwise a new segment opens at
// next_offset(). New visual tokens are laid out as a 1 x N strip.
PositionPlan extend_plan(const PositionPlan& plan, std::int64_t new_tokens,
                         Modality modality);

std::string plan_to_json(const PositionPlan& plan, int indent = -1);
PositionPlan plan_from_json(std::string_view text);

// Inline grammar "txt:3,img:2x2,txt:2". Throws Error("bad_spec").
std::vector<ModalitySegment> parse_segment_spec(std::string_view spec);

// JSON form: an inline spec string, an array of
// {"modality": "text", "length": N} / {"modality": "visual", "rows": R,
// "cols": C}, or an object holding either under "segments".
std::vector<ModalitySegment> segments_from_json(std::string_view text);

}  // namespace dipe
