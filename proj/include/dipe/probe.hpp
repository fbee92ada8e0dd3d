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
#include <string>
#include <string_view>
#include <vector>

#include "dipe/plan.hpp"

namespace dipe {

// vanilla: 1D RoPE indices, one softmax. mrope: MRoPE indices, one softmax.
// dipe: MRoPE indices with anchored inter-modal queries.
enum class ProbeMode { kVanilla, kMrope, kDipe };
enum class IntraImageMask { kCausal, kFull };
enum class Precision { kF64, kF32 };

std::string_view to_string(ProbeMode m);
ProbeMode probe_mode_from_string(std::string_view s);

struct ProbeConfig {
  std::uint64_t seed = 20260218;
  int layers = 2;
  int heads = 4;
  int head_dim = 48;
  double base = 10000.0;
  Grid image_grid{4, 4};
  int question_len = 8;
  std::vector<std::int64_t> distractor_lengths{0, 64, 256, 1024, 4096};
  std::vector<ProbeMode> modes{ProbeMode::kVanilla, ProbeMode::kMrope,
                               ProbeMode::kDipe};
  IntraImageMask intra_image_mask = IntraImageMask::kCausal;
  // Gain of the per-layer query/key projection; sets the logit scale.
  double qk_gain = 8.0;
  // Share of each question token's energy copied from one visual token.
  double question_overlap = 0.8;
  Precision precision = Precision::kF64;
  // Worker threads over (mode, length) cells. Results do not depend on it.
  int threads = 1;
};

// Throws Error("bad_config").
void validate(const ProbeConfig& cfg);

// Token layout: [image rows*cols][distractor L][question question_len].
// Image and question rows are drawn once per seed and reused for every L;
// distractor rows come from their own stream, so shorter distractors are
// prefixes of longer ones.
struct SynthSequence {
  std::size_t hidden = 0;          // heads * head_dim
  std::vector<double> embeddings;  // tokens x hidden
  PositionPlan plan;
  std::size_t n_visual = 0;
  std::size_t question_begin = 0;

  std::size_t tokens() const { return plan.size(); }
};

SynthSequence synth_sequence(const ProbeConfig& cfg, std::int64_t distractor_len,
                             IndexMode mode = IndexMode::kMrope);

struct ProbeCell {
  ProbeMode mode = ProbeMode::kMrope;
  std::int64_t distractor_len = 0;
  int layer = 0;
  // Mean over question queries and heads of the attention weight on
  // visual keys, measured on the propagated hidden states.
  double visual_mass = 0.0;
  double per_visual_token_mass = 0.0;
  // Mean scaled question -> visual logit of this layer's projections applied
  // to the synthesized token content, so it isolates the positional effect.
  double mean_inter_logit = 0.0;
};

struct ProbeReport {
  std::size_t n_visual = 0;
  std::vector<ProbeCell> cells;  // ordered by mode, length, layer

  const ProbeCell& at(ProbeMode mode, std::int64_t distractor_len,
                      int layer) const;
};

ProbeReport run_probe(const ProbeConfig& cfg);

inline constexpr std::string_view kProbeCsvHeader =
    "mode,distractor_len,layer,visual_mass,per_visual_token_mass,"
    "mean_inter_logit";

std::string report_to_csv(const ProbeReport& report);
// Cells plus a cross-layer mean per (mode, length).
std::string report_to_json(const ProbeReport& report, int indent = 2);

}  // namespace dipe
