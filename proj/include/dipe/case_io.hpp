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

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dipe/attention.hpp"

namespace dipe {

// Seeded random attention case: Gaussian q/k/v rows scaled by
// 1/sqrt(head_dim) over a plan built from `segments`.
struct RandomCaseSpec {
  std::uint64_t seed = 0;
  std::vector<ModalitySegment> segments;
  std::size_t heads = 1;
  RopeConfig cfg;
  std::optional<ChunkPartition> partition;  // default: equal thirds
  IndexMode mode = IndexMode::kMrope;
  bool causal = true;
  bool full_intra_image = false;
};

AttentionCase<double> make_random_case(const RandomCaseSpec& spec);

// Random layout of alternating text / image segments totalling at most
// max_tokens, used by the property suites.
std::vector<ModalitySegment> random_segments(std::uint64_t seed,
                                             std::size_t max_tokens);

template <class T>
AttentionCase<T> cast_case(const AttentionCase<double>& c);

// JSON case format:
//   {"head_dim": 48, "base": 10000, "heads": 4, "causal": true,
//    "full_intra_image": false, "partition": [8, 8, 8], "mode": "mrope",
//    "segments": "img:2x2,txt:4"  |  [{"modality": "text", "length": 3}, ...]
//    or "plan": {...plan json...},
//    "queries": [[[d values] x heads] x tokens], "keys": ..., "values": ...}
std::string case_to_json(const AttentionCase<double>& c, int indent = -1);
AttentionCase<double> case_from_json(std::string_view text);

// {"output": [[[..]]], "lse": [[..]], "alpha": [[..]]}; -inf lse is null.
template <class T>
std::string result_to_json(const AttentionResult<T>& result, int indent = -1);

}  // namespace dipe
