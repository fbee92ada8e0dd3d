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

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <vector>

#include "dipe/rope.hpp"

namespace dipe {

// Temporal / height / width position of one token.
struct PositionTuple {
  std::int64_t t = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t max_component() const;
  auto operator<=>(const PositionTuple&) const = default;
};

// Number of 2D rotation subspaces given to each of t, h, w. The chunks
// occupy consecutive dimensions in t, h, w order.
struct ChunkPartition {
  int t_pairs = 1;
  int h_pairs = 1;
  int w_pairs = 1;

  int total_pairs() const { return t_pairs + h_pairs + w_pairs; }

  // Equal thirds of head_dim / 2. Throws Error("bad_partition") when the
  // pair count is not divisible by three.
  static ChunkPartition equal_thirds(const RopeConfig& cfg);
};

// Throws Error("bad_partition") unless every chunk is positive and the
// chunks cover head_dim / 2 pairs.
void validate(const ChunkPartition& part, const RopeConfig& cfg);

// Applies the three chunked rotations. Each chunk of 2s dimensions uses the
// frequencies of its own local dimension, base^(-2j/(2s)), j = 0 .. s-1.
// Frequency tables are built once so the rotator can be reused per token.
class MropeRotator {
 public:
  MropeRotator(const RopeConfig& cfg, const ChunkPartition& part);

  int head_dim() const { return cfg_.head_dim; }

  // Positions may be fractional or negative (relative offsets).
  template <class T>
  void apply(std::span<T> inout, const std::array<double, 3>& pos) const;

  template <class T>
  void apply(std::span<T> inout, const PositionTuple& pos) const {
    apply(inout, std::array<double, 3>{static_cast<double>(pos.t),
                                       static_cast<double>(pos.h),
                                       static_cast<double>(pos.w)});
  }

 private:
  RopeConfig cfg_;
  ChunkPartition part_;
  std::array<std::vector<double>, 3> freqs_;
};

template <class T>
std::vector<T> mrope_rotate(std::span<const T> vec, const PositionTuple& pos,
                            const RopeConfig& cfg, const ChunkPartition& part);

// Signed (relative) positions, e.g. (dt, dh, dw) between two tuples.
template <class T>
std::vector<T> mrope_rotate(std::span<const T> vec,
                            const std::array<double, 3>& pos,
                            const RopeConfig& cfg, const ChunkPartition& part);

inline std::vector<double> mrope_rotate(const std::vector<double>& vec,
                                        const PositionTuple& pos,
                                        const RopeConfig& cfg,
                                        const ChunkPartition& part) {
  return mrope_rotate(std::span<const double>(vec), pos, cfg, part);
}

// (start+i, start+i, start+i) for i in [0, length).
std::vector<PositionTuple> mrope_text_indices(std::int64_t start,
                                              std::int64_t length);

// Row-major patches; patch (r, c) -> (start, start + r, start + c).
std::vector<PositionTuple> mrope_image_indices(std::int64_t start,
                                               std::int64_t rows,
                                               std::int64_t cols);

// 1D RoPE baseline: every token, visual or not, gets the running index.
std::vector<PositionTuple> vanilla_rope_indices(std::int64_t start,
                                                std::int64_t length);

}  // namespace dipe
