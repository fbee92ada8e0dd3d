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

#include "dipe/mrope.hpp"

#include <algorithm>
#include <string>

#include "dipe/error.hpp"

namespace dipe {

std::int64_t PositionTuple::max_component() const {
  return std::max({t, h, w});
}

ChunkPartition ChunkPartition::equal_thirds(const RopeConfig& cfg) {
  validate(cfg);
  const int pairs = cfg.head_dim / 2;
  if (pairs % 3 != 0) {
    throw Error("bad_partition",
                "head_dim/2 = " + std::to_string(pairs) +
                    " is not divisible by 3; pass an explicit partition");
  }
  return ChunkPartition{pairs / 3, pairs / 3, pairs / 3};
}

void validate(const ChunkPartition& part, const RopeConfig& cfg) {
  validate(cfg);
  if (part.t_pairs <= 0 || part.h_pairs <= 0 || part.w_pairs <= 0 ||
      part.total_pairs() != cfg.head_dim / 2) {
    throw Error("bad_partition",
                "partition (" + std::to_string(part.t_pairs) + "," +
                    std::to_string(part.h_pairs) + "," +
                    std::to_string(part.w_pairs) + ") does not cover " +
                    std::to_string(cfg.head_dim / 2) + " pairs");
  }
}

MropeRotator::MropeRotator(const RopeConfig& cfg, const ChunkPartition& part)
    : cfg_(cfg), part_(part) {
  validate(part_, cfg_);
  const std::array<int, 3> pairs = {part.t_pairs, part.h_pairs, part.w_pairs};
  for (int c = 0; c < 3; ++c) {
    freqs_[c] = frequencies(2 * pairs[c], cfg.base);
  }
}

template <class T>
void MropeRotator::apply(std::span<T> inout,
                         const std::array<double, 3>& pos) const {
  if (inout.size() != static_cast<std::size_t>(cfg_.head_dim)) {
    throw Error("dim_mismatch", "vector has " + std::to_string(inout.size()) +
                                    " entries, head_dim is " +
                                    std::to_string(cfg_.head_dim));
  }
  std::size_t offset = 0;
  for (int c = 0; c < 3; ++c) {
    const std::size_t width = 2 * freqs_[c].size();
    rotate_pairs(inout.subspan(offset, width), pos[c],
                 std::span<const double>(freqs_[c]));
    offset += width;
  }
}

template <class T>
std::vector<T> mrope_rotate(std::span<const T> vec,
                            const std::array<double, 3>& pos,
                            const RopeConfig& cfg,
                            const ChunkPartition& part) {
  const MropeRotator rotator(cfg, part);
  std::vector<T> out(vec.begin(), vec.end());
  rotator.apply(std::span<T>(out), pos);
  return out;
}

template <class T>
std::vector<T> mrope_rotate(std::span<const T> vec, const PositionTuple& pos,
                            const RopeConfig& cfg,
                            const ChunkPartition& part) {
  return mrope_rotate(vec,
                      std::array<double, 3>{static_cast<double>(pos.t),
                                            static_cast<double>(pos.h),
                                            static_cast<double>(pos.w)},
                      cfg, part);
}

std::vector<PositionTuple> mrope_text_indices(std::int64_t start,
                                              std::int64_t length) {
  std::vector<PositionTuple> out;
  out.reserve(static_cast<std::size_t>(std::max<std::int64_t>(length, 0)));
  for (std::int64_t i = 0; i < length; ++i) {
    out.push_back({start + i, start + i, start + i});
  }
  return out;
}

std::vector<PositionTuple> mrope_image_indices(std::int64_t start,
                                               std::int64_t rows,
                                               std::int64_t cols) {
  std::vector<PositionTuple> out;
  out.reserve(static_cast<std::size_t>(std::max<std::int64_t>(rows * cols, 0)));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      out.push_back({start, start + r, start + c});
    }
  }
  return out;
}

std::vector<PositionTuple> vanilla_rope_indices(std::int64_t start,
                                                std::int64_t length) {
  return mrope_text_indices(start, length);
}

template void MropeRotator::apply<double>(std::span<double>,
                                          const std::array<double, 3>&) const;
template void MropeRotator::apply<float>(std::span<float>,
                                         const std::array<double, 3>&) const;
template std::vector<double> mrope_rotate<double>(std::span<const double>,
                                                  const std::array<double, 3>&,
                                                  const RopeConfig&,
                                                  const ChunkPartition&);
template std::vector<float> mrope_rotate<float>(std::span<const float>,
                                                const std::array<double, 3>&,
                                                const RopeConfig&,
                                                const ChunkPartition&);
template std::vector<double> mrope_rotate<double>(std::span<const double>,
                                                  const PositionTuple&,
                                                  const RopeConfig&,
                                                  const ChunkPartition&);
template std::vector<float> mrope_rotate<float>(std::span<const float>,
                                                const PositionTuple&,
                                                const RopeConfig&,
                                                const ChunkPartition&);

}  // namespace dipe
