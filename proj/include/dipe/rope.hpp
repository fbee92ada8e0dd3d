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
#include <span>
#include <vector>

namespace dipe {

// Only adjacent pairs (x[2j], x[2j+1]) are implemented; the enum records
// the layout so a half-split build cannot be mixed in silently.
enum class PairConvention { kAdjacentPairs };

struct RopeConfig {
  int head_dim = 64;
  double base = 10000.0;
  PairConvention pair_convention = PairConvention::kAdjacentPairs;
};

// Throws Error("bad_config") unless head_dim is even and >= 2 and base > 1.
void validate(const RopeConfig& cfg);

// theta_j = base^(-2j/dim), j = 0 .. dim/2 - 1.
std::vector<double> frequencies(int dim, double base);
inline std::vector<double> frequencies(const RopeConfig& cfg) {
  return frequencies(cfg.head_dim, cfg.base);
}

// Per-subspace angles position * theta_j.
std::vector<double> rotation_angles(double position, const RopeConfig& cfg);

// Rotates adjacent pairs of `inout` in place by position * freqs[j].
// inout.size() must equal 2 * freqs.size(). Angles and their sin/cos are
// evaluated in double, the pair update runs in T.
template <class T>
void rotate_pairs(std::span<T> inout, double position,
                  std::span<const double> freqs);

// Block-diagonal rotation R_position. Throws Error("dim_mismatch").
template <class T>
std::vector<T> rotate(std::span<const T> vec, double position,
                      const RopeConfig& cfg);

inline std::vector<double> rotate(const std::vector<double>& vec,
                                  double position, const RopeConfig& cfg) {
  return rotate(std::span<const double>(vec), position, cfg);
}

// Long-term decay bound with the embedding constant fixed to 1:
//   sum_{j=1}^{d/2} | sum_{l=1}^{j} exp(i * theta_l * distance) |
// where theta_l is the l-th entry (1-based) of frequencies(cfg).
double decay_bound(std::int64_t distance, const RopeConfig& cfg);

}  // namespace dipe
