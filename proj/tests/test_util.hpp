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

#include <cmath>
#include <cstdint>
#include <vector>

#include "dipe/random.hpp"

namespace dipe::testing {

inline std::vector<double> gaussian_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.gaussian();
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(const std::vector<double>& v) { return std::sqrt(dot(v, v)); }

// Dense d x d block-diagonal rotation built entry by entry; the oracle for
// the pairwise rotation code. angles[j] rotates the subspace (2j, 2j+1).
inline std::vector<double> dense_rotation(const std::vector<double>& angles) {
  const std::size_t d = 2 * angles.size();
  std::vector<double> m(d * d, 0.0);
  for (std::size_t j = 0; j < angles.size(); ++j) {
    const double c = std::cos(angles[j]);
    const double s = std::sin(angles[j]);
    m[(2 * j) * d + 2 * j] = c;
    m[(2 * j) * d + 2 * j + 1] = -s;
    m[(2 * j + 1) * d + 2 * j] = s;
    m[(2 * j + 1) * d + 2 * j + 1] = c;
  }
  return m;
}

inline std::vector<double> matvec(const std::vector<double>& m,
                                  const std::vector<double>& v) {
  const std::size_t d = v.size();
  std::vector<double> out(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r] += m[r * d + c] * v[c];
  }
  return out;
}

}  // namespace dipe::testing
