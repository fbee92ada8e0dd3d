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

#include "dipe/rope.hpp"

#include <cmath>
#include <complex>
#include <string>

#include "dipe/error.hpp"

namespace dipe {

void validate(const RopeConfig& cfg) {
  if (cfg.head_dim < 2 || cfg.head_dim % 2 != 0) {
    throw Error("bad_config", "head_dim must be even and >= 2, got " +
                                  std::to_string(cfg.head_dim));
  }
  if (!(cfg.base > 1.0)) {
    throw Error("bad_config", "base must be > 1");
  }
}

std::vector<double> frequencies(int dim, double base) {
  const int half = dim / 2;
  std::vector<double> freqs(static_cast<std::size_t>(half));
  for (int j = 0; j < half; ++j) {
    freqs[j] = std::pow(base, -2.0 * j / static_cast<double>(dim));
  }
  return freqs;
}

std::vector<double> rotation_angles(double position, const RopeConfig& cfg) {
  std::vector<double> angles = frequencies(cfg);
  for (double& a : angles) a *= position;
  return angles;
}

template <class T>
void rotate_pairs(std::span<T> inout, double position,
                  std::span<const double> freqs) {
  for (std::size_t j = 0; j < freqs.size(); ++j) {
    const double angle = position * freqs[j];
    const T c = static_cast<T>(std::cos(angle));
    const T s = static_cast<T>(std::sin(angle));
    const T x0 = inout[2 * j];
    const T x1 = inout[2 * j + 1];
    inout[2 * j] = c * x0 - s * x1;
    inout[2 * j + 1] = s * x0 + c * x1;
  }
}

template <class T>
std::vector<T> rotate(std::span<const T> vec, double position,
                      const RopeConfig& cfg) {
  validate(cfg);
  if (vec.size() != static_cast<std::size_t>(cfg.head_dim)) {
    throw Error("dim_mismatch", "vector has " + std::to_string(vec.size()) +
                                    " entries, head_dim is " +
                                    std::to_string(cfg.head_dim));
  }
  std::vector<T> out(vec.begin(), vec.end());
  const std::vector<double> freqs = frequencies(cfg);
  rotate_pairs(std::span<T>(out), position, freqs);
  return out;
}

double decay_bound(std::int64_t distance, const RopeConfig& cfg) {
  validate(cfg);
  const std::vector<double> freqs = frequencies(cfg);
  const double dist = static_cast<double>(distance);
  std::complex<double> partial{0.0, 0.0};
  double total = 0.0;
  for (double theta : freqs) {
    partial += std::polar(1.0, theta * dist);
    total += std::abs(partial);
  }
  return total;
}

template void rotate_pairs<double>(std::span<double>, double,
                                   std::span<const double>);
template void rotate_pairs<float>(std::span<float>, double,
                                  std::span<const double>);
template std::vector<double> rotate<double>(std::span<const double>, double,
                                            const RopeConfig&);
template std::vector<float> rotate<float>(std::span<const float>, double,
                                          const RopeConfig&);

}  // namespace dipe
