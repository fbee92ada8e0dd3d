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
#include <span>
#include <vector>

#include "dipe/mrope.hpp"
#include "dipe/plan.hpp"
#include "dipe/rope.hpp"

namespace dipe {

// Dense (tokens x heads x dim) array, token-major.
template <class T>
struct HeadTensor {
  std::size_t tokens = 0;
  std::size_t heads = 0;
  std::size_t dim = 0;
  std::vector<T> data;

  HeadTensor() = default;
  HeadTensor(std::size_t tokens_, std::size_t heads_, std::size_t dim_)
      : tokens(tokens_), heads(heads_), dim(dim_),
        data(tokens_ * heads_ * dim_, T{}) {}

  std::span<T> at(std::size_t token, std::size_t head) {
    return {data.data() + (token * heads + head) * dim, dim};
  }
  std::span<const T> at(std::size_t token, std::size_t head) const {
    return {data.data() + (token * heads + head) * dim, dim};
  }
  // All heads of one token, heads * dim values.
  std::span<const T> row(std::size_t token) const {
    return {data.data() + token * heads * dim, heads * dim};
  }

  // Appends one token given as heads * dim values.
  void append_token(std::span<const T> values);

  bool same_shape(const HeadTensor& other) const {
    return tokens == other.tokens && heads == other.heads && dim == other.dim;
  }
};

// Row-major (queries x keys) boolean masks, true = attend.
struct MaskPair {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> intra;
  std::vector<std::uint8_t> inter;

  bool intra_at(std::size_t i, std::size_t j) const {
    return intra[i * keys + j] != 0;
  }
  bool inter_at(std::size_t i, std::size_t j) const {
    return inter[i * keys + j] != 0;
  }
  std::span<const std::uint8_t> intra_row(std::size_t i) const {
    return {intra.data() + i * keys, keys};
  }
  std::span<const std::uint8_t> inter_row(std::size_t i) const {
    return {inter.data() + i * keys, keys};
  }
  std::size_t intra_count() const;
  std::size_t inter_count() const;
};

// allowed(i, j) = j <= i when causal, always otherwise. With
// full_intra_image, tokens of one visual segment also see each other
// bidirectionally. intra keeps same-modality pairs, inter the rest.
// Rows cover queries [first_query, n); columns cover every key.
MaskPair build_masks(const PositionPlan& plan, bool causal,
                     bool full_intra_image = false,
                     std::size_t first_query = 0);

// Number of (i, j) pairs allowed before the modality split.
std::size_t allowed_count(const PositionPlan& plan, bool causal,
                          bool full_intra_image = false);

// Projected, not yet rotated, queries/keys/values plus their positions.
template <class T>
struct AttentionCase {
  HeadTensor<T> queries;
  HeadTensor<T> keys;
  HeadTensor<T> values;
  PositionPlan plan;
  RopeConfig cfg;
  ChunkPartition partition;
  bool causal = true;
  bool full_intra_image = false;
};

// Throws Error("dim_mismatch") when shapes, plan length or head_dim
// disagree.
template <class T>
void validate(const AttentionCase<T>& c);

template <class T>
struct AttentionResult {
  HeadTensor<T> output;
  std::vector<T> lse;    // tokens x heads; -inf for rows with no key
  std::vector<T> alpha;  // tokens x heads intra weight; split path only

  T lse_at(std::size_t token, std::size_t head) const {
    return lse[token * output.heads + head];
  }
  T alpha_at(std::size_t token, std::size_t head) const {
    return alpha[token * output.heads + head];
  }
};

// baseline: every query uses its SPE rotation.
// dipe: SPE rotation for same-modality keys, APE rotation otherwise.
enum class AttentionMode { kBaseline, kDipe };

template <class T>
struct SoftmaxRow {
  std::vector<T> weights;
  T lse;
};

// Masked softmax with the row max subtracted before exponentiation.
// Masked-out entries get weight 0; an empty row yields lse = -inf.
template <class T>
SoftmaxRow<T> softmax_row_with_lse(std::span<const T> logits,
                                   std::span<const std::uint8_t> mask);

template <class T>
struct MergeWeight {
  T alpha;  // weight of the first partial
  T lse;    // log(exp(lse1) + exp(lse2))
};

// out = sigmoid(lse1 - lse2) * o1 + (1 - sigmoid(lse1 - lse2)) * o2.
// When both partials are empty the output is zero and lse is -inf.
template <class T>
MergeWeight<T> merge_partials(std::span<const T> o1, T lse1,
                              std::span<const T> o2, T lse2, std::span<T> out);

template <class T>
struct RotatedViews {
  HeadTensor<T> q_spe;
  HeadTensor<T> q_ape;
  HeadTensor<T> k;
};

template <class T>
RotatedViews<T> rotate_views(const AttentionCase<T>& c);

// One masked attention kernel: softmax(q k^T / sqrt(dim)) v per head, with
// a (q.tokens x k.tokens) mask. Keys are reduced sequentially by index.
template <class T>
AttentionResult<T> masked_attention(const HeadTensor<T>& q,
                                    const HeadTensor<T>& k,
                                    const HeadTensor<T>& v,
                                    std::span<const std::uint8_t> mask);

// Dense oracle: one global softmax per (query, head) over all permitted keys.
template <class T>
AttentionResult<T> attend_reference(const AttentionCase<T>& c,
                                    AttentionMode mode);

// Two masked kernels (intra with SPE queries, inter with APE queries in
// dipe mode) merged through their log-sum-exp statistics. In baseline mode
// both kernels use SPE queries, which makes alpha the same-modality mass.
// With first_query > 0 only rows [first_query, n) are computed and returned.
template <class T>
AttentionResult<T> attend_split(const AttentionCase<T>& c,
                                AttentionMode mode = AttentionMode::kDipe,
                                std::size_t first_query = 0);

// Scaled logits laid out heads x tokens x tokens; -inf where not permitted.
template <class T>
std::vector<T> attention_logits(const AttentionCase<T>& c, AttentionMode mode);

template <class T>
struct DecodeOutput {
  std::vector<T> output;  // heads x dim
  std::vector<T> lse;     // heads
  std::vector<T> alpha;   // heads
};

// Append-only cache of SPE-rotated keys and raw values. Decoding only adds
// rows; earlier rows are never rewritten.
template <class T>
class KvCache {
 public:
  // Runs attend_split over the prefix and stores its keys/values.
  static KvCache prefill(const AttentionCase<T>& prefix,
                         AttentionResult<T>* prefix_result = nullptr);

  // Adopts externally produced cache contents. Throws
  // Error("plan_mismatch") when the plan and the stored rows disagree.
  KvCache(const RopeConfig& cfg, const ChunkPartition& part, PositionPlan plan,
          HeadTensor<T> rotated_keys, HeadTensor<T> values);

  // Appends one token of `modality` (extend_plan semantics) and returns its
  // attention output against every cached key, itself included.
  // new_q / new_k / new_v hold heads * dim values.
  DecodeOutput<T> decode_step(std::span<const T> new_q, std::span<const T> new_k,
                              std::span<const T> new_v, Modality modality);

  const PositionPlan& plan() const { return plan_; }
  const HeadTensor<T>& rotated_keys() const { return keys_; }
  const HeadTensor<T>& values() const { return values_; }
  std::size_t tokens() const { return keys_.tokens; }

 private:
  KvCache(RopeConfig cfg, ChunkPartition part)
      : cfg_(cfg), part_(part), rotator_(cfg, part) {}

  RopeConfig cfg_;
  ChunkPartition part_;
  MropeRotator rotator_;
  PositionPlan plan_;
  HeadTensor<T> keys_;
  HeadTensor<T> values_;
};

}  // namespace dipe
