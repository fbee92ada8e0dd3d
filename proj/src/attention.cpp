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

#include "dipe/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dipe/error.hpp"

namespace dipe {

namespace {

// allowed(i, j) with the segment lookup hoisted out of the pair loops.
class Permission {
 public:
  Permission(const PositionPlan& plan, bool causal, bool full_intra_image)
      : causal_(causal), full_intra_image_(full_intra_image) {
    if (full_intra_image_) {
      segment_.resize(plan.size());
      for (std::size_t s = 0; s < plan.segments.size(); ++s) {
        const SegmentSpan& span = plan.segments[s];
        for (std::size_t t = span.begin; t < span.end; ++t) {
          segment_[t] = span.modality == Modality::kVisual
                            ? static_cast<std::ptrdiff_t>(s)
                            : -1;
        }
      }
    }
  }

  bool operator()(std::size_t i, std::size_t j) const {
    if (!causal_ || j <= i) return true;
    return full_intra_image_ && segment_[i] >= 0 && segment_[i] == segment_[j];
  }

 private:
  bool causal_;
  bool full_intra_image_;
  std::vector<std::ptrdiff_t> segment_;  // visual segment id, -1 for text
};

template <class T>
T neg_inf() {
  return -std::numeric_limits<T>::infinity();
}

// Four interleaved partial sums, combined in a fixed order.
template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc[4] = {T{0}, T{0}, T{0}, T{0}};
  const std::size_t n = a.size();
  std::size_t d = 0;
  for (; d + 4 <= n; d += 4) {
    acc[0] += a[d] * b[d];
    acc[1] += a[d + 1] * b[d + 1];
    acc[2] += a[d + 2] * b[d + 2];
    acc[3] += a[d + 3] * b[d + 3];
  }
  for (; d < n; ++d) acc[0] += a[d] * b[d];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

// Softmax over the masked entries of `logits`, in place. Returns the lse.
template <class T>
T softmax_inplace(std::span<T> logits, std::span<const std::uint8_t> mask) {
  T row_max = neg_inf<T>();
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (mask[j]) row_max = std::max(row_max, logits[j]);
  }
  if (row_max == neg_inf<T>()) {
    std::fill(logits.begin(), logits.end(), T{0});
    return neg_inf<T>();
  }
  T sum = T{0};
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (mask[j]) {
      logits[j] = std::exp(logits[j] - row_max);
      sum += logits[j];
    } else {
      logits[j] = T{0};
    }
  }
  for (T& w : logits) w /= sum;
  return row_max + std::log(sum);
}

template <class T>
void check_shape(const HeadTensor<T>& t, const char* what) {
  if (t.data.size() != t.tokens * t.heads * t.dim) {
    throw Error("dim_mismatch", std::string(what) + " storage does not match "
                                                    "its declared shape");
  }
}

}  // namespace

template <class T>
void HeadTensor<T>::append_token(std::span<const T> values) {
  if (values.size() != heads * dim) {
    throw Error("dim_mismatch", "token row has " + std::to_string(values.size()) +
                                    " values, expected " +
                                    std::to_string(heads * dim));
  }
  data.insert(data.end(), values.begin(), values.end());
  ++tokens;
}

std::size_t MaskPair::intra_count() const {
  return static_cast<std::size_t>(std::count(intra.begin(), intra.end(), 1));
}

std::size_t MaskPair::inter_count() const {
  return static_cast<std::size_t>(std::count(inter.begin(), inter.end(), 1));
}

MaskPair build_masks(const PositionPlan& plan, bool causal,
                     bool full_intra_image, std::size_t first_query) {
  if (plan.empty()) {
    throw Error("empty_sequence", "cannot build masks for an empty plan");
  }
  const std::size_t n = plan.size();
  if (first_query >= n) {
    throw Error("dim_mismatch", "first_query is past the end of the plan");
  }
  const std::size_t rows = n - first_query;
  const Permission permitted(plan, causal, full_intra_image);
  MaskPair masks{rows, n, std::vector<std::uint8_t>(rows * n, 0),
                 std::vector<std::uint8_t>(rows * n, 0)};
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t i = first_query + r;
    for (std::size_t j = 0; j < n; ++j) {
      if (!permitted(i, j)) continue;
      if (plan.modality[i] == plan.modality[j]) {
        masks.intra[r * n + j] = 1;
      } else {
        masks.inter[r * n + j] = 1;
      }
    }
  }
  return masks;
}

std::size_t allowed_count(const PositionPlan& plan, bool causal,
                          bool full_intra_image) {
  const Permission permitted(plan, causal, full_intra_image);
  std::size_t count = 0;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    for (std::size_t j = 0; j < plan.size(); ++j) {
      if (permitted(i, j)) ++count;
    }
  }
  return count;
}

template <class T>
void validate(const AttentionCase<T>& c) {
  validate(c.partition, c.cfg);
  check_shape(c.queries, "queries");
  check_shape(c.keys, "keys");
  check_shape(c.values, "values");
  if (!c.queries.same_shape(c.keys) || !c.queries.same_shape(c.values)) {
    throw Error("dim_mismatch", "queries, keys and values differ in shape");
  }
  if (c.queries.tokens != c.plan.size()) {
    throw Error("dim_mismatch", "plan has " + std::to_string(c.plan.size()) +
                                    " tokens, arrays have " +
                                    std::to_string(c.queries.tokens));
  }
  if (c.queries.dim != static_cast<std::size_t>(c.cfg.head_dim)) {
    throw Error("dim_mismatch", "array head_dim " +
                                    std::to_string(c.queries.dim) +
                                    " differs from config " +
                                    std::to_string(c.cfg.head_dim));
  }
  if (c.plan.modality.size() != c.plan.size() ||
      c.plan.ape.size() != c.plan.size()) {
    throw Error("dim_mismatch", "plan arrays differ in length");
  }
}

template <class T>
SoftmaxRow<T> softmax_row_with_lse(std::span<const T> logits,
                                   std::span<const std::uint8_t> mask) {
  SoftmaxRow<T> row{std::vector<T>(logits.begin(), logits.end()), T{0}};
  row.lse = softmax_inplace(std::span<T>(row.weights), mask);
  return row;
}

template <class T>
MergeWeight<T> merge_partials(std::span<const T> o1, T lse1,
                              std::span<const T> o2, T lse2,
                              std::span<T> out) {
  if (lse1 == neg_inf<T>() && lse2 == neg_inf<T>()) {
    std::fill(out.begin(), out.end(), T{0});
    return {T{1}, neg_inf<T>()};
  }
  // sigmoid(x) with exp of a non-positive argument only; x = +-inf lands on
  // exactly 1 or 0.
  const T x = lse1 - lse2;
  T alpha;
  if (x >= T{0}) {
    alpha = T{1} / (T{1} + std::exp(-x));
  } else {
    const T e = std::exp(x);
    alpha = e / (T{1} + e);
  }
  const T beta = T{1} - alpha;
  for (std::size_t d = 0; d < out.size(); ++d) {
    out[d] = alpha * o1[d] + beta * o2[d];
  }
  const T hi = std::max(lse1, lse2);
  const T lo = std::min(lse1, lse2);
  return {alpha, hi + std::log1p(std::exp(lo - hi))};
}

template <class T>
RotatedViews<T> rotate_views(const AttentionCase<T>& c) {
  validate(c);
  const MropeRotator rotator(c.cfg, c.partition);
  RotatedViews<T> views{c.queries, c.queries, c.keys};
  for (std::size_t i = 0; i < c.queries.tokens; ++i) {
    for (std::size_t h = 0; h < c.queries.heads; ++h) {
      rotator.apply(views.q_spe.at(i, h), c.plan.spe[i]);
      rotator.apply(views.q_ape.at(i, h), c.plan.ape[i]);
      rotator.apply(views.k.at(i, h), c.plan.spe[i]);
    }
  }
  return views;
}

template <class T>
AttentionResult<T> masked_attention(const HeadTensor<T>& q,
                                    const HeadTensor<T>& k,
                                    const HeadTensor<T>& v,
                                    std::span<const std::uint8_t> mask) {
  if (q.heads != k.heads || q.dim != k.dim || !k.same_shape(v) ||
      mask.size() != q.tokens * k.tokens) {
    throw Error("dim_mismatch", "kernel operands disagree in shape");
  }
  const T scale = T{1} / std::sqrt(static_cast<T>(q.dim));
  AttentionResult<T> result{HeadTensor<T>(q.tokens, q.heads, q.dim),
                            std::vector<T>(q.tokens * q.heads), {}};
  std::vector<T> logits(k.tokens);
  for (std::size_t i = 0; i < q.tokens; ++i) {
    const auto mask_row = mask.subspan(i * k.tokens, k.tokens);
    for (std::size_t h = 0; h < q.heads; ++h) {
      const auto qi = q.at(i, h);
      for (std::size_t j = 0; j < k.tokens; ++j) {
        logits[j] = mask_row[j] ? dot(qi, k.at(j, h)) * scale : T{0};
      }
      result.lse[i * q.heads + h] =
          softmax_inplace(std::span<T>(logits), mask_row);
      auto out = result.output.at(i, h);
      for (std::size_t j = 0; j < k.tokens; ++j) {
        if (!mask_row[j]) continue;
        const auto vj = v.at(j, h);
        for (std::size_t d = 0; d < out.size(); ++d) out[d] += logits[j] * vj[d];
      }
    }
  }
  return result;
}

template <class T>
std::vector<T> attention_logits(const AttentionCase<T>& c,
                                AttentionMode mode) {
  const RotatedViews<T> views = rotate_views(c);
  const std::size_t n = c.plan.size();
  const std::size_t heads = c.queries.heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(c.queries.dim));
  const Permission permitted(c.plan, c.causal, c.full_intra_image);
  std::vector<T> logits(heads * n * n, neg_inf<T>());
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (!permitted(i, j)) continue;
        const bool cross = c.plan.modality[i] != c.plan.modality[j];
        const HeadTensor<T>& q =
            (mode == AttentionMode::kDipe && cross) ? views.q_ape : views.q_spe;
        logits[(h * n + i) * n + j] = dot(q.at(i, h), views.k.at(j, h)) * scale;
      }
    }
  }
  return logits;
}

template <class T>
AttentionResult<T> attend_reference(const AttentionCase<T>& c,
                                    AttentionMode mode) {
  const std::size_t n = c.plan.size();
  const std::size_t heads = c.queries.heads;
  const std::vector<T> logits = attention_logits(c, mode);
  AttentionResult<T> result{HeadTensor<T>(n, heads, c.queries.dim),
                            std::vector<T>(n * heads), {}};
  std::vector<std::uint8_t> mask(n);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::span<const T> row(logits.data() + (h * n + i) * n, n);
      for (std::size_t j = 0; j < n; ++j) {
        mask[j] = row[j] != neg_inf<T>() ? 1 : 0;
      }
      const SoftmaxRow<T> sm = softmax_row_with_lse(row, mask);
      result.lse[i * heads + h] = sm.lse;
      auto out = result.output.at(i, h);
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask[j]) continue;
        const auto vj = c.values.at(j, h);
        for (std::size_t d = 0; d < out.size(); ++d) {
          out[d] += sm.weights[j] * vj[d];
        }
      }
    }
  }
  return result;
}

namespace {

template <class T>
AttentionResult<T> merge_results(const AttentionResult<T>& intra,
                                 const AttentionResult<T>& inter) {
  const HeadTensor<T>& shape = intra.output;
  AttentionResult<T> merged{HeadTensor<T>(shape.tokens, shape.heads, shape.dim),
                            std::vector<T>(shape.tokens * shape.heads),
                            std::vector<T>(shape.tokens * shape.heads)};
  for (std::size_t i = 0; i < shape.tokens; ++i) {
    for (std::size_t h = 0; h < shape.heads; ++h) {
      const std::size_t idx = i * shape.heads + h;
      const MergeWeight<T> w =
          merge_partials(intra.output.at(i, h), intra.lse[idx],
                         inter.output.at(i, h), inter.lse[idx],
                         merged.output.at(i, h));
      merged.alpha[idx] = w.alpha;
      merged.lse[idx] = w.lse;
    }
  }
  return merged;
}

template <class T>
HeadTensor<T> tail_rows(const HeadTensor<T>& t, std::size_t first) {
  if (first == 0) return t;
  HeadTensor<T> out(t.tokens - first, t.heads, t.dim);
  std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(first * t.heads * t.dim),
            t.data.end(), out.data.begin());
  return out;
}

}  // namespace

template <class T>
AttentionResult<T> attend_split(const AttentionCase<T>& c, AttentionMode mode,
                                std::size_t first_query) {
  const RotatedViews<T> views = rotate_views(c);
  const MaskPair masks =
      build_masks(c.plan, c.causal, c.full_intra_image, first_query);
  const AttentionResult<T> intra =
      masked_attention(tail_rows(views.q_spe, first_query), views.k, c.values,
                       std::span<const std::uint8_t>(masks.intra));
  const HeadTensor<T>& q_inter =
      mode == AttentionMode::kDipe ? views.q_ape : views.q_spe;
  const AttentionResult<T> inter =
      masked_attention(tail_rows(q_inter, first_query), views.k, c.values,
                       std::span<const std::uint8_t>(masks.inter));
  return merge_results(intra, inter);
}

template <class T>
KvCache<T>::KvCache(const RopeConfig& cfg, const ChunkPartition& part,
                    PositionPlan plan, HeadTensor<T> rotated_keys,
                    HeadTensor<T> values)
    : cfg_(cfg),
      part_(part),
      rotator_(cfg, part),
      plan_(std::move(plan)),
      keys_(std::move(rotated_keys)),
      values_(std::move(values)) {
  if (!keys_.same_shape(values_) || keys_.tokens != plan_.size() ||
      plan_.ape.size() != plan_.size() ||
      plan_.modality.size() != plan_.size()) {
    throw Error("plan_mismatch", "cache holds " + std::to_string(keys_.tokens) +
                                     " rows but the plan has " +
                                     std::to_string(plan_.size()) + " tokens");
  }
  if (keys_.dim != static_cast<std::size_t>(cfg.head_dim)) {
    throw Error("dim_mismatch", "cached head_dim differs from config");
  }
}

template <class T>
KvCache<T> KvCache<T>::prefill(const AttentionCase<T>& prefix,
                               AttentionResult<T>* prefix_result) {
  if (!prefix.causal) {
    throw Error("plan_mismatch", "incremental decoding requires causal masks");
  }
  RotatedViews<T> views = rotate_views(prefix);
  if (prefix_result != nullptr) *prefix_result = attend_split(prefix);
  return KvCache(prefix.cfg, prefix.partition, prefix.plan, std::move(views.k),
                 prefix.values);
}

template <class T>
DecodeOutput<T> KvCache<T>::decode_step(std::span<const T> new_q,
                                        std::span<const T> new_k,
                                        std::span<const T> new_v,
                                        Modality modality) {
  if (plan_.size() != keys_.tokens || plan_.empty()) {
    throw Error("plan_mismatch", "cache rows and plan length disagree");
  }
  const std::size_t heads = keys_.heads;
  const std::size_t dim = keys_.dim;
  if (new_q.size() != heads * dim || new_k.size() != heads * dim ||
      new_v.size() != heads * dim) {
    throw Error("dim_mismatch", "decode inputs must hold heads * head_dim values");
  }

  PositionPlan next_plan = extend_plan(plan_, 1, modality);
  const PositionTuple spe = next_plan.spe.back();
  const PositionTuple ape = next_plan.ape.back();

  HeadTensor<T> q_spe(1, heads, dim);
  HeadTensor<T> q_ape(1, heads, dim);
  std::vector<T> k_row(new_k.begin(), new_k.end());
  std::copy(new_q.begin(), new_q.end(), q_spe.data.begin());
  std::copy(new_q.begin(), new_q.end(), q_ape.data.begin());
  for (std::size_t h = 0; h < heads; ++h) {
    rotator_.apply(q_spe.at(0, h), spe);
    rotator_.apply(q_ape.at(0, h), ape);
    rotator_.apply(std::span<T>(k_row).subspan(h * dim, dim), spe);
  }
  keys_.append_token(k_row);
  values_.append_token(new_v);
  plan_ = std::move(next_plan);

  const std::size_t n = keys_.tokens;
  std::vector<std::uint8_t> intra(n, 0);
  std::vector<std::uint8_t> inter(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    (plan_.modality[j] == modality ? intra : inter)[j] = 1;
  }
  const AttentionResult<T> o_intra = masked_attention(
      q_spe, keys_, values_, std::span<const std::uint8_t>(intra));
  const AttentionResult<T> o_inter = masked_attention(
      q_ape, keys_, values_, std::span<const std::uint8_t>(inter));
  const AttentionResult<T> merged = merge_results(o_intra, o_inter);
  return {merged.output.data, merged.lse, merged.alpha};
}

#define DIPE_INSTANTIATE(T)                                                    \
  template struct HeadTensor<T>;                                               \
  template void validate<T>(const AttentionCase<T>&);                          \
  template SoftmaxRow<T> softmax_row_with_lse<T>(std::span<const T>,           \
                                                 std::span<const std::uint8_t>); \
  template MergeWeight<T> merge_partials<T>(std::span<const T>, T,             \
                                            std::span<const T>, T,             \
                                            std::span<T>);                     \
  template RotatedViews<T> rotate_views<T>(const AttentionCase<T>&);           \
  template AttentionResult<T> masked_attention<T>(                             \
      const HeadTensor<T>&, const HeadTensor<T>&, const HeadTensor<T>&,        \
      std::span<const std::uint8_t>);                                          \
  template AttentionResult<T> attend_reference<T>(const AttentionCase<T>&,     \
                                                  AttentionMode);              \
  template AttentionResult<T> attend_split<T>(const AttentionCase<T>&,         \
                                              AttentionMode, std::size_t);     \
  template std::vector<T> attention_logits<T>(const AttentionCase<T>&,         \
                                              AttentionMode);                  \
  template class KvCache<T>;

DIPE_INSTANTIATE(double)
DIPE_INSTANTIATE(float)

#undef DIPE_INSTANTIATE

}  // namespace dipe
