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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "dipe/case_io.hpp"
#include "dipe/error.hpp"
#include "test_util.hpp"

namespace dipe {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

RandomCaseSpec spec_for(std::uint64_t seed, std::vector<ModalitySegment> segs,
                        std::size_t heads = 2, int dim = 12) {
  RandomCaseSpec spec;
  spec.seed = seed;
  spec.segments = std::move(segs);
  spec.heads = heads;
  spec.cfg = RopeConfig{dim, 10000.0, PairConvention::kAdjacentPairs};
  return spec;
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

// Straightforward per-pair logit, written against mrope_rotate only.
double pair_logit(const AttentionCase<double>& c, std::size_t i, std::size_t j,
                  std::size_t h, AttentionMode mode) {
  const bool same = c.plan.modality[i] == c.plan.modality[j];
  const PositionTuple& pq =
      (mode == AttentionMode::kDipe && !same) ? c.plan.ape[i] : c.plan.spe[i];
  const auto q = mrope_rotate(to_vec(c.queries.at(i, h)), pq, c.cfg, c.partition);
  const auto k = mrope_rotate(to_vec(c.keys.at(j, h)), c.plan.spe[j], c.cfg,
                              c.partition);
  return testing::dot(q, k) / std::sqrt(static_cast<double>(c.cfg.head_dim));
}

TEST(Masks, ThreeTokenExample) {
  const PositionPlan plan = build_plan(std::vector{
      ModalitySegment::text(1), ModalitySegment::image(1, 1), ModalitySegment::text(1)});
  const MaskPair m = build_masks(plan, true);
  std::set<std::pair<int, int>> intra, inter;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (m.intra_at(i, j)) intra.insert({i, j});
      if (m.inter_at(i, j)) inter.insert({i, j});
    }
  }
  EXPECT_EQ(intra, (std::set<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 0}, {2, 2}}));
  EXPECT_EQ(inter, (std::set<std::pair<int, int>>{{1, 0}, {2, 1}}));
}

TEST(Masks, SingleModalityHasNoInter) {
  const PositionPlan plan = build_plan(std::vector{ModalitySegment::text(7)});
  for (bool causal : {true, false}) {
    const MaskPair m = build_masks(plan, causal);
    EXPECT_EQ(m.inter_count(), 0u);
    EXPECT_EQ(m.intra_count(), allowed_count(plan, causal));
  }
}

TEST(Masks, PartitionAllowedPairs) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const PositionPlan plan = build_plan(random_segments(seed, 40));
    for (bool causal : {true, false}) {
      for (bool full : {false, true}) {
        const MaskPair m = build_masks(plan, causal, full);
        for (std::size_t i = 0; i < plan.size(); ++i) {
          for (std::size_t j = 0; j < plan.size(); ++j) {
            const bool same_segment = plan.segment_of(i) == plan.segment_of(j);
            const bool allowed = !causal || j <= i ||
                                 (full && same_segment &&
                                  plan.modality[i] == Modality::kVisual);
            const bool same = plan.modality[i] == plan.modality[j];
            EXPECT_EQ(m.intra_at(i, j), allowed && same);
            EXPECT_EQ(m.inter_at(i, j), allowed && !same);
          }
        }
        EXPECT_EQ(m.intra_count() + m.inter_count(), allowed_count(plan, causal, full));
      }
    }
  }
}

TEST(Masks, FirstQueryRestrictsRows) {
  const PositionPlan plan = build_plan(random_segments(3, 30));
  const MaskPair all = build_masks(plan, true);
  const MaskPair tail = build_masks(plan, true, false, 10);
  ASSERT_EQ(tail.queries, plan.size() - 10);
  for (std::size_t i = 0; i < tail.queries; ++i) {
    for (std::size_t j = 0; j < plan.size(); ++j) {
      EXPECT_EQ(tail.intra_at(i, j), all.intra_at(i + 10, j));
      EXPECT_EQ(tail.inter_at(i, j), all.inter_at(i + 10, j));
    }
  }
}

TEST(Softmax, Examples) {
  const std::vector<std::uint8_t> both = {1, 1};
  const std::vector<double> zeros = {0.0, 0.0};
  auto r = softmax_row_with_lse<double>(zeros, both);
  EXPECT_DOUBLE_EQ(r.weights[0], 0.5);
  EXPECT_DOUBLE_EQ(r.weights[1], 0.5);
  EXPECT_NEAR(r.lse, std::log(2.0), 1e-15);

  const std::vector<double> big = {1000.0, 0.0};
  r = softmax_row_with_lse<double>(big, both);
  EXPECT_EQ(r.weights[0], 1.0);
  EXPECT_NEAR(r.weights[1], 0.0, 1e-300);
  EXPECT_NEAR(r.lse, 1000.0, 1e-12);
  EXPECT_TRUE(std::isfinite(r.lse));

  const std::vector<std::uint8_t> none = {0, 0};
  r = softmax_row_with_lse<double>(big, none);
  EXPECT_EQ(r.lse, -kInf);
  EXPECT_EQ(r.weights, (std::vector<double>{0.0, 0.0}));

  const std::vector<std::uint8_t> second = {0, 1};
  r = softmax_row_with_lse<double>(big, second);
  EXPECT_EQ(r.weights, (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(r.lse, 0.0);
}

TEST(Merge, EqualStatistics) {
  const std::vector<double> o1 = {1.0, 0.0}, o2 = {0.0, 1.0};
  std::vector<double> out(2);
  const auto w = merge_partials<double>(o1, 0.7, o2, 0.7, out);
  EXPECT_EQ(out, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(w.alpha, 0.5);
  EXPECT_NEAR(w.lse, 0.7 + std::log(2.0), 1e-15);
}

TEST(Merge, EmptyInterSelectsIntraExactly) {
  const std::vector<double> o1 = {0.3, -1.7, 2.5}, o2 = {9.0, 9.0, 9.0};
  std::vector<double> out(3);
  auto w = merge_partials<double>(o1, 1.25, o2, -kInf, out);
  EXPECT_EQ(out, o1);
  EXPECT_EQ(w.alpha, 1.0);
  EXPECT_EQ(w.lse, 1.25);
  w = merge_partials<double>(o2, -kInf, o1, 1.25, out);
  EXPECT_EQ(out, o1);
  EXPECT_EQ(w.alpha, 0.0);
}

TEST(Merge, BothEmpty) {
  const std::vector<double> o1 = {1.0}, o2 = {2.0};
  std::vector<double> out = {5.0};
  const auto w = merge_partials<double>(o1, -kInf, o2, -kInf, out);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(w.lse, -kInf);
}

TEST(Merge, ThreeToOne) {
  const std::vector<double> o1 = {1.0, 0.0}, o2 = {0.0, 1.0};
  std::vector<double> out(2);
  const auto w = merge_partials<double>(o1, std::log(3.0), o2, 0.0, out);
  EXPECT_NEAR(out[0], 0.75, 1e-15);
  EXPECT_NEAR(out[1], 0.25, 1e-15);
  EXPECT_NEAR(w.lse, std::log(4.0), 1e-15);
}

TEST(Merge, AlphaMatchesExponentRatio) {
  Rng rng(31);
  const std::vector<double> o1 = {1.0}, o2 = {0.0};
  std::vector<double> out(1);
  for (int t = 0; t < 1000; ++t) {
    const double l1 = 20.0 * (rng.uniform() - 0.5);
    const double l2 = 20.0 * (rng.uniform() - 0.5);
    const auto w = merge_partials<double>(o1, l1, o2, l2, out);
    const double e1 = std::exp(l1), e2 = std::exp(l2);
    EXPECT_NEAR(w.alpha, e1 / (e1 + e2), 1e-12);
    EXPECT_NEAR(w.lse, std::log(e1 + e2), 1e-12);
  }
}

TEST(Reference, MatchesPairwiseOracle) {
  const AttentionCase<double> c = make_random_case(
      spec_for(41, {ModalitySegment::text(3), ModalitySegment::image(2, 3),
                    ModalitySegment::text(4)}));
  for (AttentionMode mode : {AttentionMode::kBaseline, AttentionMode::kDipe}) {
    const AttentionResult<double> r = attend_reference(c, mode);
    const std::vector<double> logits = attention_logits(c, mode);
    const std::size_t n = c.plan.size();
    for (std::size_t h = 0; h < c.queries.heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> l(i + 1);
        double mx = -kInf;
        for (std::size_t j = 0; j <= i; ++j) {
          l[j] = pair_logit(c, i, j, h, mode);
          EXPECT_NEAR(logits[(h * n + i) * n + j], l[j], 1e-12);
          mx = std::max(mx, l[j]);
        }
        for (std::size_t j = i + 1; j < n; ++j) {
          EXPECT_EQ(logits[(h * n + i) * n + j], -kInf);
        }
        double z = 0.0;
        std::vector<double> o(c.values.dim, 0.0);
        for (std::size_t j = 0; j <= i; ++j) {
          const double p = std::exp(l[j] - mx);
          z += p;
          for (std::size_t d = 0; d < o.size(); ++d) o[d] += p * c.values.at(j, h)[d];
        }
        EXPECT_NEAR(r.lse_at(i, h), mx + std::log(z), 1e-12);
        for (std::size_t d = 0; d < o.size(); ++d) {
          EXPECT_NEAR(r.output.at(i, h)[d], o[d] / z, 1e-12);
        }
      }
    }
  }
}

TEST(Reference, SingleToken) {
  const AttentionCase<double> c = make_random_case(spec_for(42, {ModalitySegment::text(1)}, 1));
  const AttentionResult<double> r = attend_reference(c, AttentionMode::kDipe);
  EXPECT_EQ(to_vec(r.output.at(0, 0)), to_vec(c.values.at(0, 0)));
  EXPECT_NEAR(r.lse_at(0, 0),
              testing::dot(to_vec(c.queries.at(0, 0)), to_vec(c.keys.at(0, 0))) /
                  std::sqrt(12.0),
              1e-12);
}

TEST(Reference, TextToImageLogitsUseAnchorOffset) {
  const AttentionCase<double> c = make_random_case(
      spec_for(43, {ModalitySegment::text(2), ModalitySegment::image(2, 2)}, 1));
  ASSERT_EQ(c.plan.size(), 6u);
  // Make the text queries attend forward so text->image pairs exist.
  AttentionCase<double> bidir = c;
  bidir.causal = false;
  const std::vector<double> logits = attention_logits(bidir, AttentionMode::kDipe);
  int checked = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 2; j < 6; ++j) {
      const PositionTuple& a = c.plan.ape[i];
      const PositionTuple& s = c.plan.spe[j];
      const std::array<double, 3> delta = {double(s.t - a.t), double(s.h - a.h),
                                           double(s.w - a.w)};
      const auto k_rel = mrope_rotate(c.keys.at(j, 0), delta, c.cfg, c.partition);
      const double expected =
          testing::dot(to_vec(c.queries.at(i, 0)), {k_rel.begin(), k_rel.end()}) /
          std::sqrt(12.0);
      EXPECT_NEAR(logits[i * 6 + j], expected, 1e-9);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 8);
}

TEST(Split, SingleModalityIsBitwiseBaseline) {
  const AttentionCase<double> c =
      make_random_case(spec_for(44, {ModalitySegment::text(20)}, 3, 48));
  const auto dipe = attend_split(c, AttentionMode::kDipe);
  const auto base = attend_split(c, AttentionMode::kBaseline);
  EXPECT_EQ(0, std::memcmp(dipe.output.data.data(), base.output.data.data(),
                           dipe.output.data.size() * sizeof(double)));
  EXPECT_EQ(dipe.lse, base.lse);
  const auto ref_d = attend_reference(c, AttentionMode::kDipe);
  const auto ref_b = attend_reference(c, AttentionMode::kBaseline);
  EXPECT_EQ(ref_d.output.data, ref_b.output.data);
  for (double a : dipe.alpha) EXPECT_EQ(a, 1.0);
}

TEST(Split, MatchesReferenceDouble) {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    RandomCaseSpec spec = spec_for(seed, random_segments(seed, 64), 4, 48);
    spec.causal = seed % 3 != 0;
    spec.full_intra_image = seed % 5 == 0;
    const AttentionCase<double> c = make_random_case(spec);
    for (AttentionMode mode : {AttentionMode::kBaseline, AttentionMode::kDipe}) {
      const auto split = attend_split(c, mode);
      const auto ref = attend_reference(c, mode);
      for (std::size_t i = 0; i < split.output.data.size(); ++i) {
        ASSERT_NEAR(split.output.data[i], ref.output.data[i], 1e-9) << seed;
      }
      for (std::size_t i = 0; i < split.lse.size(); ++i) {
        ASSERT_NEAR(split.lse[i], ref.lse[i], 1e-9) << seed;
      }
    }
  }
}

TEST(Split, MatchesReferenceFloat) {
  for (std::uint64_t seed = 200; seed < 210; ++seed) {
    const AttentionCase<float> c =
        cast_case<float>(make_random_case(spec_for(seed, random_segments(seed, 96), 4, 48)));
    const auto split = attend_split(c);
    const auto ref = attend_reference(c, AttentionMode::kDipe);
    for (std::size_t i = 0; i < split.output.data.size(); ++i) {
      ASSERT_NEAR(split.output.data[i], ref.output.data[i], 1e-4);
    }
    for (std::size_t i = 0; i < split.lse.size(); ++i) {
      ASSERT_NEAR(split.lse[i], ref.lse[i], 1e-4);
    }
  }
}

TEST(Split, FirstQueryReturnsTailRows) {
  const AttentionCase<double> c = make_random_case(spec_for(45, random_segments(45, 50), 2, 48));
  const auto full = attend_split(c);
  const std::size_t first = c.plan.size() / 2;
  const auto tail = attend_split(c, AttentionMode::kDipe, first);
  ASSERT_EQ(tail.output.tokens, c.plan.size() - first);
  for (std::size_t i = 0; i < tail.output.tokens; ++i) {
    for (std::size_t h = 0; h < 2; ++h) {
      EXPECT_EQ(to_vec(tail.output.at(i, h)), to_vec(full.output.at(first + i, h)));
      EXPECT_EQ(tail.lse_at(i, h), full.lse_at(first + i, h));
    }
  }
}

TEST(Split, IntraLogitsEqualBaseline) {
  const AttentionCase<double> c = make_random_case(spec_for(46, random_segments(46, 60), 2, 48));
  const auto d = attention_logits(c, AttentionMode::kDipe);
  const auto b = attention_logits(c, AttentionMode::kBaseline);
  const std::size_t n = c.plan.size();
  std::size_t differing_inter = 0;
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        const std::size_t at = (h * n + i) * n + j;
        if (c.plan.modality[i] == c.plan.modality[j]) {
          EXPECT_EQ(d[at], b[at]);
        } else if (d[at] != b[at]) {
          ++differing_inter;
        }
      }
    }
  }
  EXPECT_GT(differing_inter, 0u);
}

TEST(Validate, RejectsShapeMismatch) {
  AttentionCase<double> c = make_random_case(spec_for(47, {ModalitySegment::text(4)}));
  c.plan = build_plan(std::vector{ModalitySegment::text(5)});
  try {
    attend_split(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "dim_mismatch");
  }
  AttentionCase<double> d = make_random_case(spec_for(47, {ModalitySegment::text(4)}));
  d.cfg.head_dim = 6;
  d.partition = ChunkPartition{1, 1, 1};
  EXPECT_THROW(attend_reference(d, AttentionMode::kDipe), Error);
}

AttentionCase<double> prefix_of(const AttentionCase<double>& c, std::size_t n) {
  AttentionCase<double> p = c;
  for (HeadTensor<double>* t : {&p.queries, &p.keys, &p.values}) {
    t->tokens = n;
    t->data.resize(n * t->heads * t->dim);
  }
  p.plan.spe.resize(n);
  p.plan.ape.resize(n);
  p.plan.modality.resize(n);
  std::vector<SegmentSpan> segs;
  for (SegmentSpan s : c.plan.segments) {
    if (s.begin >= n) break;
    s.end = std::min(s.end, n);
    segs.push_back(s);
  }
  p.plan.segments = segs;
  return p;
}

TEST(Decode, MatchesFullRecompute) {
  const std::size_t steps = 12;
  const std::vector<ModalitySegment> segs = {
      ModalitySegment::text(5), ModalitySegment::image(3, 3),
      ModalitySegment::text(4 + static_cast<std::int64_t>(steps))};
  const AttentionCase<double> full = make_random_case(spec_for(51, segs, 3, 48));
  const std::size_t n = full.plan.size();
  const std::size_t n0 = n - steps;
  const auto batch = attend_split(full);

  AttentionResult<double> pre;
  KvCache<double> cache = KvCache<double>::prefill(prefix_of(full, n0), &pre);
  for (std::size_t i = 0; i < n0; ++i) {
    EXPECT_EQ(to_vec(pre.output.at(i, 1)), to_vec(batch.output.at(i, 1)));
  }
  for (std::size_t t = n0; t < n; ++t) {
    const std::vector<double> before(cache.rotated_keys().data);
    const auto out = cache.decode_step(full.queries.row(t), full.keys.row(t),
                                       full.values.row(t), Modality::kText);
    ASSERT_EQ(cache.tokens(), t + 1);
    EXPECT_EQ(0, std::memcmp(before.data(), cache.rotated_keys().data.data(),
                             before.size() * sizeof(double)));
    for (std::size_t h = 0; h < 3; ++h) {
      for (std::size_t d = 0; d < 48; ++d) {
        EXPECT_NEAR(out.output[h * 48 + d], batch.output.at(t, h)[d], 1e-9);
      }
      EXPECT_NEAR(out.lse[h], batch.lse_at(t, h), 1e-9);
    }
  }
  EXPECT_EQ(cache.plan(), full.plan);
}

TEST(Decode, FirstTextTokenAfterImageOnlyPrefix) {
  const std::vector<ModalitySegment> segs = {ModalitySegment::image(2, 2),
                                             ModalitySegment::text(1)};
  const AttentionCase<double> full = make_random_case(spec_for(52, segs, 2, 12));
  KvCache<double> cache = KvCache<double>::prefill(prefix_of(full, 4));
  const auto out = cache.decode_step(full.queries.row(4), full.keys.row(4),
                                     full.values.row(4), Modality::kText);
  // The only same-modality key is the token itself; every image key goes
  // through the inter kernel.
  const MaskPair m = build_masks(cache.plan(), true, false, 4);
  EXPECT_EQ(m.intra_count(), 1u);
  EXPECT_TRUE(m.intra_at(0, 4));
  EXPECT_EQ(m.inter_count(), 4u);
  const auto batch = attend_split(full);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_GT(out.alpha[h], 0.0);
    EXPECT_LT(out.alpha[h], 1.0);
    EXPECT_NEAR(out.alpha[h], batch.alpha_at(4, h), 1e-12);
  }
}

TEST(Decode, RejectsInconsistentCache) {
  const AttentionCase<double> c = make_random_case(spec_for(53, {ModalitySegment::text(4)}));
  HeadTensor<double> short_keys(3, c.keys.heads, c.keys.dim);
  try {
    KvCache<double>(c.cfg, c.partition, c.plan, short_keys, c.values);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "plan_mismatch");
  }
  AttentionCase<double> nc = c;
  nc.causal = false;
  EXPECT_THROW(KvCache<double>::prefill(nc), Error);
}

}  // namespace
}  // namespace dipe
