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

#include "dipe/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dipe/attention.hpp"
#include "dipe/case_io.hpp"
#include "dipe/probe.hpp"
#include "dipe/random.hpp"
#include "dipe/rope.hpp"

namespace dipe {

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ =
      std::chrono::steady_clock::now();
};

std::string fmt(const char* format, double a, double b = 0.0,
                double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, a, b, c);
  return buf;
}

CheckResult finish(int id, std::string name, bool ok, std::string detail,
                   const Stopwatch& clock, double budget_s) {
  CheckResult r{id, std::move(name), ok, std::move(detail), clock.seconds()};
  if (r.seconds > budget_s) {
    r.passed = false;
    r.detail += fmt(" [over the %.0f s budget]", budget_s);
  }
  return r;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isinf(a[i]) || std::isinf(b[i])) {
      if (a[i] != b[i]) return INFINITY;
      continue;
    }
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

// Question rows x visual columns of the scaled logits for one member of
// the distractor family [Image(4x4), Text(L + 8)].
std::vector<double> question_visual_logits(std::int64_t distractor_len,
                                           AttentionMode mode) {
  ProbeConfig pc;
  pc.image_grid = {4, 4};
  pc.question_len = 8;
  const SynthSequence seq = synth_sequence(pc, distractor_len);
  AttentionCase<double> c;
  c.plan = seq.plan;
  c.cfg = RopeConfig{pc.head_dim, pc.base, PairConvention::kAdjacentPairs};
  c.partition = ChunkPartition::equal_thirds(c.cfg);
  const std::size_t n = seq.tokens();
  const auto heads = static_cast<std::size_t>(pc.heads);
  const auto dim = static_cast<std::size_t>(pc.head_dim);
  c.queries = HeadTensor<double>(n, heads, dim);
  c.queries.data = seq.embeddings;
  c.keys = c.queries;
  c.values = c.queries;
  const std::vector<double> logits = attention_logits(c, mode);
  std::vector<double> out;
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = seq.question_begin; i < n; ++i) {
      for (std::size_t j = 0; j < seq.n_visual; ++j) {
        out.push_back(logits[(h * n + i) * n + j]);
      }
    }
  }
  return out;
}

template <class T>
bool bytes_equal(const HeadTensor<T>& a, const HeadTensor<T>& b,
                 std::size_t tokens) {
  const std::size_t count = tokens * a.heads * a.dim;
  return std::memcmp(a.data.data(), b.data.data(), count * sizeof(T)) == 0;
}

}  // namespace

const WorkedPlan& worked_example_plan() {
  static const WorkedPlan plan{
      {{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}, {3, 3, 4}, {3, 4, 3},
       {3, 4, 4}, {5, 5, 5}, {6, 6, 6}},
      {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {3, 3, 3}, {3, 3, 3}, {3, 3, 3},
       {3, 3, 3}, {5, 5, 5}, {5, 5, 5}}};
  return plan;
}

CheckResult check_rotation_identity() {
  const Stopwatch clock;
  Rng rng(101);
  double worst = 0.0;
  int trials = 0;
  for (int dim : {2, 4, 48, 64}) {
    const RopeConfig cfg{dim, 10000.0, PairConvention::kAdjacentPairs};
    for (int t = 0; t < 300; ++t, ++trials) {
      std::vector<double> q(dim);
      std::vector<double> k(dim);
      for (double& x : q) x = rng.gaussian();
      for (double& x : k) x = rng.gaussian();
      const auto m = static_cast<double>(rng.below(32768));
      const auto n = static_cast<double>(rng.below(32768));
      const double absolute = dot(rotate(q, m, cfg), rotate(k, n, cfg));
      const double relative = dot(q, rotate(k, n - m, cfg));
      worst = std::max(worst, std::abs(absolute - relative));
    }
  }
  return finish(1, "rotation identity", worst <= 1e-9,
                fmt("%.0f trials, max |dot(Rm q, Rn k) - dot(q, R(n-m) k)| = "
                    "%.3g (tol 1e-9)",
                    trials, worst),
                clock, 1.0);
}

CheckResult check_decay_bound() {
  const Stopwatch clock;
  const RopeConfig cfg{64, 10000.0, PairConvention::kAdjacentPairs};
  const double at_zero = decay_bound(0, cfg);
  bool ok = std::abs(at_zero - 528.0) <= 1e-9 * 528.0;
  std::string detail = fmt("bound(0) = %.12g", at_zero);
  for (std::int64_t dist : {256, 1024, 4096, 16384}) {
    const double b = decay_bound(dist, cfg);
    ok = ok && b < at_zero;
    detail += fmt(", bound(%.0f) = %.6g", static_cast<double>(dist), b);
  }
  return finish(2, "decay bound", ok, detail, clock, 1.0);
}

CheckResult check_merge_exactness() {
  const Stopwatch clock;
  double worst_out = 0.0;
  double worst_lse = 0.0;
  std::size_t empty_rows = 0;
  for (int t = 0; t < 50; ++t) {
    RandomCaseSpec spec;
    spec.seed = 5000 + static_cast<std::uint64_t>(t);
    spec.segments = t % 10 == 9
                        ? std::vector<ModalitySegment>{ModalitySegment::text(64)}
                        : random_segments(spec.seed, t % 5 == 0 ? 256 : 96);
    spec.heads = 4;
    spec.cfg = RopeConfig{48, 10000.0, PairConvention::kAdjacentPairs};
    spec.full_intra_image = t % 7 == 3;
    const AttentionCase<double> c = make_random_case(spec);
    const AttentionResult<double> split = attend_split(c);
    const AttentionResult<double> ref = attend_reference(c, AttentionMode::kDipe);
    worst_out = std::max(worst_out, max_abs_diff(split.output.data, ref.output.data));
    worst_lse = std::max(worst_lse, max_abs_diff(split.lse, ref.lse));
    for (double a : split.alpha) {
      if (a == 1.0 || a == 0.0) ++empty_rows;
    }
  }
  const bool ok = worst_out <= 1e-9 && worst_lse <= 1e-9 && empty_rows > 0;
  return finish(3, "merge exactness", ok,
                fmt("50 cases, max |split - reference| output %.3g, lse %.3g "
                    "(tol 1e-9); %.0f single-kernel rows",
                    worst_out, worst_lse, static_cast<double>(empty_rows)),
                clock, 30.0);
}

CheckResult check_intra_parity() {
  const Stopwatch clock;
  std::size_t compared = 0;
  std::size_t mismatched = 0;
  for (int t = 0; t < 20; ++t) {
    RandomCaseSpec spec;
    spec.seed = 7000 + static_cast<std::uint64_t>(t);
    spec.segments = random_segments(spec.seed, 128);
    spec.heads = 2;
    spec.cfg = RopeConfig{48, 10000.0, PairConvention::kAdjacentPairs};
    const AttentionCase<double> c = make_random_case(spec);
    const std::vector<double> dipe = attention_logits(c, AttentionMode::kDipe);
    const std::vector<double> base =
        attention_logits(c, AttentionMode::kBaseline);
    const std::size_t n = c.plan.size();
    for (std::size_t h = 0; h < c.queries.heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          if (c.plan.modality[i] != c.plan.modality[j]) continue;
          const std::size_t idx = (h * n + i) * n + j;
          ++compared;
          if (std::memcmp(&dipe[idx], &base[idx], sizeof(double)) != 0) {
            ++mismatched;
          }
        }
      }
    }
  }
  return finish(4, "intra-modal parity", mismatched == 0 && compared > 0,
                fmt("%.0f same-modality logits compared, %.0f not bitwise equal",
                    static_cast<double>(compared),
                    static_cast<double>(mismatched)),
                clock, 30.0);
}

CheckResult check_inter_invariance() {
  const Stopwatch clock;
  const std::vector<double> dipe0 = question_visual_logits(0, AttentionMode::kDipe);
  double dipe_worst = 0.0;
  for (std::int64_t len : {64, 256, 1024}) {
    dipe_worst = std::max(
        dipe_worst,
        max_abs_diff(dipe0, question_visual_logits(len, AttentionMode::kDipe)));
  }
  const double mrope_shift =
      max_abs_diff(question_visual_logits(0, AttentionMode::kBaseline),
                   question_visual_logits(1024, AttentionMode::kBaseline));
  const bool ok = dipe_worst <= 1e-12 && mrope_shift > 1e-3;
  return finish(5, "inter-modal invariance", ok,
                fmt("dipe max shift over L = %.3g (tol 1e-12); mrope shift "
                    "L=0 vs 1024 = %.4g (must exceed 1e-3)",
                    dipe_worst, mrope_shift),
                clock, 10.0);
}

CheckResult check_incremental_decode() {
  const Stopwatch clock;
  constexpr std::size_t kPrefix = 8;
  constexpr std::size_t kSteps = 32;
  RandomCaseSpec spec;
  spec.seed = 9001;
  spec.segments = {ModalitySegment::image(2, 2),
                   ModalitySegment::text(4 + static_cast<std::int64_t>(kSteps))};
  spec.heads = 4;
  spec.cfg = RopeConfig{48, 10000.0, PairConvention::kAdjacentPairs};
  const AttentionCase<double> full = make_random_case(spec);
  const AttentionResult<double> batch = attend_split(full);

  RandomCaseSpec prefix_spec = spec;
  prefix_spec.segments = {ModalitySegment::image(2, 2), ModalitySegment::text(4)};
  AttentionCase<double> prefix = make_random_case(prefix_spec);
  const std::size_t row = full.queries.heads * full.queries.dim;
  for (HeadTensor<double>* t : {&prefix.queries, &prefix.keys, &prefix.values}) {
    const HeadTensor<double>& src = t == &prefix.queries ? full.queries
                                    : t == &prefix.keys  ? full.keys
                                                         : full.values;
    std::copy(src.data.begin(), src.data.begin() + kPrefix * row, t->data.begin());
  }

  KvCache<double> cache = KvCache<double>::prefill(prefix);
  double worst = 0.0;
  bool untouched = true;
  for (std::size_t s = 0; s < kSteps; ++s) {
    const std::size_t t = kPrefix + s;
    const HeadTensor<double> before = cache.rotated_keys();
    const HeadTensor<double> values_before = cache.values();
    const DecodeOutput<double> out =
        cache.decode_step(full.queries.row(t), full.keys.row(t),
                          full.values.row(t), Modality::kText);
    untouched = untouched && bytes_equal(before, cache.rotated_keys(), t) &&
                bytes_equal(values_before, cache.values(), t);
    const auto expected = batch.output.row(t);
    for (std::size_t d = 0; d < row; ++d) {
      worst = std::max(worst, std::abs(out.output[d] - expected[d]));
    }
    for (std::size_t h = 0; h < full.queries.heads; ++h) {
      worst = std::max(worst, std::abs(out.lse[h] - batch.lse_at(t, h)));
    }
  }
  const bool same_plan = cache.plan() == full.plan;
  const bool ok = worst <= 1e-9 && untouched && same_plan;
  return finish(6, "incremental = batch", ok,
                fmt("32 steps, max |decode - batch| %.3g (tol 1e-9); earlier "
                    "cache rows untouched: ",
                    worst) +
                    (untouched ? "yes" : "NO") +
                    (same_plan ? "" : "; decoded plan differs from batch plan"),
                clock, 30.0);
}

CheckResult check_mask_partition() {
  const Stopwatch clock;
  int failures = 0;
  for (int t = 0; t < 100; ++t) {
    const auto seed = 11000 + static_cast<std::uint64_t>(t);
    const PositionPlan plan = build_plan(random_segments(seed, 80));
    const bool causal = t % 4 != 0;
    const bool full_image = t % 3 == 0;
    const MaskPair masks = build_masks(plan, causal, full_image);
    bool disjoint = true;
    for (std::size_t i = 0; i < masks.intra.size(); ++i) {
      disjoint = disjoint && !(masks.intra[i] && masks.inter[i]);
    }
    const bool sums = masks.intra_count() + masks.inter_count() ==
                      allowed_count(plan, causal, full_image);
    if (!disjoint || !sums) ++failures;
  }
  return finish(7, "mask partition", failures == 0,
                fmt("100 random plans, %.0f violate |intra|+|inter| == "
                    "|allowed| or disjointness",
                    failures),
                clock, 30.0);
}

CheckResult check_probe(const VerifyOptions& options) {
  const Stopwatch clock;
  ProbeConfig cfg;
  cfg.threads = 1;
  const ProbeReport report = run_probe(cfg);
  const double probe_seconds = clock.seconds();
  const std::int64_t longest = cfg.distractor_lengths.back();
  const std::int64_t shortest = cfg.distractor_lengths.front();

  bool decay = true;
  bool constant = true;
  bool restored = true;
  double dipe_spread = 0.0;
  for (int l = 0; l < cfg.layers; ++l) {
    const double m0 = report.at(ProbeMode::kMrope, shortest, l).mean_inter_logit;
    const double m_long = report.at(ProbeMode::kMrope, longest, l).mean_inter_logit;
    decay = decay && std::abs(m_long) < std::abs(m0);
    const double d0 = report.at(ProbeMode::kDipe, shortest, l).mean_inter_logit;
    for (std::int64_t len : cfg.distractor_lengths) {
      dipe_spread = std::max(
          dipe_spread,
          std::abs(report.at(ProbeMode::kDipe, len, l).mean_inter_logit - d0));
    }
    restored = restored && report.at(ProbeMode::kDipe, longest, l).visual_mass >=
                               report.at(ProbeMode::kMrope, longest, l).visual_mass;
  }
  constant = dipe_spread <= 1e-9;

  const std::string csv = report_to_csv(report);
  bool golden_ok = true;
  std::string golden_note = "no golden file given";
  if (options.golden_probe_csv) {
    std::ifstream in(*options.golden_probe_csv, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    golden_ok = in.is_open() && buf.str() == csv;
    golden_note = golden_ok ? "golden CSV byte-identical"
                            : "golden CSV differs or is unreadable";
  }
  const bool rerun_ok = report_to_csv(run_probe(cfg)) == csv;

  const bool ok = decay && constant && restored && golden_ok && rerun_ok &&
                  probe_seconds < 60.0;
  std::string detail =
      std::string("(a) mrope |logit| decays: ") + (decay ? "yes" : "NO") +
      fmt("; (b) dipe logit spread %.3g (tol 1e-9)", dipe_spread) +
      "; (c) dipe visual mass >= mrope at max L: " + (restored ? "yes" : "NO") +
      "; " + golden_note + "; rerun identical: " + (rerun_ok ? "yes" : "NO") +
      fmt("; one run %.2f s (limit 60 s)", probe_seconds);
  // Two full runs happen here, so the wall-clock budget is doubled.
  return finish(8, "probe qualitative reproduction", ok, detail, clock, 120.0);
}

CheckResult check_plan_worked_example() {
  const Stopwatch clock;
  const PositionPlan plan =
      plan_from_json(plan_to_json(build_plan(parse_segment_spec("txt:3,img:2x2,txt:2"))));
  const WorkedPlan& expected = worked_example_plan();
  bool ok = plan.size() == expected.spe.size();
  for (std::size_t i = 0; ok && i < plan.size(); ++i) {
    const PositionTuple& s = plan.spe[i];
    const PositionTuple& a = plan.ape[i];
    ok = std::array<std::int64_t, 3>{s.t, s.h, s.w} == expected.spe[i] &&
         std::array<std::int64_t, 3>{a.t, a.h, a.w} == expected.ape[i];
  }
  return finish(9, "plan worked example", ok,
                ok ? "txt:3,img:2x2,txt:2 matches the 9-token SPE/APE plan"
                   : "plan differs from the hand-derived SPE/APE tuples",
                clock, 1.0);
}

std::vector<CheckResult> run_invariant_suite(
    const VerifyOptions& options,
    const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> results;
  auto record = [&](CheckResult r) {
    if (on_result) on_result(r);
    results.push_back(std::move(r));
  };
  record(check_rotation_identity());
  record(check_decay_bound());
  record(check_merge_exactness());
  record(check_intra_parity());
  record(check_inter_invariance());
  record(check_incremental_decode());
  record(check_mask_partition());
  record(check_probe(options));
  record(check_plan_worked_example());
  return results;
}

std::string format_result(const CheckResult& r) {
  char head[128];
  std::snprintf(head, sizeof(head), "[%s] %d %s (%.2f s): ",
                r.passed ? "PASS" : "FAIL", r.id, r.name.c_str(), r.seconds);
  return head + r.detail;
}

}  // namespace dipe
