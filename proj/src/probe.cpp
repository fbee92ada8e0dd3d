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

#include "dipe/probe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <thread>

#include "dipe/attention.hpp"
#include "dipe/error.hpp"
#include "dipe/random.hpp"
#include "json.hpp"

namespace dipe {

namespace {

// Independent RNG streams of one probe seed.
constexpr std::uint64_t kVisualStream = 1;
constexpr std::uint64_t kQuestionStream = 2;
constexpr std::uint64_t kDistractorStream = 3;
constexpr std::uint64_t kWeightStream = 1000;

struct LayerWeights {
  std::vector<double> qk;  // hidden x hidden, shared by queries and keys
  std::vector<double> v;   // hidden x hidden
};

std::vector<LayerWeights> make_weights(const ProbeConfig& cfg) {
  const std::size_t hidden = static_cast<std::size_t>(cfg.heads * cfg.head_dim);
  const double qk_scale = cfg.qk_gain / std::sqrt(static_cast<double>(hidden));
  const double v_scale = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::vector<LayerWeights> layers(static_cast<std::size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    Rng rng(cfg.seed, kWeightStream + static_cast<std::uint64_t>(l));
    LayerWeights& w = layers[l];
    w.qk.resize(hidden * hidden);
    w.v.resize(hidden * hidden);
    for (double& x : w.qk) x = rng.gaussian() * qk_scale;
    for (double& x : w.v) x = rng.gaussian() * v_scale;
  }
  return layers;
}

// rows x hidden times hidden x hidden, accumulated in T.
template <class T>
HeadTensor<T> project(const std::vector<T>& states, std::size_t rows,
                      const std::vector<double>& weight, const ProbeConfig& cfg) {
  const std::size_t hidden = static_cast<std::size_t>(cfg.heads * cfg.head_dim);
  std::vector<T> w(weight.begin(), weight.end());
  HeadTensor<T> out(rows, static_cast<std::size_t>(cfg.heads),
                    static_cast<std::size_t>(cfg.head_dim));
  for (std::size_t i = 0; i < rows; ++i) {
    T* dst = out.data.data() + i * hidden;
    const T* src = states.data() + i * hidden;
    for (std::size_t a = 0; a < hidden; ++a) {
      const T x = src[a];
      const T* wrow = w.data() + a * hidden;
      for (std::size_t b = 0; b < hidden; ++b) dst[b] += x * wrow[b];
    }
  }
  return out;
}

template <class T>
double content_inter_logit(const SynthSequence& seq, const LayerWeights& w,
                           ProbeMode mode, const RopeConfig& rope,
                           const ChunkPartition& part, const ProbeConfig& cfg) {
  const std::size_t hidden = seq.hidden;
  const std::size_t n_question = seq.tokens() - seq.question_begin;
  std::vector<T> visual_rows(seq.embeddings.begin(),
                             seq.embeddings.begin() + seq.n_visual * hidden);
  std::vector<T> question_rows(
      seq.embeddings.begin() + seq.question_begin * hidden,
      seq.embeddings.end());
  HeadTensor<T> k = project(visual_rows, seq.n_visual, w.qk, cfg);
  HeadTensor<T> q = project(question_rows, n_question, w.qk, cfg);
  const MropeRotator rotator(rope, part);
  for (std::size_t j = 0; j < seq.n_visual; ++j) {
    for (std::size_t h = 0; h < k.heads; ++h) {
      rotator.apply(k.at(j, h), seq.plan.spe[j]);
    }
  }
  for (std::size_t i = 0; i < n_question; ++i) {
    const std::size_t token = seq.question_begin + i;
    const PositionTuple& pos = mode == ProbeMode::kDipe ? seq.plan.ape[token]
                                                        : seq.plan.spe[token];
    for (std::size_t h = 0; h < q.heads; ++h) rotator.apply(q.at(i, h), pos);
  }
  const T scale = T{1} / std::sqrt(static_cast<T>(rope.head_dim));
  double total = 0.0;
  for (std::size_t h = 0; h < q.heads; ++h) {
    for (std::size_t i = 0; i < n_question; ++i) {
      const auto qi = q.at(i, h);
      for (std::size_t j = 0; j < seq.n_visual; ++j) {
        const auto kj = k.at(j, h);
        T acc = T{0};
        for (std::size_t d = 0; d < qi.size(); ++d) acc += qi[d] * kj[d];
        total += static_cast<double>(acc * scale);
      }
    }
  }
  return total / static_cast<double>(q.heads * n_question * seq.n_visual);
}

template <class T>
std::vector<ProbeCell> run_cell(const ProbeConfig& cfg,
                                const std::vector<LayerWeights>& weights,
                                ProbeMode mode, std::int64_t distractor_len) {
  const IndexMode index_mode =
      mode == ProbeMode::kVanilla ? IndexMode::kVanilla : IndexMode::kMrope;
  const SynthSequence seq = synth_sequence(cfg, distractor_len, index_mode);
  const RopeConfig rope{cfg.head_dim, cfg.base, PairConvention::kAdjacentPairs};
  const ChunkPartition part = ChunkPartition::equal_thirds(rope);
  const std::size_t n = seq.tokens();
  const std::size_t heads = static_cast<std::size_t>(cfg.heads);
  const AttentionMode attn_mode =
      mode == ProbeMode::kDipe ? AttentionMode::kDipe : AttentionMode::kBaseline;

  std::vector<T> states(seq.embeddings.begin(), seq.embeddings.end());
  std::vector<ProbeCell> cells;
  for (int l = 0; l < cfg.layers; ++l) {
    const LayerWeights& w = weights[l];
    AttentionCase<T> c;
    c.queries = project(states, n, w.qk, cfg);
    c.keys = c.queries;
    c.values = project(states, n, w.v, cfg);
    c.plan = seq.plan;
    c.cfg = rope;
    c.partition = part;
    c.causal = true;
    c.full_intra_image = cfg.intra_image_mask == IntraImageMask::kFull;
    // Nothing reads the non-question rows after the last layer.
    const bool last = l + 1 == cfg.layers;
    const std::size_t first = last ? seq.question_begin : 0;
    const AttentionResult<T> result = attend_split(c, attn_mode, first);

    // Question queries are text, so the inter kernel covers exactly the
    // visual keys and 1 - alpha is the visual share of the softmax.
    double visual = 0.0;
    for (std::size_t i = seq.question_begin; i < n; ++i) {
      for (std::size_t h = 0; h < heads; ++h) {
        visual += 1.0 - static_cast<double>(result.alpha_at(i - first, h));
      }
    }
    visual /= static_cast<double>((n - seq.question_begin) * heads);

    ProbeCell cell;
    cell.mode = mode;
    cell.distractor_len = distractor_len;
    cell.layer = l;
    cell.visual_mass = visual;
    cell.per_visual_token_mass = visual / static_cast<double>(seq.n_visual);
    cell.mean_inter_logit =
        content_inter_logit<T>(seq, w, mode, rope, part, cfg);
    cells.push_back(cell);

    if (!last) {
      for (std::size_t idx = 0; idx < states.size(); ++idx) {
        states[idx] += result.output.data[idx];
      }
    }
  }
  return cells;
}

}  // namespace

std::string_view to_string(ProbeMode m) {
  switch (m) {
    case ProbeMode::kVanilla:
      return "vanilla";
    case ProbeMode::kMrope:
      return "mrope";
    case ProbeMode::kDipe:
      return "dipe";
  }
  return "?";
}

ProbeMode probe_mode_from_string(std::string_view s) {
  if (s == "vanilla") return ProbeMode::kVanilla;
  if (s == "mrope") return ProbeMode::kMrope;
  if (s == "dipe") return ProbeMode::kDipe;
  throw Error("bad_config", "unknown probe mode '" + std::string(s) + "'");
}

void validate(const ProbeConfig& cfg) {
  const RopeConfig rope{cfg.head_dim, cfg.base, PairConvention::kAdjacentPairs};
  ChunkPartition::equal_thirds(rope);
  if (cfg.layers <= 0 || cfg.heads <= 0 || cfg.question_len <= 0 ||
      cfg.image_grid.rows <= 0 || cfg.image_grid.cols <= 0) {
    throw Error("bad_config",
                "layers, heads, question_len and grid must be positive");
  }
  if (cfg.modes.empty()) throw Error("bad_config", "at least one mode");
  if (cfg.distractor_lengths.empty() ||
      !std::is_sorted(cfg.distractor_lengths.begin(),
                      cfg.distractor_lengths.end()) ||
      cfg.distractor_lengths.front() < 0) {
    throw Error("bad_config",
                "distractor lengths must be nonnegative and sorted ascending");
  }
  if (!(cfg.question_overlap >= 0.0 && cfg.question_overlap <= 1.0)) {
    throw Error("bad_config", "question_overlap must lie in [0, 1]");
  }
  if (cfg.threads <= 0) throw Error("bad_config", "threads must be positive");
}

SynthSequence synth_sequence(const ProbeConfig& cfg,
                             std::int64_t distractor_len, IndexMode mode) {
  validate(cfg);
  if (distractor_len < 0) {
    throw Error("bad_config", "distractor length must be nonnegative");
  }
  SynthSequence seq;
  seq.hidden = static_cast<std::size_t>(cfg.heads * cfg.head_dim);
  seq.n_visual =
      static_cast<std::size_t>(cfg.image_grid.rows * cfg.image_grid.cols);
  seq.question_begin = seq.n_visual + static_cast<std::size_t>(distractor_len);
  const std::size_t total =
      seq.question_begin + static_cast<std::size_t>(cfg.question_len);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  const std::size_t hidden = seq.hidden;
  seq.embeddings.resize(total * hidden);

  Rng visual_rng(cfg.seed, kVisualStream);
  for (std::size_t i = 0; i < seq.n_visual * hidden; ++i) {
    seq.embeddings[i] = visual_rng.gaussian() * scale;
  }
  Rng distractor_rng(cfg.seed, kDistractorStream);
  for (std::size_t i = seq.n_visual * hidden; i < seq.question_begin * hidden;
       ++i) {
    seq.embeddings[i] = distractor_rng.gaussian() * scale;
  }
  Rng question_rng(cfg.seed, kQuestionStream);
  const double copy = std::sqrt(cfg.question_overlap);
  const double noise = std::sqrt(1.0 - cfg.question_overlap);
  for (std::size_t i = seq.question_begin; i < total; ++i) {
    const std::size_t source = question_rng.below(seq.n_visual);
    for (std::size_t a = 0; a < hidden; ++a) {
      seq.embeddings[i * hidden + a] =
          copy * seq.embeddings[source * hidden + a] +
          noise * question_rng.gaussian() * scale;
    }
  }

  const std::vector<ModalitySegment> segments = {
      ModalitySegment::image(cfg.image_grid.rows, cfg.image_grid.cols),
      ModalitySegment::text(distractor_len + cfg.question_len)};
  seq.plan = build_plan(segments, mode);
  return seq;
}

const ProbeCell& ProbeReport::at(ProbeMode mode, std::int64_t distractor_len,
                                 int layer) const {
  for (const ProbeCell& c : cells) {
    if (c.mode == mode && c.distractor_len == distractor_len &&
        c.layer == layer) {
      return c;
    }
  }
  throw std::out_of_range("no probe cell for the requested key");
}

ProbeReport run_probe(const ProbeConfig& cfg) {
  validate(cfg);
  const std::vector<LayerWeights> weights = make_weights(cfg);

  struct Job {
    ProbeMode mode;
    std::int64_t length;
  };
  std::vector<Job> jobs;
  for (ProbeMode m : cfg.modes) {
    for (std::int64_t len : cfg.distractor_lengths) jobs.push_back({m, len});
  }
  std::vector<std::vector<ProbeCell>> results(jobs.size());

  auto run_job = [&](std::size_t idx) {
    const Job& job = jobs[idx];
    results[idx] = cfg.precision == Precision::kF64
                       ? run_cell<double>(cfg, weights, job.mode, job.length)
                       : run_cell<float>(cfg, weights, job.mode, job.length);
  };

  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), jobs.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < jobs.size(); i = next++) run_job(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  ProbeReport report;
  report.n_visual =
      static_cast<std::size_t>(cfg.image_grid.rows * cfg.image_grid.cols);
  for (const auto& cells : results) {
    report.cells.insert(report.cells.end(), cells.begin(), cells.end());
  }
  return report;
}

std::string report_to_csv(const ProbeReport& report) {
  std::string out(kProbeCsvHeader);
  out += '\n';
  char line[256];
  for (const ProbeCell& c : report.cells) {
    std::snprintf(line, sizeof(line), "%s,%lld,%d,%.17g,%.17g,%.17g\n",
                  std::string(to_string(c.mode)).c_str(),
                  static_cast<long long>(c.distractor_len), c.layer,
                  c.visual_mass, c.per_visual_token_mass, c.mean_inter_logit);
    out += line;
  }
  return out;
}

std::string report_to_json(const ProbeReport& report, int indent) {
  using nlohmann::json;
  json cells = json::array();
  // (mode, length) -> sums for the cross-layer mean, in first-seen order.
  std::vector<std::pair<ProbeMode, std::int64_t>> order;
  std::map<std::pair<int, std::int64_t>, std::array<double, 4>> sums;
  for (const ProbeCell& c : report.cells) {
    cells.push_back({{"mode", to_string(c.mode)},
                     {"distractor_len", c.distractor_len},
                     {"layer", c.layer},
                     {"visual_mass", c.visual_mass},
                     {"per_visual_token_mass", c.per_visual_token_mass},
                     {"mean_inter_logit", c.mean_inter_logit}});
    const auto key = std::make_pair(static_cast<int>(c.mode), c.distractor_len);
    auto [it, inserted] = sums.try_emplace(key, std::array<double, 4>{});
    if (inserted) order.emplace_back(c.mode, c.distractor_len);
    it->second[0] += c.visual_mass;
    it->second[1] += c.per_visual_token_mass;
    it->second[2] += c.mean_inter_logit;
    it->second[3] += 1.0;
  }
  json means = json::array();
  for (const auto& [mode, len] : order) {
    const auto& s = sums.at({static_cast<int>(mode), len});
    means.push_back({{"mode", to_string(mode)},
                     {"distractor_len", len},
                     {"visual_mass", s[0] / s[3]},
                     {"per_visual_token_mass", s[1] / s[3]},
                     {"mean_inter_logit", s[2] / s[3]}});
  }
  json doc{{"n_visual", report.n_visual},
           {"cells", cells},
           {"layer_mean", means}};
  return doc.dump(indent);
}

}  // namespace dipe
