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

#include "dipe/case_io.hpp"

#include <algorithm>
#include <cmath>

#include "dipe/error.hpp"
#include "dipe/random.hpp"
#include "json_util.hpp"

namespace dipe {

using nlohmann::json;

AttentionCase<double> make_random_case(const RandomCaseSpec& spec) {
  validate(spec.cfg);
  AttentionCase<double> c;
  c.plan = build_plan(spec.segments, spec.mode);
  c.cfg = spec.cfg;
  c.partition =
      spec.partition ? *spec.partition : ChunkPartition::equal_thirds(spec.cfg);
  c.causal = spec.causal;
  c.full_intra_image = spec.full_intra_image;
  const std::size_t n = c.plan.size();
  const std::size_t dim = static_cast<std::size_t>(spec.cfg.head_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  Rng rng(spec.seed);
  for (HeadTensor<double>* t : {&c.queries, &c.keys, &c.values}) {
    *t = HeadTensor<double>(n, spec.heads, dim);
    for (double& x : t->data) x = rng.gaussian() * scale;
  }
  return c;
}

std::vector<ModalitySegment> random_segments(std::uint64_t seed,
                                             std::size_t max_tokens) {
  Rng rng(seed, 17);
  std::vector<ModalitySegment> out;
  std::size_t used = 0;
  bool visual = rng.below(2) == 0;
  while (used < max_tokens) {
    const std::size_t room = max_tokens - used;
    if (visual) {
      const auto rows = static_cast<std::int64_t>(1 + rng.below(6));
      const auto cols = static_cast<std::int64_t>(1 + rng.below(6));
      if (static_cast<std::size_t>(rows * cols) > room) break;
      out.push_back(ModalitySegment::image(rows, cols));
      used += static_cast<std::size_t>(rows * cols);
    } else {
      const auto len = static_cast<std::int64_t>(
          1 + rng.below(std::min<std::size_t>(room, 40)));
      out.push_back(ModalitySegment::text(len));
      used += static_cast<std::size_t>(len);
    }
    visual = !visual;
    if (out.size() >= 12) break;
  }
  if (out.empty()) out.push_back(ModalitySegment::text(1));
  return out;
}

template <class T>
AttentionCase<T> cast_case(const AttentionCase<double>& c) {
  auto convert = [](const HeadTensor<double>& src) {
    HeadTensor<T> dst(src.tokens, src.heads, src.dim);
    for (std::size_t i = 0; i < src.data.size(); ++i) {
      dst.data[i] = static_cast<T>(src.data[i]);
    }
    return dst;
  };
  return AttentionCase<T>{convert(c.queries), convert(c.keys),
                          convert(c.values), c.plan, c.cfg, c.partition,
                          c.causal, c.full_intra_image};
}

namespace {

template <class T>
json tensor_to_value(const HeadTensor<T>& t) {
  json tokens = json::array();
  for (std::size_t i = 0; i < t.tokens; ++i) {
    json heads = json::array();
    for (std::size_t h = 0; h < t.heads; ++h) {
      const auto row = t.at(i, h);
      heads.push_back(json(std::vector<T>(row.begin(), row.end())));
    }
    tokens.push_back(std::move(heads));
  }
  return tokens;
}

HeadTensor<double> tensor_from_value(const json& value, const char* field,
                                     std::size_t heads, std::size_t dim) {
  if (!value.is_array()) {
    throw ParseError(std::string("field '") + field + "' must be an array");
  }
  HeadTensor<double> t(value.size(), heads, dim);
  for (std::size_t i = 0; i < value.size(); ++i) {
    const json& token = value[i];
    if (!token.is_array() || token.size() != heads) {
      throw Error("dim_mismatch", std::string(field) + "[" +
                                      std::to_string(i) + "] must hold " +
                                      std::to_string(heads) + " heads");
    }
    for (std::size_t h = 0; h < heads; ++h) {
      const json& vec = token[h];
      if (!vec.is_array() || vec.size() != dim) {
        throw Error("dim_mismatch", std::string(field) + "[" +
                                        std::to_string(i) + "][" +
                                        std::to_string(h) + "] must hold " +
                                        std::to_string(dim) + " numbers");
      }
      auto out = t.at(i, h);
      for (std::size_t d = 0; d < dim; ++d) {
        if (!vec[d].is_number()) {
          throw ParseError(std::string("non-numeric entry in '") + field + "'");
        }
        out[d] = vec[d].get<double>();
      }
    }
  }
  return t;
}

template <class T>
json nullable(T x) {
  return std::isfinite(x) ? json(x) : json(nullptr);
}

}  // namespace

std::string case_to_json(const AttentionCase<double>& c, int indent) {
  json doc{{"head_dim", c.cfg.head_dim},
           {"base", c.cfg.base},
           {"heads", c.queries.heads},
           {"causal", c.causal},
           {"full_intra_image", c.full_intra_image},
           {"partition",
            {c.partition.t_pairs, c.partition.h_pairs, c.partition.w_pairs}},
           {"plan", detail::plan_to_value(c.plan)},
           {"queries", tensor_to_value(c.queries)},
           {"keys", tensor_to_value(c.keys)},
           {"values", tensor_to_value(c.values)}};
  return doc.dump(indent);
}

AttentionCase<double> case_from_json(std::string_view text) {
  const json doc = detail::parse_json(text);
  if (!doc.is_object()) throw ParseError("case must be a JSON object");
  AttentionCase<double> c;
  std::size_t heads = 0;
  try {
    c.cfg.head_dim = doc.at("head_dim").get<int>();
    c.cfg.base = doc.value("base", 10000.0);
    heads = doc.at("heads").get<std::size_t>();
    c.causal = doc.value("causal", true);
    c.full_intra_image = doc.value("full_intra_image", false);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed case header: ") + e.what());
  }
  validate(c.cfg);
  if (doc.contains("partition")) {
    const json& p = doc.at("partition");
    if (!p.is_array() || p.size() != 3 ||
        !std::all_of(p.begin(), p.end(),
                     [](const json& v) { return v.is_number_integer(); })) {
      throw ParseError("partition must be [t_pairs, h_pairs, w_pairs]");
    }
    c.partition = {p[0].get<int>(), p[1].get<int>(), p[2].get<int>()};
  } else {
    c.partition = ChunkPartition::equal_thirds(c.cfg);
  }
  if (doc.contains("plan")) {
    c.plan = detail::plan_from_value(doc.at("plan"));
  } else if (doc.contains("segments")) {
    const IndexMode mode =
        index_mode_from_string(doc.value("mode", std::string("mrope")));
    c.plan = build_plan(detail::segments_from_value(doc.at("segments")), mode);
  } else {
    throw ParseError("case needs either 'plan' or 'segments'");
  }
  const std::size_t dim = static_cast<std::size_t>(c.cfg.head_dim);
  for (const char* field : {"queries", "keys", "values"}) {
    if (!doc.contains(field)) {
      throw ParseError(std::string("missing field '") + field + "'");
    }
  }
  c.queries = tensor_from_value(doc.at("queries"), "queries", heads, dim);
  c.keys = tensor_from_value(doc.at("keys"), "keys", heads, dim);
  c.values = tensor_from_value(doc.at("values"), "values", heads, dim);
  validate(c);
  return c;
}

template <class T>
std::string result_to_json(const AttentionResult<T>& result, int indent) {
  const std::size_t heads = result.output.heads;
  json lse = json::array();
  json alpha = json::array();
  for (std::size_t i = 0; i < result.output.tokens; ++i) {
    json lse_row = json::array();
    json alpha_row = json::array();
    for (std::size_t h = 0; h < heads; ++h) {
      lse_row.push_back(nullable(result.lse[i * heads + h]));
      if (!result.alpha.empty()) {
        alpha_row.push_back(nullable(result.alpha[i * heads + h]));
      }
    }
    lse.push_back(std::move(lse_row));
    if (!result.alpha.empty()) alpha.push_back(std::move(alpha_row));
  }
  json doc{{"output", tensor_to_value(result.output)},
           {"lse", lse},
           {"alpha", alpha}};
  return doc.dump(indent);
}

template AttentionCase<double> cast_case<double>(const AttentionCase<double>&);
template AttentionCase<float> cast_case<float>(const AttentionCase<double>&);
template std::string result_to_json<double>(const AttentionResult<double>&, int);
template std::string result_to_json<float>(const AttentionResult<float>&, int);

}  // namespace dipe
