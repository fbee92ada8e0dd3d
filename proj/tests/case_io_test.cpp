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

#include <gtest/gtest.h>

#include "json.hpp"

#include "dipe/error.hpp"

namespace dipe {
namespace {

RandomCaseSpec small_spec(std::uint64_t seed) {
  RandomCaseSpec spec;
  spec.seed = seed;
  spec.segments = {ModalitySegment::text(2), ModalitySegment::image(2, 2)};
  spec.heads = 2;
  spec.cfg = RopeConfig{12, 10000.0, PairConvention::kAdjacentPairs};
  return spec;
}

TEST(RandomCase, IsDeterministicAndScaled) {
  const auto a = make_random_case(small_spec(7));
  const auto b = make_random_case(small_spec(7));
  const auto c = make_random_case(small_spec(8));
  EXPECT_EQ(a.queries.data, b.queries.data);
  EXPECT_EQ(a.values.data, b.values.data);
  EXPECT_NE(a.queries.data, c.queries.data);
  EXPECT_EQ(a.queries.tokens, 6u);
  EXPECT_EQ(a.plan.size(), 6u);

  RandomCaseSpec big = small_spec(9);
  big.segments = {ModalitySegment::text(400)};
  big.cfg.head_dim = 48;
  big.partition = ChunkPartition{8, 8, 8};
  const auto d = make_random_case(big);
  double sq = 0.0;
  for (double x : d.keys.data) sq += x * x;
  // Entries ~ N(0, 1/d), so the mean squared entry is about 1/48.
  EXPECT_NEAR(sq / d.keys.data.size() * 48.0, 1.0, 0.05);
}

TEST(RandomSegments, RespectsBudget) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto segs = random_segments(seed, 64);
    ASSERT_FALSE(segs.empty());
    std::int64_t total = 0;
    for (const auto& s : segs) total += s.length;
    EXPECT_LE(total, 64);
    EXPECT_NO_THROW(build_plan(segs));
  }
}

TEST(CaseJson, RoundTrip) {
  RandomCaseSpec spec = small_spec(10);
  spec.causal = false;
  spec.full_intra_image = true;
  const auto c = make_random_case(spec);
  const auto back = case_from_json(case_to_json(c));
  EXPECT_EQ(back.queries.data, c.queries.data);
  EXPECT_EQ(back.keys.data, c.keys.data);
  EXPECT_EQ(back.values.data, c.values.data);
  EXPECT_EQ(back.plan, c.plan);
  EXPECT_EQ(back.cfg.head_dim, 12);
  EXPECT_FALSE(back.causal);
  EXPECT_TRUE(back.full_intra_image);
  EXPECT_EQ(back.partition.total_pairs(), 6);
}

TEST(CaseJson, AcceptsSegmentsInsteadOfPlan) {
  const auto c = make_random_case(small_spec(11));
  nlohmann::json j = nlohmann::json::parse(case_to_json(c));
  j.erase("plan");
  j["segments"] = "txt:2,img:2x2";
  const auto back = case_from_json(j.dump());
  EXPECT_EQ(back.plan, c.plan);
}

TEST(CaseJson, Errors) {
  const std::string text = case_to_json(make_random_case(small_spec(12)));
  EXPECT_THROW(case_from_json(text.substr(0, text.size() - 3)), ParseError);
  EXPECT_THROW(case_from_json("{}"), Error);
  nlohmann::json j = nlohmann::json::parse(text);
  j["partition"] = nlohmann::json::array({"x", 2, 2});
  EXPECT_THROW(case_from_json(j.dump()), Error);
}

TEST(ResultJson, EncodesEmptyRowsAsNull) {
  AttentionResult<double> r;
  r.output = HeadTensor<double>(1, 2, 2);
  r.lse = {0.5, -std::numeric_limits<double>::infinity()};
  r.alpha = {1.0, 0.0};
  const auto j = nlohmann::json::parse(result_to_json(r));
  EXPECT_EQ(j["lse"][0][0].get<double>(), 0.5);
  EXPECT_TRUE(j["lse"][0][1].is_null());
}

}  // namespace
}  // namespace dipe
