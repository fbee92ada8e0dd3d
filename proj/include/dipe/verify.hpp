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

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dipe {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  // When set, the probe check also compares its CSV byte-for-byte.
  std::optional<std::string> golden_probe_csv;
};

// Each check measures its own runtime and fails when over budget.
CheckResult check_rotation_identity();
CheckResult check_decay_bound();
CheckResult check_merge_exactness();
CheckResult check_intra_parity();
CheckResult check_inter_invariance();
CheckResult check_incremental_decode();
CheckResult check_mask_partition();
CheckResult check_probe(const VerifyOptions& options);
CheckResult check_plan_worked_example();

// Runs every check in order; `on_result` fires as each one completes.
std::vector<CheckResult> run_invariant_suite(
    const VerifyOptions& options,
    const std::function<void(const CheckResult&)>& on_result = {});

// "[PASS] 3 merge exactness (1.23 s): detail"
std::string format_result(const CheckResult& r);

// The hand-derived plan for txt:3,img:2x2,txt:2.
struct WorkedPlan {
  std::vector<std::array<std::int64_t, 3>> spe;
  std::vector<std::array<std::int64_t, 3>> ape;
};
const WorkedPlan& worked_example_plan();

}  // namespace dipe
