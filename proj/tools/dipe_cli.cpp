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

// dipe: command-line front end.
//
//   dipe plan    --segments txt:3,img:2x2,txt:2 [--mode mrope|vanilla]
//   dipe attend  --case case.json [--check] [--precision f64|f32]
//   dipe decay   --dim 64 --base 10000 --max-dist 16384 --step 256
//   dipe probe   [--modes dipe,mrope] [--lengths 0,64,256] [--format csv|json]
//   dipe verify  [--golden tests/golden/probe_default.csv]
//
// Exit codes: 0 success, 1 check failure, 2 usage or input error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dipe/attention.hpp"
#include "dipe/case_io.hpp"
#include "dipe/error.hpp"
#include "dipe/plan.hpp"
#include "dipe/probe.hpp"
#include "dipe/rope.hpp"
#include "dipe/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

constexpr std::uint64_t kDefaultSeed = 20260218;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + out_path + "'");
  out << text;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

std::vector<dipe::ModalitySegment> parse_segments_arg(const std::string& arg) {
  if (!arg.empty() && (arg.front() == '[' || arg.front() == '{')) {
    return dipe::segments_from_json(arg);
  }
  return dipe::parse_segment_spec(arg);
}

// ---------------------------------------------------------------- plan

struct PlanArgs {
  std::string segments;
  std::string segments_file;
  std::string mode = "mrope";
  std::string out;
  int indent = -1;
};

int run_plan(const PlanArgs& args) {
  if (args.segments.empty() == args.segments_file.empty()) {
    throw UsageError("pass exactly one of --segments or --segments-file");
  }
  const std::vector<dipe::ModalitySegment> segments =
      args.segments_file.empty()
          ? parse_segments_arg(args.segments)
          : dipe::segments_from_json(read_file(args.segments_file));
  const dipe::PositionPlan plan =
      dipe::build_plan(segments, dipe::index_mode_from_string(args.mode));
  emit(dipe::plan_to_json(plan, args.indent) + "\n", args.out);
  return kExitOk;
}

// -------------------------------------------------------------- attend

struct AttendArgs {
  std::string case_path;
  std::string write_case;
  std::string segments = "img:4x4,txt:48";
  std::string mode = "dipe";
  std::string precision = "f64";
  std::string out;
  std::uint64_t seed = kDefaultSeed;
  int random_heads = 4;
  int head_dim = 48;
  bool random = false;
  bool check = false;
};

template <class T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isinf(a[i]) || std::isinf(b[i])) {
      if (a[i] != b[i]) return INFINITY;
      continue;
    }
    worst = std::max(worst, std::abs(static_cast<double>(a[i] - b[i])));
  }
  return worst;
}

template <class T>
int attend_with(const dipe::AttentionCase<double>& source,
                const AttendArgs& args) {
  const dipe::AttentionCase<T> c = dipe::cast_case<T>(source);
  const dipe::AttentionMode mode = args.mode == "baseline"
                                       ? dipe::AttentionMode::kBaseline
                                       : dipe::AttentionMode::kDipe;
  const dipe::AttentionResult<T> result = dipe::attend_split(c, mode);
  if (!args.check) {
    emit(dipe::result_to_json(result) + "\n", args.out);
    return kExitOk;
  }
  if (!args.out.empty()) emit(dipe::result_to_json(result) + "\n", args.out);

  const dipe::AttentionResult<T> reference = dipe::attend_reference(c, mode);
  const double out_diff = max_abs_diff(result.output.data, reference.output.data);
  const double lse_diff = max_abs_diff(result.lse, reference.lse);
  const double tol = std::is_same_v<T, double> ? 1e-9 : 1e-4;
  const bool pass = out_diff <= tol && lse_diff <= tol;

  const bool single_modality = c.plan.segments.size() == 1;
  std::printf("tokens=%zu heads=%zu head_dim=%zu precision=%s mode=%s\n",
              c.queries.tokens, c.queries.heads, c.queries.dim,
              args.precision.c_str(), args.mode.c_str());
  std::printf("max_abs_diff_output=%.6g\nmax_abs_diff_lse=%.6g\ntolerance=%g\n",
              out_diff, lse_diff, tol);
  if (single_modality) {
    const dipe::AttentionResult<T> dipe_out =
        dipe::attend_reference(c, dipe::AttentionMode::kDipe);
    const dipe::AttentionResult<T> base_out =
        dipe::attend_reference(c, dipe::AttentionMode::kBaseline);
    const bool identical = dipe_out.output.data == base_out.output.data &&
                           dipe_out.lse == base_out.lse;
    std::printf("single_modality=true dipe_equals_baseline=%s\n",
                identical ? "true" : "false");
  }
  std::printf("%s\n", pass ? "PASS" : "FAIL");
  return pass ? kExitOk : kExitCheckFailed;
}

int run_attend(const AttendArgs& args) {
  if (args.random == !args.case_path.empty()) {
    throw UsageError("pass exactly one of --case or --random");
  }
  dipe::AttentionCase<double> c;
  if (args.random) {
    dipe::RandomCaseSpec spec;
    spec.seed = args.seed;
    spec.segments = parse_segments_arg(args.segments);
    spec.heads = static_cast<std::size_t>(args.random_heads);
    spec.cfg = dipe::RopeConfig{args.head_dim, 10000.0,
                                dipe::PairConvention::kAdjacentPairs};
    c = dipe::make_random_case(spec);
  } else {
    c = dipe::case_from_json(read_file(args.case_path));
  }
  if (!args.write_case.empty()) emit(dipe::case_to_json(c) + "\n", args.write_case);
  if (args.precision == "f32") return attend_with<float>(c, args);
  return attend_with<double>(c, args);
}

// --------------------------------------------------------------- decay

struct DecayArgs {
  int dim = 64;
  double base = 10000.0;
  std::int64_t max_dist = 16384;
  std::int64_t step = 256;
  std::string out;
};

int run_decay(const DecayArgs& args) {
  if (args.step <= 0 || args.max_dist < 0) {
    throw UsageError("--step must be positive and --max-dist nonnegative");
  }
  const dipe::RopeConfig cfg{args.dim, args.base,
                             dipe::PairConvention::kAdjacentPairs};
  std::string csv = "distance,bound\n";
  char line[96];
  for (std::int64_t d = 0; d <= args.max_dist; d += args.step) {
    std::snprintf(line, sizeof(line), "%lld,%.17g\n", static_cast<long long>(d),
                  dipe::decay_bound(d, cfg));
    csv += line;
  }
  emit(csv, args.out);
  return kExitOk;
}

// --------------------------------------------------------------- probe

struct ProbeArgs {
  dipe::ProbeConfig cfg;
  std::string grid = "4x4";
  std::string lengths = "0,64,256,1024,4096";
  std::string modes = "vanilla,mrope,dipe";
  std::string intra_image = "causal";
  std::string precision = "f64";
  std::string format = "csv";
  std::string out;
};

int run_probe(ProbeArgs args) {
  dipe::ProbeConfig& cfg = args.cfg;
  const std::vector<dipe::ModalitySegment> grid =
      dipe::parse_segment_spec("img:" + args.grid);
  cfg.image_grid = *grid.front().grid;
  cfg.distractor_lengths.clear();
  for (const std::string& item : split_list(args.lengths)) {
    try {
      cfg.distractor_lengths.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw UsageError("bad distractor length '" + item + "'");
    }
  }
  cfg.modes.clear();
  for (const std::string& item : split_list(args.modes)) {
    cfg.modes.push_back(dipe::probe_mode_from_string(item));
  }
  cfg.intra_image_mask = args.intra_image == "full"
                             ? dipe::IntraImageMask::kFull
                             : dipe::IntraImageMask::kCausal;
  cfg.precision =
      args.precision == "f32" ? dipe::Precision::kF32 : dipe::Precision::kF64;
  const dipe::ProbeReport report = dipe::run_probe(cfg);
  emit(args.format == "json" ? dipe::report_to_json(report) + "\n"
                             : dipe::report_to_csv(report),
       args.out);
  return kExitOk;
}

// -------------------------------------------------------------- verify

int run_verify(const std::string& golden) {
  dipe::VerifyOptions options;
  if (!golden.empty()) options.golden_probe_csv = golden;
  bool all = true;
  dipe::run_invariant_suite(options, [&](const dipe::CheckResult& r) {
    all = all && r.passed;
    std::printf("%s\n", dipe::format_result(r).c_str());
    std::fflush(stdout);
  });
  std::printf("%s\n", all ? "ALL PASS" : "SOME CHECKS FAILED");
  return all ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DIPE position planning, attention verification and probes"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = kDefaultSeed;
  app.add_option("--seed", seed, "Random seed (falls back to $DIPE_SEED)")
      ->envname("DIPE_SEED");

  PlanArgs plan_args;
  CLI::App* plan = app.add_subcommand("plan", "Build SPE/APE position plans");
  plan->add_option("--segments", plan_args.segments,
                   "Inline spec like txt:3,img:2x2,txt:2, or a JSON array");
  plan->add_option("--segments-file", plan_args.segments_file,
                   "JSON file holding the segment list");
  plan->add_option("--mode", plan_args.mode, "SPE style")
      ->check(CLI::IsMember({"mrope", "vanilla"}));
  plan->add_option("--indent", plan_args.indent, "JSON indent (-1 = compact)");
  plan->add_option("-o,--out", plan_args.out, "Output file (default stdout)");

  AttendArgs attend_args;
  CLI::App* attend =
      app.add_subcommand("attend", "Run split attention on a case file");
  attend->add_option("--case", attend_args.case_path, "Case JSON file");
  attend->add_flag("--random", attend_args.random,
                   "Generate a seeded random case instead of reading one");
  attend->add_option("--segments", attend_args.segments,
                     "Layout of the random case");
  attend->add_option("--heads", attend_args.random_heads, "Heads of the random case")
      ->check(CLI::PositiveNumber);
  attend->add_option("--head-dim", attend_args.head_dim,
                     "head_dim of the random case");
  attend->add_option("--write-case", attend_args.write_case,
                     "Also write the case as JSON");
  attend->add_option("--mode", attend_args.mode, "Attention mode")
      ->check(CLI::IsMember({"dipe", "baseline"}));
  attend->add_option("--precision", attend_args.precision)
      ->check(CLI::IsMember({"f64", "f32"}));
  attend->add_flag("--check", attend_args.check,
                   "Compare against the dense oracle; exit 1 on mismatch");
  attend->add_option("-o,--out", attend_args.out, "Result JSON file");

  DecayArgs decay_args;
  CLI::App* decay = app.add_subcommand("decay", "Long-term decay bound curve");
  decay->add_option("--dim", decay_args.dim, "head_dim");
  decay->add_option("--base", decay_args.base, "Frequency base");
  decay->add_option("--max-dist", decay_args.max_dist, "Largest distance");
  decay->add_option("--step", decay_args.step, "Distance step");
  decay->add_option("-o,--out", decay_args.out, "Output CSV file");

  ProbeArgs probe_args;
  CLI::App* probe = app.add_subcommand("probe", "Synthetic visual-fading probe");
  probe->add_option("--layers", probe_args.cfg.layers)->check(CLI::PositiveNumber);
  probe->add_option("--heads", probe_args.cfg.heads)->check(CLI::PositiveNumber);
  probe->add_option("--head-dim", probe_args.cfg.head_dim);
  probe->add_option("--base", probe_args.cfg.base);
  probe->add_option("--grid", probe_args.grid, "Image grid RxC");
  probe->add_option("--question-len", probe_args.cfg.question_len)
      ->check(CLI::PositiveNumber);
  probe->add_option("--lengths", probe_args.lengths,
                    "Comma-separated distractor lengths, ascending");
  probe->add_option("--modes", probe_args.modes,
                    "Comma-separated subset of vanilla,mrope,dipe");
  probe->add_option("--intra-image", probe_args.intra_image)
      ->check(CLI::IsMember({"causal", "full"}));
  probe->add_option("--qk-gain", probe_args.cfg.qk_gain);
  probe->add_option("--overlap", probe_args.cfg.question_overlap,
                    "Question/visual content overlap in [0, 1]");
  probe->add_option("--precision", probe_args.precision)
      ->check(CLI::IsMember({"f64", "f32"}));
  probe->add_option("--threads", probe_args.cfg.threads)
      ->check(CLI::PositiveNumber);
  probe->add_option("--format", probe_args.format)
      ->check(CLI::IsMember({"csv", "json"}));
  probe->add_option("-o,--out", probe_args.out, "Output file");

  std::string golden;
  CLI::App* verify = app.add_subcommand("verify", "Run the invariant suite");
  verify->add_option("--golden", golden, "Golden probe CSV to compare against");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*plan) return run_plan(plan_args);
    if (*attend) {
      attend_args.seed = seed;
      return run_attend(attend_args);
    }
    if (*decay) return run_decay(decay_args);
    if (*probe) {
      probe_args.cfg.seed = seed;
      return run_probe(probe_args);
    }
    if (*verify) return run_verify(golden);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const dipe::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
