// Copyright 2026 The AFSD Toolkit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// Command-line entry point: synth, train, infer, eval, gradcheck, bench and
// report. Exit status 0 on success, 1 on invalid configuration or input
// (including a missing checkpoint or a failed gradient check), 2 on a
// runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "afsd/workflow.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;

struct Options {
  std::vector<std::string> configs;
  std::vector<std::string> overrides;
  long long seed = -1;
  std::string out_dir;
  std::string stream = "rgb";
  std::string data;
  std::string model_dir;
  std::string detections;
  std::string annotations;
  std::string subset = "test";
  double threshold = 0.5;
  double tolerance = 1e-4;
  std::size_t clips = 16;
};

afsd::Config resolve(const Options& o) {
  auto overrides = o.overrides;
  if (o.seed >= 0) overrides.push_back("seed=" + std::to_string(o.seed));
  return afsd::load_config(o.configs, overrides);
}

std::string annotations_path(const Options& o) {
  if (!o.annotations.empty()) return o.annotations;
  if (!o.data.empty()) return (std::filesystem::path(o.data) / "annotations.json").string();
  throw afsd::ArgumentError("give --annotations or --data");
}

int run(const std::string& command, const Options& o) {
  using namespace afsd;
  const Config cfg = resolve(o);
  if (command == "synth") {
    run_synth(cfg, o.out_dir);
    std::cout << "dataset written to " << o.out_dir << '\n';
  } else if (command == "train") {
    for (const auto& r : run_train(cfg, o.data, parse_streams(o.stream), o.out_dir)) {
      std::cout << r.stream << ": " << r.summary.steps << " steps, " << r.summary.consistency_steps
                << " consistency steps, " << r.summary.bcl_eligible << " rearranged clips; model at "
                << checkpoint_path(o.out_dir, r.stream) << '\n';
    }
  } else if (command == "infer") {
    const auto dets = run_infer(cfg, o.data, o.subset, o.model_dir, parse_streams(o.stream), o.out_dir);
    std::cout << dets.size() << " detections written to "
              << (std::filesystem::path(o.out_dir) / "detections.jsonl").string() << '\n';
  } else if (command == "eval") {
    const auto report = run_eval(cfg, annotations_path(o), o.detections, o.subset, o.out_dir);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << report_table(report);
  } else if (command == "gradcheck") {
    if (!o.out_dir.empty()) prepare_out_dir(o.out_dir, cfg);
    const auto s = run_gradcheck(cfg, &std::cout);
    std::printf("max relative error %.3e (tolerance %.1e): %s\n", s.max_rel_error, o.tolerance,
                s.max_rel_error < o.tolerance ? "PASS" : "FAIL");
    if (!o.out_dir.empty()) {
      write_text_file((std::filesystem::path(o.out_dir) / "gradcheck.json").string(),
                      gradcheck_json(s, o.tolerance).dump(2) + "\n");
    }
    return s.max_rel_error < o.tolerance ? kOk : kInvalid;
  } else if (command == "bench") {
    if (!o.out_dir.empty()) prepare_out_dir(o.out_dir, cfg);
    const auto r = run_bench(cfg, o.clips);
    std::printf("%zu clips of %zu steps: inference %.2f clips/s, training %.2f clips/s\n", r.clips, r.clip_steps,
                r.infer_clips_per_second, r.train_clips_per_second);
    if (!o.out_dir.empty()) {
      const Json j{{"clips", r.clips}, {"clip_steps", r.clip_steps},
                   {"infer_clips_per_second", r.infer_clips_per_second},
                   {"train_clips_per_second", r.train_clips_per_second}};
      write_text_file((std::filesystem::path(o.out_dir) / "bench.json").string(), j.dump(2) + "\n");
    }
  } else if (command == "report") {
    const std::string ann = o.detections.empty() ? std::string() : annotations_path(o);
    for (const auto& p : run_report(cfg, o.model_dir, parse_streams(o.stream), ann, o.detections, o.subset,
                                    o.threshold, o.out_dir)) {
      std::cout << "wrote " << p << '\n';
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchor-free temporal action localization toolkit"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.configs, "config file (repeatable; later files win)")->check(CLI::ExistingFile);
  app.add_option("--set", o.overrides, "override as key=value (repeatable; wins over files)");
  app.add_option("--seed", o.seed, "shorthand for --set seed=N")->check(CLI::NonNegativeNumber);
  app.add_option("--out-dir", o.out_dir, "directory for the command's artifacts");
  app.add_option("--stream", o.stream, "feature stream")->check(CLI::IsMember({"rgb", "flow", "both"}));
  app.fallthrough();

  auto* synth = app.add_subcommand("synth", "write a seeded synthetic dataset");
  auto* train = app.add_subcommand("train", "train one model per stream");
  auto* infer = app.add_subcommand("infer", "detect actions in a dataset subset");
  auto* eval = app.add_subcommand("eval", "mAP of a detections file");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every kernel and the head");
  auto* bench = app.add_subcommand("bench", "clips/second throughput");
  auto* report = app.add_subcommand("report", "render training and precision/recall curves to SVG");

  for (auto* sub : {synth, train, infer, eval, report}) sub->needs(app.get_option("--out-dir"));
  for (auto* sub : {train, infer}) sub->add_option("--data", o.data, "dataset directory")->required();
  for (auto* sub : {infer, report}) {
    sub->add_option("--model-dir,--checkpoint", o.model_dir, "training output directory");
  }
  infer->get_option("--model-dir")->required();
  for (auto* sub : {eval, report}) {
    sub->add_option("--detections", o.detections, "detections file (JSON lines)");
    sub->add_option("--annotations", o.annotations, "annotation document");
    sub->add_option("--data", o.data, "dataset directory (for its annotations.json)");
  }
  eval->get_option("--detections")->required();
  for (auto* sub : {infer, eval, report}) sub->add_option("--subset", o.subset, "subset to use")->capture_default_str();
  report->add_option("--threshold", o.threshold, "tIoU threshold of the PR curves")->capture_default_str();
  gradcheck->add_option("--tolerance", o.tolerance, "maximum relative error")->capture_default_str();
  bench->add_option("--clips", o.clips, "number of clips timed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const afsd::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::invalid_argument& e) {  // ArgumentError, DimensionError
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const afsd::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kRuntime;
  }
}
