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
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

#include "afsd/config.hpp"

namespace afsd {
namespace {

namespace fs = std::filesystem;

struct Result {
  int status = -1;
  std::string output;  // stdout and stderr
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(AFSD_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream is(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(is), {}};
  }
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("afsd_cli_" + std::string(
        ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  std::string p(const std::string& rel) const { return (dir_ / rel).string(); }
  // A small, quick configuration layered over the shipped profiles.
  static std::string small() {
    const std::string c = AFSD_CONFIG_DIR;
    return "--config " + c + "/thumos.cfg --config " + c + "/desk.cfg --set synth.num_train=3 --set synth.num_test=2 "
           "--set model.channels=8 --set model.num_levels=3 --set model.gn_groups=2 --set train.max_steps=12";
  }
  fs::path dir_;
};

TEST_F(Cli, SynthTwiceIsByteIdentical) {
  ASSERT_EQ(cli("synth --seed 7 " + small() + " --out-dir " + p("a")).status, 0);
  ASSERT_EQ(cli("synth " + small() + " --seed 7 --out-dir " + p("b")).status, 0);
  const auto a = read_tree(p("a")), b = read_tree(p("b"));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.count("annotations.json"), 1u);
  EXPECT_EQ(a.count("resolved_config.json"), 1u);
  EXPECT_EQ(a.count("features/rgb/test_001.afsd"), 1u);
  EXPECT_EQ(a.count("features/flow/train_002.afsd"), 1u);
  ASSERT_EQ(cli("synth " + small() + " --seed 8 --out-dir " + p("c")).status, 0);
  EXPECT_NE(read_tree(p("c")).at("features/rgb/test_001.afsd"), a.at("features/rgb/test_001.afsd"));
}

TEST_F(Cli, InvalidConfigurationExitsOneWithFieldDiagnostics) {
  const auto r = cli("synth --set model.chanels=3 --set train.lr=-1 --out-dir " + p("x"));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("model.chanels: unknown key"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("train.lr"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(p("x")));
  EXPECT_EQ(cli("synth").status, 1);                         // no --out-dir
  EXPECT_EQ(cli("frobnicate --out-dir " + p("x")).status, 1);  // unknown command
  EXPECT_EQ(cli("train --stream depth --data x --out-dir " + p("x")).status, 1);
  EXPECT_EQ(cli("--help").status, 0);
}

TEST_F(Cli, MissingCheckpointExitsOne) {
  ASSERT_EQ(cli("synth " + small() + " --out-dir " + p("data")).status, 0);
  const auto r = cli("infer " + small() + " --data " + p("data") + " --model-dir " + p("none") + " --out-dir " +
                     p("inf"));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("missing checkpoint"), std::string::npos) << r.output;
}

TEST_F(Cli, TrainInferEvalReport) {
  ASSERT_EQ(cli("synth " + small() + " --out-dir " + p("data")).status, 0);
  auto r = cli("train " + small() + " --stream both --data " + p("data") + " --out-dir " + p("run"));
  ASSERT_EQ(r.status, 0) << r.output;
  for (const char* s : {"rgb", "flow"}) {
    EXPECT_TRUE(fs::exists(p(std::string("run/") + s + "/model.ckpt")));
    EXPECT_TRUE(fs::exists(p(std::string("run/") + s + "/train_log.jsonl")));
    EXPECT_TRUE(fs::exists(p(std::string("run/") + s + "/checkpoints/epoch_001.ckpt")));
  }
  // The resolved dump of the training run drives the later commands.
  const std::string resolved = "--config " + p("run/resolved_config.json");
  r = cli("infer " + resolved + " --stream both --data " + p("data") + " --model-dir " + p("run") + " --out-dir " +
          p("inf"));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_TRUE(fs::exists(p("inf/detections.jsonl")));
  r = cli("eval " + resolved + " --data " + p("data") + " --detections " + p("inf/detections.jsonl") +
          " --out-dir " + p("ev"));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("tIoU    0.30   0.40   0.50   0.60   0.70   Avg."), std::string::npos) << r.output;
  const auto metrics = Json::parse(read_tree(p("ev")).at("metrics.json"));
  EXPECT_EQ(metrics.at("thresholds").size(), 5u);
  r = cli("report " + resolved + " --stream both --data " + p("data") + " --model-dir " + p("run") + " --detections " +
          p("inf/detections.jsonl") + " --out-dir " + p("rep"));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto svg = read_tree(p("rep"));
  EXPECT_EQ(svg.at("training_curves.svg").rfind("<svg", 0), 0u);
  EXPECT_NE(svg.at("pr_curves.svg").find("class_1"), std::string::npos);
  for (const char* d : {"data", "run", "inf", "ev", "rep"}) {
    const auto dump = Json::parse(read_tree(p(d)).at("resolved_config.json"));
    EXPECT_EQ(dump.at("model.delta_a").at("provenance"), "paper") << d;
    EXPECT_EQ(dump.at("model.channels").at("value"), 8) << d;
  }
}

TEST_F(Cli, GradcheckPrintsMaxError) {
  const auto r = cli("gradcheck --out-dir " + p("gc"));
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("max relative error"), std::string::npos);
  EXPECT_NE(r.output.find("composed_head"), std::string::npos);
  EXPECT_TRUE(Json::parse(read_tree(p("gc")).at("gradcheck.json")).at("passed").get<bool>());
  // An impossible tolerance fails the check.
  EXPECT_EQ(cli("gradcheck --tolerance 1e-30").status, 1);
}

TEST_F(Cli, BenchReportsThroughput) {
  const auto r = cli("bench " + small() + " --clips 3 --out-dir " + p("b"));
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("clips/s"), std::string::npos);
  EXPECT_GT(Json::parse(read_tree(p("b")).at("bench.json")).at("infer_clips_per_second").get<double>(), 0);
}

}  // namespace
}  // namespace afsd
