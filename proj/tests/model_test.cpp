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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "afsd/head_check.hpp"
#include "afsd/kernel_checks.hpp"
#include "afsd/losses.hpp"
#include "afsd/model.hpp"

namespace afsd {
namespace {

ModelConfig small_config(PoolKind pooling = PoolKind::kMax) {
  ModelConfig cfg;
  cfg.in_channels = 6;
  cfg.channels = 8;
  cfg.num_levels = 4;
  cfg.gn_groups = 4;
  cfg.num_classes = 3;
  cfg.pooling = pooling;
  cfg.init_seed = 17;
  return cfg;
}

FeatureSequence random_sequence(std::size_t T, std::size_t C, std::uint64_t seed,
                                double frames_per_step = 4.0) {
  std::mt19937_64 rng(seed);
  return {random_tensor({T, C}, rng), frames_per_step, 0.0};
}

TEST(Pyramid, LevelLengthsHalve) {
  ModelConfig cfg = small_config();
  cfg.num_levels = 6;
  Model<double> model(cfg);
  Tape<double> tape;
  BoundParameters<double> p(tape, model.parameters(), false);
  auto seq = random_sequence(32, 6, 1);
  auto pyr = model.build_pyramid(p, tape.constant(seq.values), 4.0, 0.0);
  std::vector<std::size_t> lengths;
  for (const auto& l : pyr.levels) {
    lengths.push_back(l.features.value().dim(0));
    EXPECT_EQ(l.features.value().dim(1), cfg.channels);
  }
  EXPECT_EQ(lengths, (std::vector<std::size_t>{32, 16, 8, 4, 2, 1}));
  for (std::size_t l = 1; l < pyr.levels.size(); ++l) {
    EXPECT_EQ(pyr.levels[l].frames_per_step, 2 * pyr.levels[l - 1].frames_per_step);
  }
}

TEST(Pyramid, OddLengthsUseCeilingHalving) {
  Model<double> model(small_config());
  Tape<double> tape;
  BoundParameters<double> p(tape, model.parameters(), false);
  auto pyr = model.build_pyramid(p, tape.constant(random_sequence(23, 6, 2).values), 1.0, 0.0);
  std::size_t prev = 23;
  for (std::size_t l = 1; l < pyr.levels.size(); ++l) {
    EXPECT_EQ(pyr.levels[l].features.value().dim(0), (prev + 1) / 2);
    prev = pyr.levels[l].features.value().dim(0);
  }
}

TEST(Pyramid, SingleLevelAndTooShort) {
  ModelConfig cfg = small_config();
  cfg.num_levels = 1;
  Model<double> one(cfg);
  Tape<double> tape;
  BoundParameters<double> p1(tape, one.parameters(), false);
  auto pyr = one.build_pyramid(p1, tape.constant(random_sequence(32, 6, 1).values), 1.0, 0.0);
  ASSERT_EQ(pyr.levels.size(), 1u);
  EXPECT_EQ(pyr.levels[0].features.value().dim(0), 32u);

  Model<double> four(small_config());
  BoundParameters<double> p4(tape, four.parameters(), false);
  EXPECT_THROW(four.build_pyramid(p4, tape.constant(random_sequence(7, 6, 1).values), 1.0, 0.0),
               ConfigError);
}

TEST(CoarseDecode, SubstitutionAndWidthClamp) {
  const auto p = coarse_interval(6, 2, 4, 1.0);
  EXPECT_EQ(p.start, 4);
  EXPECT_EQ(p.end, 10);
  const auto z = coarse_interval(6, 0, 0, 1.0);
  EXPECT_DOUBLE_EQ(z.width(), 1.0);
  EXPECT_DOUBLE_EQ(0.5 * (z.start + z.end), 6.0);
  // Width equals the sum of distances for non-degenerate proposals.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 50);
  for (int i = 0; i < 200; ++i) {
    const double t = u(rng), ds = u(rng) + 1, de = u(rng);
    const auto iv = coarse_interval(t, ds, de, 1.0);
    EXPECT_NEAR(iv.end - iv.start, ds + de, 1e-12);
  }
}

TEST(CoarsePrediction, ProposalCountAndAnchors) {
  Model<double> model(small_config());
  Tape<double> tape;
  BoundParameters<double> p(tape, model.parameters(), false);
  auto fwd = model.forward(tape, p, random_sequence(64, 6, 3));
  const std::vector<std::size_t> expected = {64, 32, 16, 8};
  ASSERT_EQ(fwd.levels.size(), expected.size());
  for (std::size_t l = 0; l < fwd.levels.size(); ++l) {
    EXPECT_EQ(fwd.levels[l].coarse.proposals.size(), expected[l]);
    for (const auto& prop : fwd.levels[l].coarse.proposals) {
      EXPECT_GE(prop.end - prop.start, model.config().min_width - 1e-12);
      EXPECT_LE(prop.start, prop.anchor + 1e-12);
      EXPECT_GE(prop.end, prop.anchor - 1e-12);
    }
  }
  for (std::size_t l = 0; l + 1 < fwd.levels.size(); ++l) {
    const auto& fine = fwd.levels[l].coarse.proposals;
    const auto& coarse = fwd.levels[l + 1].coarse.proposals;
    for (std::size_t i = 0; i < fine.size(); i += 2) EXPECT_EQ(fine[i].anchor, coarse[i / 2].anchor);
  }
}

TEST(BoundaryRegions, Examples) {
  const auto r = boundary_regions({10, 20}, 4, 10);
  EXPECT_DOUBLE_EQ(r.start_region.start, 7.5);
  EXPECT_DOUBLE_EQ(r.start_region.end, 11);
  EXPECT_DOUBLE_EQ(r.end_region.start, 19);
  EXPECT_DOUBLE_EQ(r.end_region.end, 22.5);
  const auto s = boundary_regions({10, 20}, 5, 5);
  EXPECT_DOUBLE_EQ(10 - s.start_region.start, s.start_region.end - 10);
  EXPECT_DOUBLE_EQ(20 - s.end_region.start, s.end_region.end - 20);
  EXPECT_THROW(boundary_regions({0, 1}, 0, 1), ConfigError);
  EXPECT_THROW(boundary_regions({0, 1}, 4, -1), ConfigError);
}

TEST(BoundaryRegions, PooledThroughIndexConversion) {
  // Proposal [4, 8] at 2 frames per row: start region [3, 4.4] frames maps to
  // rows [1.5, 2.2], i.e. integer rows 1..3.
  Tape<double> tape;
  auto column = tape.constant(Tensor<double>::column({0.3, 0.1, 0.9, 0.4, 2.0}));
  const auto regions = boundary_regions({4, 8}, 4, 10);
  const auto rows = to_index_region(regions.start_region, 0.0, 2.0);
  EXPECT_DOUBLE_EQ(rows.lo, 1.5);
  EXPECT_DOUBLE_EQ(rows.hi, 2.2);
  EXPECT_EQ(region_max_pool(column, rows).value().item(), 0.9);
}

TEST(FrameFeature, UpsampledToBaseResolution) {
  ModelConfig cfg = small_config();
  cfg.base_stride = 4;
  cfg.num_levels = 3;
  Model<double> model(cfg);
  Tape<double> tape;
  BoundParameters<double> p(tape, model.parameters(), false);
  auto fwd = model.forward(tape, p, random_sequence(128, 6, 5, 1.0));
  EXPECT_EQ(fwd.levels[0].length(), 32u);
  EXPECT_EQ(fwd.levels[0].frames_per_step, 4.0);
  EXPECT_EQ(fwd.frame.features.value().dim(0), 128u);
  EXPECT_EQ(fwd.frame.frames_per_step, 1.0);
  auto frame_only = model.forward_frame(tape, p, random_sequence(128, 6, 5, 1.0));
  EXPECT_EQ(frame_only.loc_start.value(), fwd.frame.loc_start.value());
}

TEST(Refinement, OneOutputPerProposalForEveryPoolingKind) {
  std::vector<Shape> reference;
  for (auto kind : {PoolKind::kMax, PoolKind::kMean, PoolKind::kConv, PoolKind::kStack}) {
    Model<double> model(small_config(kind));
    Tape<double> tape;
    BoundParameters<double> p(tape, model.parameters(), false);
    auto fwd = model.forward(tape, p, random_sequence(40, 6, 6));
    std::vector<Shape> shapes;
    for (const auto& lvl : fwd.levels) {
      EXPECT_EQ(lvl.refinements().size(), lvl.coarse.proposals.size());
      shapes.push_back(lvl.refined.offsets.shape());
      shapes.push_back(lvl.refined.logits.shape());
      shapes.push_back(lvl.refined.quality_logits.shape());
    }
    if (reference.empty()) reference = shapes;
    EXPECT_EQ(shapes, reference);
  }
}

TEST(Model, ForwardBackwardSmoke) {
  for (auto kind : {PoolKind::kMax, PoolKind::kConv}) {
    Model<double> model(small_config(kind));
    Tape<double> tape;
    BoundParameters<double> p(tape, model.parameters(), true);
    auto seq = random_sequence(48, 6, 7);
    auto fwd = model.forward(tape, p, seq);
    Annotation ann{{{20, 60, 1}, {100, 150, 3}}};
    auto loss = detection_loss(tape, fwd, ann, LossConfig{});
    EXPECT_TRUE(std::isfinite(loss.report.total));
    EXPECT_GT(loss.report.num_coarse, 0u);
    tape.backward(loss.total);
    for (const auto& [name, g] : p.gradients())
      for (auto v : g.values()) ASSERT_TRUE(std::isfinite(v)) << name;
    for (const auto& lvl : fwd.levels)
      for (const auto& r : lvl.refinements()) {
        EXPECT_GT(r.quality(), 0.0);
        EXPECT_LT(r.quality(), 1.0);
      }
  }
}

TEST(Model, DeterministicInitialization) {
  Model<double> a(small_config()), b(small_config());
  EXPECT_EQ(a.parameters().entries(), b.parameters().entries());
  ModelConfig other = small_config();
  other.init_seed = 18;
  Model<double> c(other);
  EXPECT_NE(a.parameters().entries(), c.parameters().entries());
}

TEST(Checkpoint, RoundTripAndMismatch) {
  const auto dir = std::filesystem::temp_directory_path() / "afsd_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "model.bin").string();
  Model<double> a(small_config());
  save_checkpoint(a.parameters(), path);
  ModelConfig cfg = small_config();
  cfg.init_seed = 99;
  Model<double> b(cfg);
  load_checkpoint(b.parameters(), path);
  EXPECT_EQ(a.parameters().entries(), b.parameters().entries());

  ModelConfig wide = small_config();
  wide.channels = 16;
  Model<double> c(wide);
  EXPECT_THROW(load_checkpoint(c.parameters(), path), FormatError);
  EXPECT_THROW(load_checkpoint(b.parameters(), (dir / "missing.bin").string()), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(ModelConfig, Validation) {
  ModelConfig cfg = small_config();
  cfg.channels = 10;
  EXPECT_THROW(Model<double>{cfg}, ConfigError);
  cfg = small_config();
  cfg.base_stride = 3;
  EXPECT_THROW(Model<double>{cfg}, ConfigError);
}

TEST(ComposedHead, GradientsMatchFiniteDifferences) {
  // Smaller than the acceptance clip; every parameter coordinate is probed.
  const auto r = check_composed_head(3, PoolKind::kMax, 16, 4);
  EXPECT_GT(r.checked, 1000u);
  EXPECT_LT(r.max_rel_error, 1e-4) << "input " << r.worst_input << " index " << r.worst_index;
}

}  // namespace
}  // namespace afsd
