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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "afsd/kernel_checks.hpp"
#include "afsd/losses.hpp"
#include "oracles.hpp"

namespace afsd {
namespace {

using oracle::brute_force_assign;
using oracle::brute_region_max;
using oracle::proposal_at;


TEST(Tiou, Examples) {
  EXPECT_DOUBLE_EQ(tiou({2, 9}, {2, 9}), 1.0);
  EXPECT_DOUBLE_EQ(tiou({0, 10}, {5, 15}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(tiou({0, 1}, {2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(tiou({4, 4}, {4, 4}), 0.0);
  EXPECT_THROW(tiou({3, 1}, {0, 1}), ArgumentError);
}

TEST(Assign, ContainmentExample) {
  Annotation ann{{{3, 7, 2}}};
  std::vector<CoarseProposal> props;
  for (double t : {2.0, 4.0, 6.0, 8.0}) props.push_back(proposal_at(t, t - 1, t + 1));
  const auto r = assign(props, ann);
  EXPECT_FALSE(r.coarse[0]);
  EXPECT_TRUE(r.coarse[1]);
  EXPECT_TRUE(r.coarse[2]);
  EXPECT_FALSE(r.coarse[3]);
  EXPECT_EQ(r.num_coarse, 2u);
  EXPECT_EQ(r.coarse[1]->label, 2);
}

TEST(Assign, ExactProposalIsFixedPoint) {
  Annotation ann{{{10, 30, 1}}};
  std::vector<CoarseProposal> props = {proposal_at(20, 10, 30)};
  const auto r = assign(props, ann);
  ASSERT_TRUE(r.refined[0]);
  EXPECT_EQ(r.refined[0]->offsets.d_start, 0.0);
  EXPECT_EQ(r.refined[0]->offsets.d_end, 0.0);
  EXPECT_EQ(r.refined[0]->coarse_tiou, 1.0);
}

TEST(Assign, TiesGoToNarrowestInstance) {
  Annotation ann{{{0, 40, 1}, {10, 20, 2}, {12, 30, 3}}};
  std::vector<CoarseProposal> props = {proposal_at(15, 10, 20), proposal_at(25, 20, 30)};
  const auto r = assign(props, ann);
  EXPECT_EQ(r.coarse[0]->gt, 1u);
  EXPECT_EQ(r.coarse[1]->gt, 2u);
}

// Independent oracle: enumerate containing instances, sort by width then
// index, and recompute tIoU from scratch.
TEST(Assign, MatchesBruteForceOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> count(0, 8), gts(0, 3), grid(0, 40), label(1, 4);
  for (int trial = 0; trial < 2000; ++trial) {
    Annotation ann;
    const int m = gts(rng);
    for (int j = 0; j < m; ++j) {
      int a = grid(rng), b = grid(rng);
      if (a == b) ++b;
      ann.instances.push_back({double(std::min(a, b)), double(std::max(a, b)), label(rng)});
    }
    std::vector<CoarseProposal> props;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      const double t = grid(rng);
      props.push_back(proposal_at(t, t - grid(rng) / 4.0 - 0.5, t + grid(rng) / 4.0));
    }
    const auto got = assign(props, ann);
    const auto want = brute_force_assign(props, ann);
    ASSERT_EQ(got.num_coarse, want.num_coarse);
    ASSERT_EQ(got.num_refined, want.num_refined);
    for (std::size_t i = 0; i < props.size(); ++i) {
      ASSERT_EQ(got.coarse[i].has_value(), want.coarse[i].has_value());
      ASSERT_EQ(got.refined[i].has_value(), want.refined[i].has_value());
      if (got.coarse[i]) EXPECT_EQ(got.coarse[i]->gt, want.coarse[i]->gt);
      if (got.refined[i]) {
        EXPECT_NEAR(got.refined[i]->offsets.d_start, want.refined[i]->offsets.d_start, 1e-12);
        EXPECT_NEAR(got.refined[i]->offsets.d_end, want.refined[i]->offsets.d_end, 1e-12);
        EXPECT_NEAR(got.refined[i]->coarse_tiou, want.refined[i]->coarse_tiou, 1e-12);
      }
    }
  }
}

TEST(OffsetLabels, RoundTripIsExact) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-500, 500), w(0.5, 300);
  for (int i = 0; i < 10000; ++i) {
    const double s = u(rng), gs = u(rng);
    const Interval coarse{s, s + w(rng)}, gt{gs, gs + w(rng)};
    const auto d = offset_labels(coarse, gt);
    const auto back = apply_offsets(coarse, d.d_start, d.d_end);
    const double scale = std::max({1.0, std::abs(gt.start), std::abs(gt.end)});
    EXPECT_NEAR(back.start, gt.start, 4e-15 * scale * 8);
    EXPECT_NEAR(back.end, gt.end, 4e-15 * scale * 8);
  }
  EXPECT_THROW(offset_labels({3, 3}, {1, 2}), ArgumentError);
}

TEST(RefinedDecode, Examples) {
  const auto r = apply_offsets({4, 10}, 0.5, -0.5);
  EXPECT_DOUBLE_EQ(r.start, 5.5);
  EXPECT_DOUBLE_EQ(r.end, 8.5);
  const auto id = apply_offsets({4, 10}, 0, 0);
  EXPECT_EQ(id.start, 4);
  EXPECT_EQ(id.end, 10);
}

TEST(FocalLoss, ClosedForm) {
  EXPECT_NEAR(focal_term(0.5, 0.25, 2), 0.25 * 0.25 * std::log(2.0), 1e-15);
  EXPECT_NEAR(0.25 * 0.25 * std::log(2.0), 0.0433, 5e-5);
  EXPECT_LT(focal_term(1 - 1e-9, 0.25, 2), 1e-20);

  Tape<double> tape;
  auto one = tape.constant(Tensor<double>::matrix({{0.0, 0.0}}));
  EXPECT_NEAR(focal_cls_loss(one, {1}, 1, 0.25, 2.0).value().item(), focal_term(0.5, 0.25, 2), 1e-15);
  auto two = tape.constant(Tensor<double>::matrix({{0.0, 0.0}, {0.0, 0.0}}));
  EXPECT_NEAR(focal_cls_loss(two, {1, 1}, 2, 0.25, 2.0).value().item(), focal_term(0.5, 0.25, 2), 1e-15);
  EXPECT_EQ(focal_cls_loss(two, {0, 0}, 0, 0.25, 2.0).value().item(), 0.0);
}

TEST(FocalLoss, MatchesClosedFormOnRandomLogits) {
  std::mt19937_64 rng(11);
  Tape<double> tape;
  auto x = random_tensor({6, 4}, rng, 2.0);
  std::vector<int> y = {0, 1, 2, 3, 0, 2};
  const double got = softmax_focal_loss(tape.constant(x), y, 0.25, 2.0).value().item();
  double want = 0;
  for (std::size_t n = 0; n < 6; ++n) {
    double z = 0;
    for (std::size_t k = 0; k < 4; ++k) z += std::exp(x(n, k));
    want += focal_term(std::exp(x(n, static_cast<std::size_t>(y[n]))) / z, 0.25, 2.0);
  }
  EXPECT_NEAR(got, want, 1e-12);
}

TEST(LocLoss, Examples) {
  Tape<double> tape;
  // Coarse [0, 10] against ground truth [5, 15], both anchored at 5.
  auto d = tape.constant(Tensor<double>::matrix({{5, 5}}));
  EXPECT_NEAR(anchored_iou_loss(d, Tensor<double>::matrix({{0, 10}})).value().item(), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(anchored_iou_loss(d, Tensor<double>::matrix({{5, 5}})).value().item(), 0.0, 1e-15);
  auto off = tape.constant(Tensor<double>::matrix({{0.2, -0.1}}));
  EXPECT_NEAR(l1_loss(off, Tensor<double>::matrix({{0, 0}})).value().item(), 0.3, 1e-15);
}

TEST(QualityLoss, Examples) {
  Tape<double> tape;
  auto half = tape.constant(Tensor<double>::column({0.5}));
  EXPECT_NEAR(binary_cross_entropy(half, Tensor<double>::column({1.0})).value().item(), std::log(2.0), 1e-5);
  auto zero_logit = tape.constant(Tensor<double>::column({0.0}));
  EXPECT_NEAR(bce_with_logits(zero_logit, Tensor<double>::column({1.0})).value().item(), std::log(2.0), 1e-12);
  // BCE against a fractional target is minimized when the prediction equals it.
  const double target = 0.37;
  auto at = [&](double p) {
    return binary_cross_entropy(tape.constant(Tensor<double>::column({p})),
                                Tensor<double>::column({target})).value().item();
  };
  EXPECT_LT(at(target), at(target + 0.01));
  EXPECT_LT(at(target), at(target - 0.01));
}

TEST(Centerness, OneDimensional) {
  EXPECT_DOUBLE_EQ(centerness(15, {10, 20}), 1.0);
  EXPECT_DOUBLE_EQ(centerness(12, {10, 20}), 0.25);
  EXPECT_DOUBLE_EQ(centerness(10, {10, 20}), 0.0);
  EXPECT_DOUBLE_EQ(centerness(25, {10, 20}), 0.0);
}

ModelConfig loss_model_config() {
  ModelConfig cfg;
  cfg.in_channels = 5;
  cfg.channels = 8;
  cfg.num_levels = 3;
  cfg.gn_groups = 2;
  cfg.num_classes = 2;
  cfg.init_seed = 3;
  return cfg;
}

TEST(DetectionLoss, TotalIsWeightedSum) {
  Model<double> model(loss_model_config());
  std::mt19937_64 rng(5);
  FeatureSequence seq{random_tensor({32, 5}, rng), 2.0, 0.0};
  Annotation ann{{{6, 30, 1}, {34, 60, 2}}};
  for (double lambda : {10.0, 1.0, 0.0}) {
    for (double gamma : {1.0, 0.0}) {
      Tape<double> tape;
      BoundParameters<double> p(tape, model.parameters(), false);
      auto fwd = model.forward(tape, p, seq);
      LossConfig cfg;
      cfg.lambda = lambda;
      cfg.gamma = gamma;
      const auto r = detection_loss(tape, fwd, ann, cfg).report;
      EXPECT_NEAR(r.total, r.cls_coarse + lambda * r.loc_coarse + r.cls_refined +
                               lambda * r.loc_refined + gamma * r.quality, 1e-12);
      for (double v : {r.cls_coarse, r.loc_coarse, r.cls_refined, r.loc_refined, r.quality})
        EXPECT_GE(v, 0.0);
      if (lambda == 0 && gamma == 0) EXPECT_NEAR(r.total, r.cls_coarse + r.cls_refined, 1e-12);
    }
  }
}

TEST(DetectionLoss, NoInstancesGivesZeroTerms) {
  Model<double> model(loss_model_config());
  std::mt19937_64 rng(6);
  Tape<double> tape;
  BoundParameters<double> p(tape, model.parameters(), true);
  auto fwd = model.forward(tape, p, FeatureSequence{random_tensor({16, 5}, rng), 1.0, 0.0});
  const auto loss = detection_loss(tape, fwd, Annotation{}, LossConfig{});
  EXPECT_EQ(loss.report.num_coarse, 0u);
  EXPECT_EQ(loss.report.total, 0.0);
  tape.backward(loss.total);
}

TEST(DetectionLoss, QualityTargetVariantsDiffer) {
  Model<double> model(loss_model_config());
  std::mt19937_64 rng(8);
  FeatureSequence seq{random_tensor({32, 5}, rng), 2.0, 0.0};
  Annotation ann{{{16, 32, 1}}};  // matches the initial coarse width at the top level
  auto run = [&](QualityTarget q) {
    Tape<double> tape;
    BoundParameters<double> p(tape, model.parameters(), false);
    LossConfig cfg;
    cfg.quality = q;
    return detection_loss(tape, model.forward(tape, p, seq), ann, cfg).report;
  };
  const auto a = run(QualityTarget::kTiou), b = run(QualityTarget::kCenterness), c = run(QualityTarget::kNone);
  ASSERT_GT(a.num_refined, 0u);
  EXPECT_NE(a.quality, b.quality);
  EXPECT_EQ(c.quality, 0.0);
  EXPECT_NEAR(c.total, c.cls_coarse + 10 * c.loc_coarse + c.cls_refined + 10 * c.loc_refined, 1e-12);
}

TEST(BoundaryIndicator, Examples) {
  const auto none = boundary_indicator(30, Annotation{}, 1.0, 0.0, 2, true);
  EXPECT_TRUE(std::all_of(none.begin(), none.end(), [](double v) { return v == 0.0; }));
  Annotation ann{{{10, 20, 1}}};
  const auto g = boundary_indicator(30, ann, 1.0, 0.0, 2, true);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(g[i], (i >= 8 && i <= 12) ? 1.0 : 0.0) << i;
  const auto e = boundary_indicator(30, ann, 1.0, 0.0, 2, false);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(e[i], (i >= 18 && i <= 22) ? 1.0 : 0.0) << i;
  EXPECT_EQ(boundary_indicator(30, ann, 1.0, 0.0, 2, true), g);
}

TEST(ActivationGuidedLoss, NormalizationVariants) {
  Tape<double> tape;
  // Minmax rescales each channel to [0, 1] over time.
  auto x = tape.constant(Tensor<double>::matrix({{1, 10}, {3, 20}, {2, 30}}));
  const auto m = minmax_normalize(x).value();
  EXPECT_DOUBLE_EQ(m(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(m(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(m(2, 0), 0.5);
  EXPECT_DOUBLE_EQ(m(1, 1), 0.5);

  std::mt19937_64 rng(9);
  auto f = tape.constant(relu(tape.constant(random_tensor({40, 6}, rng))).value());
  Annotation ann{{{10, 20, 1}}};
  for (auto norm : {ActNorm::kTanh, ActNorm::kClip01, ActNorm::kMinMax}) {
    const auto conf = boundary_confidence(f, norm).value();
    for (auto v : conf.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    const double loss = activation_guided_loss(f, f, ann, 1.0, 0.0, 2, norm).value().item();
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_GT(loss, 0.0);
  }
}

TEST(ActivationGuidedLoss, PerfectConfidenceIsNearZero) {
  Annotation ann{{{10, 20, 1}}};
  Tape<double> tape;
  Tensor<double> fs({30, 2}), fe({30, 2});
  const auto gs = boundary_indicator(30, ann, 1.0, 0.0, 2, true);
  const auto ge = boundary_indicator(30, ann, 1.0, 0.0, 2, false);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      fs(i, c) = gs[i];
      fe(i, c) = ge[i];
    }
  const double loss = activation_guided_loss(tape.constant(fs), tape.constant(fe), ann, 1.0, 0.0, 2,
                                             ActNorm::kClip01).value().item();
  EXPECT_LT(loss, 1e-4);
}

FeatureSequence ramp_sequence(std::size_t T) {
  Tensor<double> v({T, 2});
  for (std::size_t t = 0; t < T; ++t) {
    v(t, 0) = static_cast<double>(t);
    v(t, 1) = -static_cast<double>(t);
  }
  return {std::move(v), 1.0, 0.0};
}

TEST(RearrangeClip, IneligibleWhenOnlyOneAction) {
  std::mt19937_64 rng(1);
  Annotation ann{{{10, 40, 1}}};
  EXPECT_FALSE(rearrange_clip(ramp_sequence(100), ann, rng));
  EXPECT_FALSE(rearrange_clip(ramp_sequence(100), Annotation{}, rng));
}

TEST(RearrangeClip, SplitRangeAndLengthPreserved) {
  Annotation ann{{{5, 15, 1}, {40, 65, 2}}};
  std::set<double> splits;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    const auto out = rearrange_clip(ramp_sequence(100), ann, rng);
    ASSERT_TRUE(out);
    const double split = out->first_fragment.end;
    EXPECT_GE(split, 50);
    EXPECT_LE(split, 55);
    splits.insert(split);
    EXPECT_EQ(out->first_fragment.start, 40);
    EXPECT_EQ(out->background.width(), 10);
    EXPECT_DOUBLE_EQ(out->first_fragment.width() + out->background.width() + out->second_fragment.width(),
                     25 + 10);
    EXPECT_GE(out->first_fragment.width(), 10);
    EXPECT_GE(out->second_fragment.width(), 10);
    EXPECT_EQ(out->features.length(), 110u);
    // Fragments keep their source rows; the inserted rows are one contiguous
    // background run.
    const auto& v = out->features.values;
    const auto s = static_cast<std::size_t>(split);
    for (std::size_t t = 0; t < s; ++t) ASSERT_EQ(v(t, 0), double(t));
    for (std::size_t t = s + 10; t < 110; ++t) ASSERT_EQ(v(t, 0), double(t - 10));
    const double bg0 = v(s, 0);
    for (std::size_t k = 0; k < 10; ++k) ASSERT_EQ(v(s + k, 0), bg0 + double(k));
    EXPECT_TRUE(bg0 + 10 <= 5 || (bg0 >= 15 && bg0 + 10 <= 40) || bg0 >= 65);
    ASSERT_EQ(out->annotation.instances.size(), 3u);
  }
  EXPECT_GT(splits.size(), 3u);
}

TEST(RearrangeClip, NeedsLongEnoughBackground) {
  std::mt19937_64 rng(3);
  // Shortest action 10, but gaps are only 5 steps long.
  Annotation ann{{{5, 15, 1}, {20, 50, 1}}};
  EXPECT_FALSE(rearrange_clip(ramp_sequence(55), ann, rng));
}

TEST(TripletHinge, ClosedForms) {
  EXPECT_EQ(triplet_hinge(0, 0), 1.0);
  EXPECT_EQ(triplet_hinge(0, 2), 0.0);
  EXPECT_EQ(triplet_hinge(1, 0.5), 1.5);
}

TEST(BoundaryContrastiveLoss, MatchesPooledClosedForm) {
  Annotation ann{{{5, 15, 1}, {40, 70, 2}}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto clip = rearrange_clip(ramp_sequence(100), ann, rng);
    ASSERT_TRUE(clip);
    const std::size_t T = clip->features.length();
    const auto fs = random_tensor({T, 3}, rng), fe = random_tensor({T, 3}, rng);
    Tape<double> tape;
    const double got = boundary_contrastive_loss(tape.constant(fs), tape.constant(fe), *clip, 1.0, 0.0,
                                                 4.0, 100.0).value().item();
    auto pooled = [&](const Tensor<double>& f, const Interval& iv) {
      const Region r = to_index_region(iv, 0.0, 1.0);
      std::vector<double> out;
      for (std::size_t c = 0; c < 3; ++c) out.push_back(brute_region_max(f, r, c));
      return out;
    };
    auto sq = [](const std::vector<double>& a, const std::vector<double>& b) {
      double s = 0;
      for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
      return s;
    };
    const auto a = pooled(fe, boundary_regions(clip->first_fragment, 4, 100).end_region);
    const auto p = pooled(fs, boundary_regions(clip->second_fragment, 4, 100).start_region);
    const auto rb = boundary_regions(clip->background, 4, 100);
    const auto n1 = pooled(fs, rb.start_region), n2 = pooled(fe, rb.end_region);
    const double want = 0.5 * (triplet_hinge(sq(a, p), sq(a, n1)) + triplet_hinge(sq(a, p), sq(a, n2)));
    EXPECT_NEAR(got, want, 1e-12);
  }
}

TEST(BoundaryContrastiveLoss, ConstantFeaturesGiveMargin) {
  Annotation ann{{{5, 15, 1}, {40, 70, 2}}};
  std::mt19937_64 rng(4);
  auto clip = rearrange_clip(ramp_sequence(100), ann, rng);
  ASSERT_TRUE(clip);
  Tensor<double> c({clip->features.length(), 3});
  for (auto& v : c.values()) v = 0.7;
  Tape<double> tape;
  EXPECT_DOUBLE_EQ(boundary_contrastive_loss(tape.constant(c), tape.constant(c), *clip, 1.0, 0.0, 4, 100)
                       .value().item(), 1.0);
  EXPECT_DOUBLE_EQ(boundary_contrastive_loss(tape.constant(c), tape.constant(c), *clip, 1.0, 0.0, 4, 100, true)
                       .value().item(), 1.0);
}

}  // namespace
}  // namespace afsd
