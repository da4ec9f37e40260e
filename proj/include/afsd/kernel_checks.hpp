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
#pragma once

// Finite-difference checks for every differentiable kernel, shared by the
// test suite and the `gradcheck` command.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "afsd/gradcheck.hpp"
#include "afsd/ops.hpp"

namespace afsd {

struct NamedGradCheck {
  std::string name;
  GradCheckReport report;
};

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng,
                                    double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = normal(rng);
  return t;
}

// Composite exercising every kernel once on a T x C input.
inline Var<double> kernel_composite(Tape<double>&, std::span<const Var<double>> in) {
  const auto& x = in[0];
  const auto& w = in[1];
  const auto& b = in[2];
  const auto& gamma = in[3];
  const auto& beta = in[4];
  const std::size_t T = x.value().dim(0);
  const double top = static_cast<double>(T - 1);

  auto h = conv1d(x, w, b, 1, 1);
  h = relu(group_norm(h, 2, gamma, beta, 1e-5));
  auto up = linear_upsample(h, 2);
  auto down = conv1d(up, w, b, 2, 1);
  auto fused = add(down, h);
  std::vector<Region> regions = {{0.3, 4.6}, {top * 0.5, top * 0.9}, {2.0, 2.0}};
  auto pm = region_max_pool(fused, regions);
  auto pa = region_mean_pool(fused, regions);
  auto ps = region_stack_pool(fused, regions);
  auto pooled = concat_cols<double>({pm, pa});
  auto tanh_part = mean(tanh(pooled));
  auto sig_part = sum(sigmoid(ps));
  auto g = channel_mean(fused);
  auto norm = minmax_normalize(g);
  auto clipped = clamp(affine(g, 0.5, 0.5), 0.0, 1.0);
  auto bce = binary_cross_entropy(sigmoid(affine(norm, 2.0, -1.0)),
                                  Tensor<double>(norm.shape(), 0.3));
  auto sq = sum(square(sub(gather_rows(fused, {0, 2}), gather_rows(fused, {1, 3}))));
  std::vector<Var<double>> terms = {tanh_part, sig_part, affine(bce, 0.1),
                                    affine(sq, 0.05), mean(clipped)};
  return add_all<double>(terms);
}

// Runs the per-kernel and composite checks with inputs drawn from `seed`.
inline std::vector<NamedGradCheck> run_kernel_checks(std::uint64_t seed,
                                                     std::size_t T = 16,
                                                     std::size_t C = 8) {
  std::mt19937_64 rng(seed);
  std::vector<NamedGradCheck> out;
  auto check = [&](std::string name, ScalarFunction f, std::vector<Tensor<double>> xs) {
    out.push_back({std::move(name), check_gradients(f, std::move(xs))});
  };
  // Random projection so every output coordinate receives a distinct weight.
  auto projector = [](Tape<double>& tape, const Var<double>& y, std::uint64_t s) {
    std::mt19937_64 r(s);
    auto p = tape.constant(random_tensor(y.shape(), r));
    return sum(mul(y, p));
  };

  check("conv1d", [&](Tape<double>& t, std::span<const Var<double>> v) {
          return projector(t, conv1d(v[0], v[1], v[2], 2, 1), 11);
        },
        {random_tensor({T, C}, rng), random_tensor({3, C, 4}, rng),
         random_tensor({4}, rng)});
  check("group_norm", [&](Tape<double>& t, std::span<const Var<double>> v) {
          return projector(t, group_norm(v[0], 4, v[1], v[2], 1e-5), 12);
        },
        {random_tensor({T, C}, rng), random_tensor({C}, rng), random_tensor({C}, rng)});
  for (auto [kind, name] : {std::pair{Activation::kRelu, "relu"},
                            std::pair{Activation::kTanh, "tanh"},
                            std::pair{Activation::kSigmoid, "sigmoid"}}) {
    check(name, [&, kind](Tape<double>& t, std::span<const Var<double>> v) {
            return projector(t, pointwise(v[0], kind), 13);
          },
          {random_tensor({T, C}, rng)});
  }
  const std::vector<Region> regions = {{0.0, 3.5}, {2.2, 9.7}, {5.0, 5.0}, {-2.0, 30.0}};
  check("region_max_pool", [&](Tape<double>& t, std::span<const Var<double>> v) {
          return projector(t, region_max_pool(v[0], std::span<const Region>(regions)), 14);
        },
        {random_tensor({T, C}, rng)});
  check("region_mean_pool", [&](Tape<double>& t, std::span<const Var<double>> v) {
          return projector(t, region_mean_pool(v[0], std::span<const Region>(regions)), 15);
        },
        {random_tensor({T, C}, rng)});
  check("region_stack_pool", [&](Tape<double>& t, std::span<const Var<double>> v) {
          return projector(t, region_stack_pool(v[0], std::span<const Region>(regions)), 16);
        },
        {random_tensor({T, C}, rng)});
  check("region_conv_pool", [&](Tape<double>& t, std::span<const Var<double>> v) {
          return projector(
              t, region_conv_pool(v[0], std::span<const Region>(regions), v[1], v[2]), 17);
        },
        {random_tensor({T, C}, rng), random_tensor({1, 3 * C, 4}, rng),
         random_tensor({4}, rng)});
  check("linear_upsample", [&](Tape<double>& t, std::span<const Var<double>> v) {
          return projector(t, linear_upsample(v[0], 4), 18);
        },
        {random_tensor({T, C}, rng)});
  check("channel_mean+minmax", [&](Tape<double>& t, std::span<const Var<double>> v) {
          return projector(t, minmax_normalize(channel_mean(v[0])), 19);
        },
        {random_tensor({T, C}, rng)});
  check("minmax_normalize", [&](Tape<double>& t, std::span<const Var<double>> v) {
          return projector(t, minmax_normalize(v[0]), 21);
        },
        {random_tensor({T, C}, rng)});
  check("clamp", [&](Tape<double>& t, std::span<const Var<double>> v) {
          return projector(t, clamp(v[0], -0.5, 0.5), 20);
        },
        {random_tensor({T, C}, rng)});
  {
    std::vector<int> targets(T);
    for (std::size_t i = 0; i < T; ++i) targets[i] = static_cast<int>(i % 5);
    check("softmax_focal_loss", [&, targets](Tape<double>&, std::span<const Var<double>> v) {
            return softmax_focal_loss(v[0], targets, 0.25, 2.0);
          },
          {random_tensor({T, 5}, rng, 2.0)});
  }
  {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Tensor<double> target({T, 1});
    for (auto& v : target.values()) v = unit(rng);
    check("bce_with_logits", [&, target](Tape<double>&, std::span<const Var<double>> v) {
            return bce_with_logits(v[0], target);
          },
          {random_tensor({T, 1}, rng, 2.0)});
    check("binary_cross_entropy", [&, target](Tape<double>&, std::span<const Var<double>> v) {
            return binary_cross_entropy(sigmoid(v[0]), target);
          },
          {random_tensor({T, 1}, rng)});
    Tensor<double> dist_target({T, 2});
    for (auto& v : dist_target.values()) v = 0.5 + 3.0 * unit(rng);
    Tensor<double> dist({T, 2});
    for (auto& v : dist.values()) v = 0.5 + 3.0 * unit(rng);
    check("anchored_iou_loss", [&, dist_target](Tape<double>&, std::span<const Var<double>> v) {
            return anchored_iou_loss(v[0], dist_target);
          },
          {dist});
    check("l1_loss", [&, dist_target](Tape<double>&, std::span<const Var<double>> v) {
            return l1_loss(v[0], dist_target);
          },
          {dist});
  }
  check("composite", kernel_composite,
        {random_tensor({T, C}, rng), random_tensor({3, C, C}, rng, 0.5),
         random_tensor({C}, rng), random_tensor({C}, rng), random_tensor({C}, rng)});
  return out;
}

}  // namespace afsd
