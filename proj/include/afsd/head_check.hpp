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
// Finite-difference check of the full detector: every parameter of a small
// model, through the pyramid, both prediction stages and the training losses.
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "afsd/gradcheck.hpp"
#include "afsd/kernel_checks.hpp"
#include "afsd/losses.hpp"
#include "afsd/model.hpp"

namespace afsd {

inline ModelConfig head_check_config(std::size_t in_channels, PoolKind pooling) {
  ModelConfig cfg;
  cfg.in_channels = in_channels;
  cfg.channels = 8;
  cfg.num_levels = 3;
  cfg.gn_groups = 2;
  cfg.num_classes = 2;
  cfg.pooling = pooling;
  cfg.init_seed = 5;
  return cfg;
}

// Training targets (assignment, offset labels, tIoU quality targets) depend
// on the current proposals but are constants to the tape, which a
// finite-difference probe would see as a mismatch. The check therefore
// freezes the assignment at the nominal parameters and uses the
// parameter-free centerness quality target.
inline GradCheckReport check_composed_head(std::uint64_t seed, PoolKind pooling = PoolKind::kMax,
                                           std::size_t T = 32, std::size_t C = 16,
                                           GradCheckOptions opts = {}) {
  std::mt19937_64 rng(seed);
  const Model<double> model(head_check_config(C, pooling));
  const FeatureSequence clip{random_tensor({T, C}, rng), 2.0, 0.0};
  const Annotation ann{{{6, 30, 1}, {36, 60, 2}}};
  LossConfig loss_cfg;
  loss_cfg.quality = QualityTarget::kCenterness;

  AssignmentResult frozen;
  {
    Tape<double> tape;
    const BoundParameters<double> p(tape, model.parameters(), false);
    frozen = assign(flatten_proposals(model.forward(tape, p, clip)), ann);
  }

  std::vector<std::string> names;
  std::vector<Tensor<double>> inputs;
  for (const auto& [name, value] : model.parameters().entries()) {
    names.push_back(name);
    inputs.push_back(value);
  }
  const ScalarFunction f = [&](Tape<double>& tape, std::span<const Var<double>> vars) {
    std::map<std::string, Var<double>> bound;
    for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], vars[i]);
    const BoundParameters<double> p(std::move(bound));
    const auto fwd = model.forward(tape, p, clip);
    auto det = detection_loss(tape, fwd, ann, loss_cfg, &frozen).total;
    auto act = activation_guided_loss(fwd.frame.loc_start, fwd.frame.loc_end, ann,
                                      fwd.frame.frames_per_step, fwd.frame.origin_frame, 2.0,
                                      ActNorm::kClip01);
    return add(det, act);
  };
  return check_gradients(f, std::move(inputs), opts);
}

}  // namespace afsd
