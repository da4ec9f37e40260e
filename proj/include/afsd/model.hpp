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

// The detection network: a temporal feature pyramid, anchor-free coarse
// heads shared across levels, and the saliency-based refinement module that
// pools boundary features from each level and from a frame-level feature.

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "afsd/errors.hpp"
#include "afsd/feature_sequence.hpp"
#include "afsd/geometry.hpp"
#include "afsd/ops.hpp"
#include "afsd/parameters.hpp"

namespace afsd {

struct ModelConfig {
  std::size_t in_channels = 0;
  std::size_t channels = 256;
  int num_levels = 6;
  // Base-sequence steps per level-0 step; a power of two.
  int base_stride = 1;
  // Foreground classes; the heads emit num_classes + 1 logits with
  // background at index 0.
  int num_classes = 1;
  int gn_groups = 8;
  double gn_eps = 1e-5;
  PoolKind pooling = PoolKind::kMax;
  double delta_a = 4.0;
  double delta_b = 10.0;
  double min_width = 1.0;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (in_channels < 1) throw ConfigError("model: in_channels must be >= 1");
    if (channels < 1) throw ConfigError("model: channels must be >= 1");
    if (num_levels < 1) throw ConfigError("model: num_levels must be >= 1");
    if (base_stride < 1 || !std::has_single_bit(static_cast<unsigned>(base_stride))) {
      throw ConfigError("model: base_stride must be a power of two");
    }
    if (num_classes < 1) throw ConfigError("model: num_classes must be >= 1");
    if (gn_groups < 1 || channels % static_cast<std::size_t>(gn_groups) != 0) {
      throw ConfigError("model: channels must be divisible by gn_groups");
    }
    if (!(delta_a > 0) || !(delta_b > 0)) throw ConfigError("model: deltas must be positive");
    if (!(min_width > 0)) throw ConfigError("model: min_width must be positive");
  }

  // Shortest base sequence the pyramid accepts.
  std::size_t min_length() const {
    return static_cast<std::size_t>(base_stride) << (num_levels - 1);
  }
};

// First-stage proposal at one pyramid location.
struct CoarseProposal {
  int level = 0;
  std::size_t index = 0;
  double anchor = 0;  // frame time of the location
  double start = 0;
  double end = 0;
  std::vector<double> class_logits;

  Interval interval() const { return {start, end}; }
};

// Second-stage outputs for one proposal.
struct Refinement {
  double d_start = 0;
  double d_end = 0;
  std::vector<double> class_logits;
  double quality_logit = 0;

  double quality() const { return 1.0 / (1.0 + std::exp(-quality_logit)); }
};

// Frame interval expressed in fractional row units of a sequence whose row i
// sits at origin + i * frames_per_step.
inline Region to_index_region(const Interval& frames, double origin, double frames_per_step) {
  return {(frames.start - origin) / frames_per_step, (frames.end - origin) / frames_per_step};
}

template <class Real>
struct PyramidLevel {
  Var<Real> features;        // T_l x C
  double frames_per_step = 1;
  double origin_frame = 0;
};

template <class Real>
struct PyramidFeatures {
  std::vector<PyramidLevel<Real>> levels;
};

template <class Real>
struct CoarseOutput {
  Var<Real> f_loc;
  Var<Real> f_cls;
  Var<Real> distances;  // T_l x 2, (start, end) distances in frames
  Var<Real> logits;     // T_l x (K + 1)
  std::vector<CoarseProposal> proposals;
};

// Frame-resolution feature shared by every proposal of a clip, with its
// start/end-sensitive projections for both branches.
template <class Real>
struct FrameFeatures {
  Var<Real> features;
  double frames_per_step = 1;
  double origin_frame = 0;
  Var<Real> loc_start, loc_end, cls_start, cls_end;
};

template <class Real>
struct RefineOutput {
  Var<Real> offsets;         // T_l x 2
  Var<Real> logits;          // T_l x (K + 1)
  Var<Real> quality_logits;  // T_l x 1
};

template <class Real>
struct LevelPrediction {
  int level = 0;
  double frames_per_step = 1;
  double origin_frame = 0;
  CoarseOutput<Real> coarse;
  RefineOutput<Real> refined;

  std::size_t length() const { return coarse.proposals.size(); }
  std::vector<Refinement> refinements() const;
};

template <class Real>
struct ForwardResult {
  std::vector<LevelPrediction<Real>> levels;
  FrameFeatures<Real> frame;
};

template <class Real>
std::vector<Refinement> LevelPrediction<Real>::refinements() const {
  const auto& off = refined.offsets.value();
  const auto& lg = refined.logits.value();
  const auto& q = refined.quality_logits.value();
  std::vector<Refinement> out(length());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].d_start = static_cast<double>(off(i, 0));
    out[i].d_end = static_cast<double>(off(i, 1));
    out[i].quality_logit = static_cast<double>(q[i]);
    out[i].class_logits.resize(lg.cols());
    for (std::size_t k = 0; k < lg.cols(); ++k) out[i].class_logits[k] = static_cast<double>(lg(i, k));
  }
  return out;
}

template <class Real>
class Model {
 public:
  explicit Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    init_parameters();
  }

  const ModelConfig& config() const { return config_; }
  ParameterStore<Real>& parameters() { return params_; }
  const ParameterStore<Real>& parameters() const { return params_; }

  // Level 0 is the projected base sequence (downsampled by base_stride);
  // each further level halves the length with a stride-2 convolution.
  PyramidFeatures<Real> build_pyramid(const BoundParameters<Real>& p, const Var<Real>& base,
                                      double frames_per_step, double origin) const {
    if (base.value().dim(0) < config_.min_length()) {
      throw ConfigError("build_pyramid: sequence of length " +
                        std::to_string(base.value().dim(0)) + " is shorter than the " +
                        std::to_string(config_.min_length()) + " steps the pyramid needs");
    }
    if (base.value().dim(1) != config_.in_channels) {
      throw DimensionError("build_pyramid: feature channels do not match the model");
    }
    PyramidFeatures<Real> out;
    auto h = conv_block(p, "stem", base, 1);
    double step = frames_per_step;
    for (int s = 1, i = 0; s < config_.base_stride; s *= 2, ++i) {
      h = conv_block(p, "stem.down" + std::to_string(i), h, 2);
      step *= 2;
    }
    out.levels.push_back({h, step, origin});
    for (int l = 1; l < config_.num_levels; ++l) {
      h = conv_block(p, "pyramid." + std::to_string(l), h, 2);
      step *= 2;
      out.levels.push_back({h, step, origin});
    }
    return out;
  }

  // Shared two-branch head. Distances pass through ReLU and are scaled by
  // the level's frame stride; anchor i sits at origin + i * stride.
  CoarseOutput<Real> predict_coarse(const BoundParameters<Real>& p,
                                    const PyramidLevel<Real>& level, int level_index) const {
    CoarseOutput<Real> out;
    out.f_loc = conv_block(p, "branch.loc.1", conv_block(p, "branch.loc.0", level.features, 1), 1);
    out.f_cls = conv_block(p, "branch.cls.1", conv_block(p, "branch.cls.0", level.features, 1), 1);
    auto raw = conv1d(out.f_loc, p["head.loc.w"], p["head.loc.b"], 1, 1);
    out.distances = affine(relu(raw), static_cast<Real>(level.frames_per_step));
    out.logits = conv1d(out.f_cls, p["head.cls.w"], p["head.cls.b"], 1, 1);

    const auto& d = out.distances.value();
    const auto& lg = out.logits.value();
    out.proposals.resize(d.dim(0));
    for (std::size_t i = 0; i < d.dim(0); ++i) {
      auto& prop = out.proposals[i];
      prop.level = level_index;
      prop.index = i;
      prop.anchor = level.origin_frame + static_cast<double>(i) * level.frames_per_step;
      const Interval clamped = coarse_interval(prop.anchor, static_cast<double>(d(i, 0)),
                                               static_cast<double>(d(i, 1)), config_.min_width);
      prop.start = clamped.start;
      prop.end = clamped.end;
      prop.class_logits.resize(lg.cols());
      for (std::size_t k = 0; k < lg.cols(); ++k) prop.class_logits[k] = static_cast<double>(lg(i, k));
    }
    return out;
  }

  // Upsamples level 0 back to base-sequence resolution and refines it with
  // two convolutions.
  FrameFeatures<Real> frame_level_feature(const BoundParameters<Real>& p,
                                          const PyramidLevel<Real>& level0) const {
    FrameFeatures<Real> out;
    auto up = linear_upsample(level0.features, config_.base_stride);
    out.features = conv_block(p, "frame.1", conv_block(p, "frame.0", up, 1), 1);
    out.frames_per_step = level0.frames_per_step / config_.base_stride;
    out.origin_frame = level0.origin_frame;
    out.loc_start = conv_block(p, "refine.loc.frame_start", out.features, 1);
    out.loc_end = conv_block(p, "refine.loc.frame_end", out.features, 1);
    out.cls_start = conv_block(p, "refine.cls.frame_start", out.features, 1);
    out.cls_end = conv_block(p, "refine.cls.frame_end", out.features, 1);
    return out;
  }

  // Boundary-pooled refinement for every proposal of one level.
  RefineOutput<Real> refine(const BoundParameters<Real>& p, const CoarseOutput<Real>& coarse,
                            const PyramidLevel<Real>& level,
                            const FrameFeatures<Real>& frame) const {
    std::vector<Region> level_start, level_end, frame_start, frame_end;
    for (const auto& prop : coarse.proposals) {
      const auto r = boundary_regions(prop.interval(), config_.delta_a, config_.delta_b);
      auto to_level = [&](const Interval& iv) {
        return to_index_region(iv, level.origin_frame, level.frames_per_step);
      };
      auto to_frame = [&](const Interval& iv) {
        return to_index_region(iv, frame.origin_frame, frame.frames_per_step);
      };
      level_start.push_back(to_level(r.start_region));
      level_end.push_back(to_level(r.end_region));
      frame_start.push_back(to_frame(r.start_region));
      frame_end.push_back(to_frame(r.end_region));
    }

    auto branch = [&](const std::string& name, const Var<Real>& f, const Var<Real>& frame_s,
                      const Var<Real>& frame_e) {
      const std::string pre = "refine." + name;
      auto fs = conv_block(p, pre + ".start", f, 1);
      auto fe = conv_block(p, pre + ".end", f, 1);
      std::vector<Var<Real>> parts = {
          f,
          pool(p, pre + ".pool.start", fs, level_start),
          pool(p, pre + ".pool.end", fe, level_end),
          pool(p, pre + ".pool.frame_start", frame_s, frame_start),
          pool(p, pre + ".pool.frame_end", frame_e, frame_end),
      };
      auto cat = concat_cols(std::span<const Var<Real>>(parts));
      return relu(group_norm(conv1d(cat, p[pre + ".reduce.w"], p[pre + ".reduce.b"], 1, 0),
                             config_.gn_groups, p[pre + ".reduce.gamma"],
                             p[pre + ".reduce.beta"], static_cast<Real>(config_.gn_eps)));
    };
    auto loc = branch("loc", coarse.f_loc, frame.loc_start, frame.loc_end);
    auto cls = branch("cls", coarse.f_cls, frame.cls_start, frame.cls_end);

    RefineOutput<Real> out;
    out.offsets = conv1d(loc, p["refine.head.offset.w"], p["refine.head.offset.b"], 1, 1);
    out.quality_logits = conv1d(loc, p["refine.head.quality.w"], p["refine.head.quality.b"], 1, 1);
    out.logits = conv1d(cls, p["refine.head.cls.w"], p["refine.head.cls.b"], 1, 1);
    return out;
  }

  ForwardResult<Real> forward(Tape<Real>& tape, const BoundParameters<Real>& p,
                              const FeatureSequence& seq) const {
    seq.validate();
    auto x = tape.constant(convert(seq.values));
    auto pyramid = build_pyramid(p, x, seq.frames_per_step, seq.origin_frame);
    ForwardResult<Real> out;
    out.frame = frame_level_feature(p, pyramid.levels[0]);
    for (std::size_t l = 0; l < pyramid.levels.size(); ++l) {
      LevelPrediction<Real> pred;
      pred.level = static_cast<int>(l);
      pred.frames_per_step = pyramid.levels[l].frames_per_step;
      pred.origin_frame = pyramid.levels[l].origin_frame;
      pred.coarse = predict_coarse(p, pyramid.levels[l], static_cast<int>(l));
      pred.refined = refine(p, pred.coarse, pyramid.levels[l], out.frame);
      out.levels.push_back(std::move(pred));
    }
    return out;
  }

  // Only the part of the network the frame-level feature depends on.
  FrameFeatures<Real> forward_frame(Tape<Real>& tape, const BoundParameters<Real>& p,
                                    const FeatureSequence& seq) const {
    seq.validate();
    auto x = tape.constant(convert(seq.values));
    if (x.value().dim(0) < static_cast<std::size_t>(config_.base_stride)) {
      throw ConfigError("forward_frame: sequence shorter than base stride");
    }
    auto h = conv_block(p, "stem", x, 1);
    double step = seq.frames_per_step;
    for (int s = 1, i = 0; s < config_.base_stride; s *= 2, ++i) {
      h = conv_block(p, "stem.down" + std::to_string(i), h, 2);
      step *= 2;
    }
    return frame_level_feature(p, PyramidLevel<Real>{h, step, seq.origin_frame});
  }

 private:
  static Tensor<Real> convert(const Tensor<double>& t) {
    if constexpr (std::is_same_v<Real, double>) {
      return t;
    } else {
      Tensor<Real> out(t.shape());
      for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<Real>(t[i]);
      return out;
    }
  }

  Var<Real> conv_block(const BoundParameters<Real>& p, const std::string& name,
                       const Var<Real>& x, int stride) const {
    auto h = conv1d(x, p[name + ".w"], p[name + ".b"], stride, 1);
    return relu(group_norm(h, config_.gn_groups, p[name + ".gamma"], p[name + ".beta"],
                           static_cast<Real>(config_.gn_eps)));
  }

  Var<Real> pool(const BoundParameters<Real>& p, const std::string& name, const Var<Real>& x,
                 const std::vector<Region>& regions) const {
    const std::span<const Region> rs(regions);
    switch (config_.pooling) {
      case PoolKind::kMax: return region_max_pool(x, rs);
      case PoolKind::kMean: return region_mean_pool(x, rs);
      case PoolKind::kStack: return region_stack_pool(x, rs);
      case PoolKind::kConv: return region_conv_pool(x, rs, p[name + ".w"], p[name + ".b"]);
    }
    throw InternalError("unknown pooling kind");
  }

  void add_conv(const std::string& name, std::size_t k, std::size_t cin, std::size_t cout,
                double stddev, double bias = 0.0) {
    std::normal_distribution<double> normal(0.0, stddev);
    Tensor<Real> w({k, cin, cout});
    for (auto& v : w.values()) v = static_cast<Real>(normal(rng_));
    params_.add(name + ".w", std::move(w));
    params_.add(name + ".b", Tensor<Real>({cout}, static_cast<Real>(bias)));
  }

  void add_block(const std::string& name, std::size_t k, std::size_t cin, std::size_t cout) {
    add_conv(name, k, cin, cout, std::sqrt(2.0 / static_cast<double>(k * cin)));
    params_.add(name + ".gamma", Tensor<Real>({cout}, Real(1)));
    params_.add(name + ".beta", Tensor<Real>({cout}, Real(0)));
  }

  void init_parameters() {
    rng_.seed(config_.init_seed);
    const std::size_t C = config_.channels;
    const std::size_t K1 = static_cast<std::size_t>(config_.num_classes) + 1;
    add_block("stem", 3, config_.in_channels, C);
    for (int s = 1, i = 0; s < config_.base_stride; s *= 2, ++i)
      add_block("stem.down" + std::to_string(i), 3, C, C);
    for (int l = 1; l < config_.num_levels; ++l) add_block("pyramid." + std::to_string(l), 3, C, C);
    for (const char* b : {"branch.loc.0", "branch.loc.1", "branch.cls.0", "branch.cls.1"})
      add_block(b, 3, C, C);
    // Distances start near one level step on each side.
    add_conv("head.loc", 3, C, 2, 0.01, 1.0);
    add_conv("head.cls", 3, C, K1, 0.01);
    // Background prior of 0.99 so early training is not dominated by
    // the many easy negatives.
    params_.at("head.cls.b")[0] =
        static_cast<Real>(std::log(0.99 / 0.01 * static_cast<double>(config_.num_classes)));
    add_block("frame.0", 3, C, C);
    add_block("frame.1", 3, C, C);
    const bool pooled_conv = config_.pooling == PoolKind::kConv;
    const std::size_t pooled = config_.pooling == PoolKind::kStack ? 3 * C : C;
    for (const char* br : {"loc", "cls"}) {
      const std::string pre = std::string("refine.") + br;
      for (const char* s : {".start", ".end", ".frame_start", ".frame_end"}) add_block(pre + s, 3, C, C);
      if (pooled_conv) {
        for (const char* s : {".pool.start", ".pool.end", ".pool.frame_start", ".pool.frame_end"})
          add_conv(pre + s, 1, 3 * C, C, std::sqrt(1.0 / static_cast<double>(3 * C)));
      }
      add_block(pre + ".reduce", 1, C + 4 * pooled, C);
    }
    add_conv("refine.head.offset", 3, C, 2, 0.01);
    add_conv("refine.head.quality", 3, C, 1, 0.01);
    add_conv("refine.head.cls", 3, C, K1, 0.01);
    params_.at("refine.head.cls.b")[0] = params_.at("head.cls.b")[0];
  }

  ModelConfig config_;
  ParameterStore<Real> params_;
  std::mt19937_64 rng_;
};

}  // namespace afsd
