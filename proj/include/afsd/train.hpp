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

// Training loop: per clip, one optimizer step on the detection loss, then,
// when boundary consistency learning is enabled, a second step on the
// consistency loss (activation-guided term on every clip, triplet term on
// clips that admit rearrangement).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "afsd/config.hpp"
#include "afsd/data.hpp"
#include "afsd/losses.hpp"
#include "afsd/model.hpp"
#include "afsd/parameters.hpp"
#include "json.hpp"

namespace afsd {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Adam with decoupled weight decay. Moments are per parameter; a parameter
// absent from a step's gradients is left untouched by that step.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg)
      : lr_(cfg.lr), wd_(cfg.weight_decay), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.adam_eps) {}

  void step(ParameterStore<double>& params, const std::map<std::string, Tensor<double>>& grads) {
    for (const auto& [name, g] : grads) {
      auto& p = params.at(name);
      auto& st = state_[name];
      if (st.m.empty()) {
        st.m = Tensor<double>(p.shape());
        st.v = Tensor<double>(p.shape());
      }
      ++st.t;
      const double c1 = 1.0 - std::pow(b1_, static_cast<double>(st.t));
      const double c2 = 1.0 - std::pow(b2_, static_cast<double>(st.t));
      for (std::size_t i = 0; i < p.size(); ++i) {
        st.m[i] = b1_ * st.m[i] + (1 - b1_) * g[i];
        st.v[i] = b2_ * st.v[i] + (1 - b2_) * g[i] * g[i];
        p[i] -= lr_ * wd_ * p[i];
        p[i] -= lr_ * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps_);
      }
    }
  }

 private:
  struct State {
    Tensor<double> m, v;
    long t = 0;
  };
  double lr_, wd_, b1_, b2_, eps_;
  std::map<std::string, State> state_;
};

// Resolves data-dependent model fields (input channels, class count, seed).
inline ModelConfig resolve_model_config(const Config& cfg, std::size_t in_channels, int num_classes) {
  ModelConfig m = cfg.model;
  if (m.in_channels == 0) m.in_channels = in_channels;
  if (m.in_channels != in_channels) {
    throw ConfigError("model.in_channels: " + std::to_string(m.in_channels) + " does not match the data (" +
                      std::to_string(in_channels) + ")");
  }
  if (m.num_classes == 0) m.num_classes = num_classes;
  m.init_seed = cfg.seed;
  m.validate();
  return m;
}

struct TrainOptions {
  std::string out_dir;              // checkpoints and diagnostics; empty: none
  std::ostream* log = nullptr;      // JSON-lines training log
};

struct TrainSummary {
  std::size_t steps = 0;            // detection-loss steps
  std::size_t consistency_steps = 0;
  std::size_t bcl_eligible = 0;     // clips that admitted rearrangement
  std::vector<LossReport> history;
};

inline Json loss_record(const LossReport& r) {
  return Json{{"cls_coarse", r.cls_coarse}, {"loc_coarse", r.loc_coarse}, {"cls_refined", r.cls_refined},
              {"loc_refined", r.loc_refined}, {"quality", r.quality}, {"total", r.total},
              {"act", r.act}, {"trip", r.trip}, {"consistency", r.consistency()},
              {"num_coarse", r.num_coarse}, {"num_refined", r.num_refined}};
}

namespace detail {

[[noreturn]] inline void abort_non_finite(const TrainOptions& opts, const Clip& clip, std::size_t step,
                                          int epoch, const std::string& phase, const LossReport& r) {
  Json dump = Json{{"step", step}, {"epoch", epoch}, {"phase", phase}, {"video", clip.video},
                   {"clip", clip.index}, {"offset_frame", clip.offset_frame}, {"losses", loss_record(r)}};
  double lo = INFINITY, hi = -INFINITY;
  std::size_t bad = 0;
  for (double v : clip.features.values.values()) {
    if (!std::isfinite(v)) ++bad;
    else lo = std::min(lo, v), hi = std::max(hi, v);
  }
  dump["features"] = Json{{"rows", clip.features.length()}, {"channels", clip.features.channels()},
                          {"min", lo}, {"max", hi}, {"non_finite", bad}};
  Json inst = Json::array();
  for (const auto& in : clip.annotation.instances) inst.push_back({in.start, in.end, in.label});
  dump["instances"] = inst;
  std::string where;
  if (!opts.out_dir.empty()) {
    where = (std::filesystem::path(opts.out_dir) / "nonfinite_dump.json").string();
    std::ofstream(where) << dump.dump(2) << '\n';
  }
  throw TrainingError("non-finite " + phase + " loss at step " + std::to_string(step) + " (video " + clip.video +
                      ", clip " + std::to_string(clip.index) + ")" +
                      (where.empty() ? std::string() : "; batch dumped to " + where));
}

}  // namespace detail

inline TrainSummary train(Model<double>& model, const std::vector<Clip>& clips, const Config& cfg,
                          const TrainOptions& opts = {}) {
  namespace fs = std::filesystem;
  if (!opts.out_dir.empty()) fs::create_directories(fs::path(opts.out_dir) / "checkpoints");
  AdamW opt(cfg.train);
  std::mt19937_64 order_rng(cfg.seed ^ 0x5DEECE66DULL);
  TrainSummary summary;
  std::vector<std::size_t> order(clips.size());
  bool done = false;
  for (int epoch = 1; epoch <= cfg.train.epochs && !done; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t idx : order) {
      const Clip& clip = clips[idx];
      if (cfg.train.skip_empty_clips && clip.annotation.instances.empty()) continue;
      if (cfg.train.max_steps > 0 && summary.steps >= static_cast<std::size_t>(cfg.train.max_steps)) {
        done = true;
        break;
      }
      LossReport report;
      const auto& xs = clip.features.values.values();
      if (!std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); })) {
        report.total = NAN;
        detail::abort_non_finite(opts, clip, summary.steps, epoch, "input", report);
      }
      {
        Tape<double> tape;
        const BoundParameters<double> p(tape, model.parameters(), true);
        const auto fwd = model.forward(tape, p, clip.features);
        const auto loss = detection_loss(tape, fwd, clip.annotation, cfg.loss);
        report = loss.report;
        if (!std::isfinite(report.total)) detail::abort_non_finite(opts, clip, summary.steps, epoch, "detection", report);
        tape.backward(loss.total);
        opt.step(model.parameters(), p.reached_gradients());
      }
      ++summary.steps;

      bool eligible = false;
      if (cfg.bcl.enabled) {
        std::mt19937_64 rng(cfg.seed * 0x100000001B3ULL + summary.steps);
        const auto rearranged = rearrange_clip(clip.features, clip.annotation, rng, clip.valid_steps);
        eligible = rearranged.has_value();
        const FeatureSequence& seq = eligible ? rearranged->features : clip.features;
        const Annotation& ann = eligible ? rearranged->annotation : clip.annotation;
        Tape<double> tape;
        const BoundParameters<double> p(tape, model.parameters(), true);
        const auto frame = model.forward_frame(tape, p, seq);
        auto act = activation_guided_loss(frame.loc_start, frame.loc_end, ann, frame.frames_per_step,
                                          frame.origin_frame, cfg.bcl.radius, cfg.bcl.norm);
        auto con = act;
        report.act = act.value().item();
        if (eligible) {
          auto trip = boundary_contrastive_loss(frame.loc_start, frame.loc_end, *rearranged, frame.frames_per_step,
                                                frame.origin_frame, cfg.model.delta_a, cfg.bcl.delta_b,
                                                cfg.bcl.symmetric_anchor);
          report.trip = trip.value().item();
          con = add(act, trip);
          ++summary.bcl_eligible;
        }
        if (!std::isfinite(report.consistency())) {
          detail::abort_non_finite(opts, clip, summary.steps, epoch, "consistency", report);
        }
        tape.backward(con);
        opt.step(model.parameters(), p.reached_gradients());
        ++summary.consistency_steps;
      }
      summary.history.push_back(report);
      if (opts.log) {
        Json rec = Json{{"step", summary.steps}, {"epoch", epoch}, {"video", clip.video}, {"clip", clip.index}};
        rec.update(loss_record(report));
        rec["bcl_eligible"] = eligible;
        *opts.log << rec.dump() << '\n';
      }
    }
    if (!opts.out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
      save_checkpoint(model.parameters(), (fs::path(opts.out_dir) / "checkpoints" / name).string());
    }
  }
  if (opts.log) {
    *opts.log << Json{{"summary", true}, {"steps", summary.steps}, {"consistency_steps", summary.consistency_steps},
                      {"bcl_eligible_samples", summary.bcl_eligible}}.dump()
              << '\n';
  }
  if (!opts.out_dir.empty()) save_checkpoint(model.parameters(), (fs::path(opts.out_dir) / "model.ckpt").string());
  return summary;
}

// Training clips of every video for one stream.
inline std::vector<Clip> training_clips(const std::vector<VideoRecord>& videos, const std::string& stream,
                                        const DataConfig& cfg) {
  std::vector<Clip> out;
  for (const auto& v : videos) {
    auto c = split_clips(v, stream, cfg, true);
    out.insert(out.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
  }
  return out;
}

}  // namespace afsd
