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

// Label assignment, the detection objective, and boundary consistency
// learning (activation-guided loss plus the fragment/background triplet).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "afsd/errors.hpp"
#include "afsd/feature_sequence.hpp"
#include "afsd/geometry.hpp"
#include "afsd/model.hpp"
#include "afsd/ops.hpp"

namespace afsd {

struct Instance {
  double start = 0;  // frames
  double end = 0;
  int label = 1;     // 1-based foreground class

  Interval interval() const { return {start, end}; }
  friend bool operator==(const Instance&, const Instance&) = default;
};

struct Annotation {
  std::vector<Instance> instances;

  void validate(int num_classes) const {
    for (const auto& in : instances) {
      if (!(in.start < in.end)) throw ArgumentError("annotation instance with start >= end");
      if (in.label < 1 || in.label > num_classes) {
        throw ArgumentError("annotation label " + std::to_string(in.label) +
                            " outside the class vocabulary");
      }
    }
  }
};

struct CoarseTarget {
  std::size_t gt = 0;
  Interval interval;
  int label = 0;
};

struct RefinedTarget {
  std::size_t gt = 0;
  Interval interval;
  Offsets offsets;
  int label = 0;
  double coarse_tiou = 0;
};

// Targets aligned with the flat proposal list passed to assign().
struct AssignmentResult {
  std::vector<std::optional<CoarseTarget>> coarse;
  std::vector<std::optional<RefinedTarget>> refined;
  std::size_t num_coarse = 0;
  std::size_t num_refined = 0;
};

inline constexpr double kRefinedPositiveTiou = 0.5;

// A location is a coarse positive when its anchor lies inside a ground-truth
// instance (the narrowest one if several contain it). It is also a refined
// positive when its coarse proposal overlaps that instance with tIoU > 0.5;
// offset labels invert apply_offsets.
inline AssignmentResult assign(std::span<const CoarseProposal> proposals, const Annotation& ann) {
  AssignmentResult out;
  out.coarse.resize(proposals.size());
  out.refined.resize(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const auto& p = proposals[i];
    std::optional<std::size_t> best;
    for (std::size_t j = 0; j < ann.instances.size(); ++j) {
      const auto& g = ann.instances[j];
      if (g.start <= p.anchor && p.anchor <= g.end) {
        if (!best || g.end - g.start < ann.instances[*best].end - ann.instances[*best].start) best = j;
      }
    }
    if (!best) continue;
    const auto& g = ann.instances[*best];
    out.coarse[i] = CoarseTarget{*best, g.interval(), g.label};
    ++out.num_coarse;
    const double overlap = tiou(p.interval(), g.interval());
    if (overlap > kRefinedPositiveTiou) {
      out.refined[i] = RefinedTarget{*best, g.interval(), offset_labels(p.interval(), g.interval()),
                                     g.label, overlap};
      ++out.num_refined;
    }
  }
  return out;
}

// Per-location softmax focal loss for p(correct) = p; closed form used by
// fixtures and the acceptance suite.
inline double focal_term(double p_correct, double alpha, double gamma) {
  return -alpha * std::pow(1.0 - p_correct, gamma) * std::log(p_correct);
}

inline double triplet_hinge(double anchor_positive_sq, double anchor_negative_sq,
                            double margin = 1.0) {
  return std::max(anchor_positive_sq - anchor_negative_sq + margin, 0.0);
}

template <class Real>
Var<Real> zero_scalar(Tape<Real>& tape) {
  return tape.constant(Tensor<Real>::scalar(Real(0)));
}

// (1 / N) * summed focal loss over every location; zero when N == 0.
template <class Real>
Var<Real> focal_cls_loss(const Var<Real>& logits, std::vector<int> targets, std::size_t n,
                         Real alpha, Real gamma) {
  if (n == 0) return zero_scalar(logits.tape());
  return affine(softmax_focal_loss(logits, std::move(targets), alpha, gamma),
                Real(1) / static_cast<Real>(n));
}

enum class QualityTarget { kTiou, kCenterness, kNone };
enum class ActNorm { kTanh, kClip01, kMinMax };

struct LossConfig {
  double lambda = 10.0;
  double gamma = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  QualityTarget quality = QualityTarget::kTiou;
};

struct LossReport {
  double cls_coarse = 0, loc_coarse = 0, cls_refined = 0, loc_refined = 0, quality = 0;
  double act = 0, trip = 0;
  double total = 0;
  std::size_t num_coarse = 0, num_refined = 0;

  double consistency() const { return act + trip; }
};

// FCOS-style centerness of an anchor inside an interval, in one dimension.
inline double centerness(double anchor, const Interval& gt) {
  const double l = anchor - gt.start, r = gt.end - anchor;
  if (l < 0 || r < 0) return 0.0;
  const double hi = std::max(l, r);
  return hi > 0 ? std::min(l, r) / hi : 1.0;
}

template <class Real>
struct DetectionLoss {
  Var<Real> total;
  LossReport report;
  AssignmentResult assignment;
};

// Flattens the per-level proposals in level-major order.
template <class Real>
std::vector<CoarseProposal> flatten_proposals(const ForwardResult<Real>& fwd) {
  std::vector<CoarseProposal> out;
  for (const auto& lvl : fwd.levels)
    out.insert(out.end(), lvl.coarse.proposals.begin(), lvl.coarse.proposals.end());
  return out;
}

// Weighted sum of the coarse/refined classification and localization terms
// and the quality term. Targets derive from the current proposals and are
// constants to the tape; `fixed` substitutes a precomputed assignment (used
// by finite-difference checks, where the targets must not move).
template <class Real>
DetectionLoss<Real> detection_loss(Tape<Real>& tape, const ForwardResult<Real>& fwd,
                                   const Annotation& ann, const LossConfig& cfg,
                                   const AssignmentResult* fixed = nullptr) {
  DetectionLoss<Real> out;
  const auto proposals = flatten_proposals(fwd);
  out.assignment = fixed ? *fixed : assign(proposals, ann);
  if (out.assignment.coarse.size() != proposals.size()) {
    throw DimensionError("detection_loss: assignment does not match the proposal count");
  }
  const auto& as = out.assignment;
  const std::size_t nc = as.num_coarse, nr = as.num_refined;
  const Real alpha = static_cast<Real>(cfg.focal_alpha), fgamma = static_cast<Real>(cfg.focal_gamma);

  std::vector<Var<Real>> cls_c, loc_c, cls_r, loc_r, qual;
  std::size_t base = 0;
  for (const auto& lvl : fwd.levels) {
    const std::size_t T = lvl.length();
    std::vector<int> tc(T, 0), tr(T, 0);
    std::vector<std::size_t> pos_c, pos_r;
    std::vector<Real> dist_t, off_t, qual_t;
    const auto& offsets = lvl.refined.offsets.value();
    for (std::size_t i = 0; i < T; ++i) {
      const auto& prop = proposals[base + i];
      if (const auto& c = as.coarse[base + i]) {
        tc[i] = c->label;
        pos_c.push_back(i);
        dist_t.push_back(static_cast<Real>(prop.anchor - c->interval.start));
        dist_t.push_back(static_cast<Real>(c->interval.end - prop.anchor));
      }
      if (const auto& r = as.refined[base + i]) {
        tr[i] = r->label;
        pos_r.push_back(i);
        off_t.push_back(static_cast<Real>(r->offsets.d_start));
        off_t.push_back(static_cast<Real>(r->offsets.d_end));
        double q = 0;
        if (cfg.quality == QualityTarget::kCenterness) {
          q = centerness(prop.anchor, r->interval);
        } else {
          const Interval refined = apply_offsets(prop.interval(), static_cast<double>(offsets(i, 0)),
                                                 static_cast<double>(offsets(i, 1)));
          q = refined.start <= refined.end ? tiou(refined, r->interval) : 0.0;
        }
        qual_t.push_back(static_cast<Real>(q));
      }
    }
    if (nc > 0) cls_c.push_back(softmax_focal_loss(lvl.coarse.logits, tc, alpha, fgamma));
    if (nr > 0) cls_r.push_back(softmax_focal_loss(lvl.refined.logits, tr, alpha, fgamma));
    if (!pos_c.empty()) {
      const std::size_t n = pos_c.size();
      loc_c.push_back(anchored_iou_loss(gather_rows(lvl.coarse.distances, pos_c),
                                        Tensor<Real>({n, 2}, std::move(dist_t))));
    }
    if (!pos_r.empty()) {
      const std::size_t n = pos_r.size();
      loc_r.push_back(l1_loss(gather_rows(lvl.refined.offsets, pos_r),
                              Tensor<Real>({n, 2}, std::move(off_t))));
      if (cfg.quality != QualityTarget::kNone) {
        qual.push_back(bce_with_logits(gather_rows(lvl.refined.quality_logits, pos_r),
                                       Tensor<Real>({n, 1}, std::move(qual_t))));
      }
    }
    base += T;
  }

  auto mean_of = [&](std::vector<Var<Real>>& terms, std::size_t n) {
    if (terms.empty() || n == 0) return zero_scalar(tape);
    return affine(add_all(std::span<const Var<Real>>(terms)), Real(1) / static_cast<Real>(n));
  };
  auto lc = mean_of(cls_c, nc), ll = mean_of(loc_c, nc);
  auto rc = mean_of(cls_r, nr), rl = mean_of(loc_r, nr);
  auto q = mean_of(qual, nr);
  const Real lam = static_cast<Real>(cfg.lambda);
  const Real gam = cfg.quality == QualityTarget::kNone ? Real(0) : static_cast<Real>(cfg.gamma);
  std::vector<Var<Real>> terms = {lc, affine(ll, lam), rc, affine(rl, lam), affine(q, gam)};
  out.total = add_all(std::span<const Var<Real>>(terms));

  auto& r = out.report;
  r.cls_coarse = static_cast<double>(lc.value().item());
  r.loc_coarse = static_cast<double>(ll.value().item());
  r.cls_refined = static_cast<double>(rc.value().item());
  r.loc_refined = static_cast<double>(rl.value().item());
  r.quality = static_cast<double>(q.value().item());
  r.total = static_cast<double>(out.total.value().item());
  r.num_coarse = nc;
  r.num_refined = nr;
  return out;
}

// Indicator over frame-feature rows: 1 within `radius` rows of any instance
// start (or end).
inline std::vector<double> boundary_indicator(std::size_t length, const Annotation& ann,
                                              double frames_per_step, double origin,
                                              double radius, bool at_start) {
  std::vector<double> g(length, 0.0);
  for (const auto& in : ann.instances) {
    const double center = ((at_start ? in.start : in.end) - origin) / frames_per_step;
    for (std::size_t i = 0; i < length; ++i)
      if (std::abs(static_cast<double>(i) - center) <= radius) g[i] = 1.0;
  }
  return g;
}

// Channel-mean confidence of a sensitive feature after the chosen
// normalization, as a T x 1 probability column.
template <class Real>
Var<Real> boundary_confidence(const Var<Real>& feature, ActNorm norm) {
  switch (norm) {
    case ActNorm::kTanh: return channel_mean(tanh(feature));
    case ActNorm::kClip01: return channel_mean(clamp(feature, Real(0), Real(1)));
    case ActNorm::kMinMax: return channel_mean(minmax_normalize(feature));
  }
  throw InternalError("unknown normalization");
}

// Mean BCE between the start/end indicators and the confidences of the
// start/end-sensitive features, summed over the two sides.
template <class Real>
Var<Real> activation_guided_loss(const Var<Real>& f_start, const Var<Real>& f_end,
                                 const Annotation& ann, double frames_per_step, double origin,
                                 double radius, ActNorm norm) {
  const std::size_t T = f_start.value().dim(0);
  auto side = [&](const Var<Real>& f, bool at_start) {
    const auto g = boundary_indicator(T, ann, frames_per_step, origin, radius, at_start);
    Tensor<Real> target({T, 1});
    for (std::size_t i = 0; i < T; ++i) target[i] = static_cast<Real>(g[i]);
    return affine(binary_cross_entropy(boundary_confidence(f, norm), target),
                  Real(1) / static_cast<Real>(T));
  };
  return add(side(f_start, true), side(f_end, false));
}

// A training clip with one action split around an inserted background
// segment.
struct RearrangedClip {
  FeatureSequence features;
  Annotation annotation;
  Interval first_fragment;
  Interval background;
  Interval second_fragment;
};

// Splits a long action and inserts background between the fragments.
// Requires an action longer than twice the shortest action and a background
// run at least as long as the shortest action; otherwise returns nullopt.
// Lengths are measured in feature steps; rows past `valid_steps` (padding)
// are never sampled as background.
template <class Rng>
std::optional<RearrangedClip> rearrange_clip(const FeatureSequence& clip, const Annotation& ann,
                                             Rng& rng, std::size_t valid_steps = 0) {
  const std::size_t T = clip.length();
  if (valid_steps == 0 || valid_steps > T) valid_steps = T;
  if (ann.instances.empty()) return std::nullopt;
  const double fps = clip.frames_per_step;
  struct Span { long start, end; };
  std::vector<Span> spans;
  for (const auto& in : ann.instances) {
    long s = std::lround((in.start - clip.origin_frame) / fps);
    long e = std::lround((in.end - clip.origin_frame) / fps);
    s = std::clamp<long>(s, 0, static_cast<long>(valid_steps));
    e = std::clamp<long>(e, 0, static_cast<long>(valid_steps));
    spans.push_back({s, e});
  }
  long w_min = spans[0].end - spans[0].start;
  for (const auto& sp : spans) w_min = std::min(w_min, sp.end - sp.start);
  if (w_min < 1) return std::nullopt;

  std::vector<std::size_t> eligible;
  for (std::size_t j = 0; j < spans.size(); ++j)
    if (spans[j].end - spans[j].start > 2 * w_min) eligible.push_back(j);
  if (eligible.empty()) return std::nullopt;

  std::vector<bool> busy(valid_steps, false);
  for (const auto& sp : spans)
    for (long i = sp.start; i < sp.end; ++i) busy[static_cast<std::size_t>(i)] = true;
  std::vector<Span> runs;
  for (std::size_t i = 0; i < valid_steps;) {
    if (busy[i]) { ++i; continue; }
    std::size_t j = i;
    while (j < valid_steps && !busy[j]) ++j;
    if (static_cast<long>(j - i) >= w_min) runs.push_back({static_cast<long>(i), static_cast<long>(j)});
    i = j;
  }
  if (runs.empty()) return std::nullopt;

  auto pick = [&](long lo, long hi) {
    return std::uniform_int_distribution<long>(lo, hi)(rng);
  };
  const std::size_t chosen = eligible[static_cast<std::size_t>(pick(0, static_cast<long>(eligible.size()) - 1))];
  const Span action = spans[chosen];
  const long split = pick(action.start + w_min, action.end - w_min);
  const Span run = runs[static_cast<std::size_t>(pick(0, static_cast<long>(runs.size()) - 1))];
  const long bg = pick(run.start, run.end - w_min);

  const std::size_t C = clip.channels(), W = static_cast<std::size_t>(w_min);
  const std::size_t S = static_cast<std::size_t>(split);
  Tensor<double> values({T + W, C});
  for (std::size_t t = 0; t < T + W; ++t) {
    std::size_t src;
    if (t < S) src = t;
    else if (t < S + W) src = static_cast<std::size_t>(bg) + (t - S);
    else src = t - W;
    for (std::size_t c = 0; c < C; ++c) values(t, c) = clip.values(src, c);
  }

  RearrangedClip out;
  out.features = FeatureSequence{std::move(values), fps, clip.origin_frame};
  const double split_frame = clip.origin_frame + static_cast<double>(split) * fps;
  const double shift = static_cast<double>(w_min) * fps;
  const auto& a = ann.instances[chosen];
  for (std::size_t j = 0; j < ann.instances.size(); ++j) {
    Instance in = ann.instances[j];
    if (j == chosen) {
      out.annotation.instances.push_back({in.start, split_frame, in.label});
      out.annotation.instances.push_back({split_frame + shift, in.end + shift, in.label});
      continue;
    }
    if (in.start >= split_frame) {
      in.start += shift;
      in.end += shift;
    } else if (in.end > split_frame) {
      in.end += shift;
    }
    out.annotation.instances.push_back(in);
  }
  out.first_fragment = {a.start, split_frame};
  out.background = {split_frame, split_frame + shift};
  out.second_fragment = {split_frame + shift, a.end + shift};
  return out;
}

// Triplet objective on boundary-pooled features: the end of the first
// fragment should match the start of the second one more closely (by a
// margin of 1) than either boundary of the inserted background.
template <class Real>
Var<Real> boundary_contrastive_loss(const Var<Real>& f_start, const Var<Real>& f_end,
                                    const RearrangedClip& clip, double frames_per_step,
                                    double origin, double delta_a, double delta_b,
                                    bool symmetric_anchor = false) {
  auto to_index = [&](const Interval& iv) { return to_index_region(iv, origin, frames_per_step); };
  const auto r1 = boundary_regions(clip.first_fragment, delta_a, delta_b);
  const auto r2 = boundary_regions(clip.second_fragment, delta_a, delta_b);
  const auto rb = boundary_regions(clip.background, delta_a, delta_b);
  auto end_a1 = region_max_pool(f_end, to_index(r1.end_region));
  auto start_a2 = region_max_pool(f_start, to_index(r2.start_region));
  auto start_bg = region_max_pool(f_start, to_index(rb.start_region));
  auto end_bg = region_max_pool(f_end, to_index(rb.end_region));

  auto sqdist = [](const Var<Real>& a, const Var<Real>& b) { return sum(square(sub(a, b))); };
  auto hinge = [&](const Var<Real>& anchor, const Var<Real>& positive, const Var<Real>& negative) {
    return relu(affine(sub(sqdist(anchor, positive), sqdist(anchor, negative)), Real(1), Real(1)));
  };
  std::vector<Var<Real>> terms = {hinge(end_a1, start_a2, start_bg), hinge(end_a1, start_a2, end_bg)};
  if (symmetric_anchor) {
    terms.push_back(hinge(start_a2, end_a1, start_bg));
    terms.push_back(hinge(start_a2, end_a1, end_bg));
  }
  return affine(add_all(std::span<const Var<Real>>(terms)), Real(1) / static_cast<Real>(terms.size()));
}

}  // namespace afsd
