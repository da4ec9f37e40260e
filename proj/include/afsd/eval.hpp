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

// Detection metrics: per-class average precision at tIoU thresholds and
// mean AP, following the THUMOS14 / ActivityNet toolkit conventions
// (greedy matching in score order, all-point interpolated AP).

#include <algorithm>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "afsd/data.hpp"
#include "afsd/geometry.hpp"
#include "afsd/infer.hpp"
#include "json.hpp"

namespace afsd {

struct GroundTruth {
  std::string video;
  double start = 0;
  double end = 0;
  int label = 1;
};

// Ground truth of the chosen subset in seconds.
inline std::vector<GroundTruth> ground_truth_seconds(const AnnotationDocument& doc, const std::string& subset) {
  std::vector<GroundTruth> out;
  for (const auto& [id, meta] : doc.videos) {
    if (!subset.empty() && subset != "all" && meta.subset != subset) continue;
    for (const auto& in : meta.annotation.instances)
      out.push_back({id, in.start / meta.fps, in.end / meta.fps, in.label});
  }
  return out;
}

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

// Precision/recall after each detection of one class, in score order. A
// detection is a true positive when the unmatched ground truth of the same
// video it overlaps most has tIoU >= threshold.
inline std::vector<PrPoint> precision_recall(std::vector<Detection> dets, const std::vector<GroundTruth>& gts,
                                             double threshold) {
  std::sort(dets.begin(), dets.end(), detection_before);
  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t g = 0; g < gts.size(); ++g) by_video[gts[g].video].push_back(g);
  std::vector<bool> matched(gts.size(), false);
  std::vector<PrPoint> curve;
  curve.reserve(dets.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& d = dets[i];
    double best = -1;
    std::size_t best_g = 0;
    if (const auto it = by_video.find(d.video); it != by_video.end()) {
      for (std::size_t g : it->second) {
        if (matched[g]) continue;
        const double o = tiou(d.interval(), {gts[g].start, gts[g].end});
        if (o > best) {
          best = o;
          best_g = g;
        }
      }
    }
    if (best >= threshold && best > 0) {
      matched[best_g] = true;
      ++tp;
    }
    const double n = static_cast<double>(gts.size());
    curve.push_back({gts.empty() ? 0.0 : static_cast<double>(tp) / n,
                     static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  return curve;
}

// Area under the precision envelope: sum over detections of
// (r_k - r_{k-1}) * max_{j >= k} p_j.
inline double interpolated_ap(const std::vector<PrPoint>& curve) {
  std::vector<double> envelope(curve.size());
  double running = 0;
  for (std::size_t i = curve.size(); i-- > 0;) envelope[i] = running = std::max(running, curve[i].precision);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev_recall) * envelope[i];
    prev_recall = curve[i].recall;
  }
  return ap;
}

// AP of one class. Detections and ground truth of other classes are
// ignored. Without ground truth the AP is 0 and `*no_ground_truth` is set.
inline double average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, int label,
                                double threshold, bool* no_ground_truth = nullptr) {
  std::vector<Detection> d;
  std::vector<GroundTruth> g;
  for (const auto& x : dets)
    if (x.label == label) d.push_back(x);
  for (const auto& x : gts)
    if (x.label == label) g.push_back(x);
  if (no_ground_truth) *no_ground_truth = g.empty();
  if (g.empty()) return 0.0;
  return interpolated_ap(precision_recall(std::move(d), g, threshold));
}

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> map;                       // per threshold
  double average_map = 0;
  std::vector<std::vector<double>> class_ap;     // [class - 1][threshold]
  std::vector<std::string> labels;
  std::vector<std::string> warnings;

  double map_at(double threshold) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (std::abs(thresholds[i] - threshold) < 1e-9) return map[i];
    throw ArgumentError("threshold not evaluated");
  }
};

inline EvalReport mean_ap(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                          const std::vector<std::string>& labels, const std::vector<double>& thresholds) {
  EvalReport r;
  r.thresholds = thresholds;
  r.labels = labels;
  r.class_ap.assign(labels.size(), std::vector<double>(thresholds.size(), 0.0));
  for (std::size_t k = 0; k < labels.size(); ++k) {
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      bool empty = false;
      r.class_ap[k][t] = average_precision(dets, gts, static_cast<int>(k + 1), thresholds[t], &empty);
      if (empty && t == 0) r.warnings.push_back("class '" + labels[k] + "' has no ground truth; AP counted as 0");
    }
  }
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    double s = 0;
    for (const auto& c : r.class_ap) s += c[t];
    r.map.push_back(labels.empty() ? 0.0 : s / static_cast<double>(labels.size()));
  }
  double s = 0;
  for (double m : r.map) s += m;
  r.average_map = r.map.empty() ? 0.0 : s / static_cast<double>(r.map.size());
  return r;
}

inline Json report_to_json(const EvalReport& r) {
  Json per_class = Json::object();
  for (std::size_t k = 0; k < r.labels.size(); ++k) per_class[r.labels[k]] = r.class_ap[k];
  return Json{{"thresholds", r.thresholds}, {"mAP", r.map}, {"average_mAP", r.average_map},
              {"class_AP", per_class}, {"warnings", r.warnings}};
}

// Plain-text table in percent: one column per threshold and an average.
inline std::string report_table(const EvalReport& r) {
  std::string head = "tIoU ", row = "mAP  ";
  char buf[32];
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    std::snprintf(buf, sizeof(buf), " %6.2f", r.thresholds[i]);
    head += buf;
    std::snprintf(buf, sizeof(buf), " %6.1f", 100.0 * r.map[i]);
    row += buf;
  }
  std::snprintf(buf, sizeof(buf), " %6.1f", 100.0 * r.average_map);
  return head + "   Avg.\n" + row + buf + "\n";
}

// Chance level: mean mAP of random detectors that emit, per video, as many
// detections as `reference` does, with uniform classes and scores and widths
// drawn from `widths` (seconds), placed uniformly inside the video.
inline double chance_map(const std::vector<Detection>& reference, const std::vector<GroundTruth>& gts,
                         const AnnotationDocument& doc, const std::vector<double>& widths, double threshold,
                         int trials, std::uint64_t seed) {
  if (widths.empty()) throw ArgumentError("chance_map: no widths to sample");
  std::map<std::string, std::size_t> counts;
  for (const auto& d : reference) ++counts[d.video];
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls(1, doc.num_classes());
  std::uniform_int_distribution<std::size_t> pick(0, widths.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double total = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<Detection> dets;
    for (const auto& [video, n] : counts) {
      const auto& meta = doc.videos.at(video);
      const double duration = meta.duration_frames / meta.fps;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = std::min(widths[pick(rng)], duration);
        const double s = unit(rng) * (duration - w);
        const int label = cls(rng);
        dets.push_back({video, s, s + w, label, unit(rng)});
      }
    }
    total += mean_ap(dets, gts, doc.labels, {threshold}).map[0];
  }
  return total / trials;
}

}  // namespace afsd
