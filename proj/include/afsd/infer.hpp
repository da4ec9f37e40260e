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

// Inference: final boundaries and scores from both prediction stages,
// optional location-aligned fusion of two streams, and Soft-NMS.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "afsd/config.hpp"
#include "afsd/data.hpp"
#include "afsd/geometry.hpp"
#include "afsd/model.hpp"
#include "json.hpp"

namespace afsd {

struct Detection {
  std::string video;
  double start = 0;  // frames, or seconds once written out
  double end = 0;
  int label = 1;
  double score = 0;

  Interval interval() const { return {start, end}; }
  friend bool operator==(const Detection&, const Detection&) = default;
};

// A detection tied to the prediction location it came from, so that two
// streams run over the same clip grid can be fused location by location.
struct Candidate {
  Detection det;
  std::size_t clip = 0;
  int level = 0;
  std::size_t index = 0;
  double anchor = 0;  // clip frames
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0;
  for (std::size_t k = 0; k < p.size(); ++k) z += (p[k] = std::exp(logits[k] - m));
  for (auto& v : p) v /= z;
  return p;
}

// Final score of one class from the coarse and refined class probabilities
// and the quality confidence.
inline double combined_score(double p_coarse, double p_refined, double quality) {
  return 0.5 * (p_coarse + p_refined) * quality;
}

// Raw per-location candidates of one clip (clip-local frames, every
// foreground class). With use_quality false the quality factor is 1.
template <class Real>
std::vector<Candidate> clip_candidates(const Model<Real>& model, const Clip& clip, std::size_t clip_id,
                                       bool use_quality) {
  Tape<Real> tape;
  const BoundParameters<Real> p(tape, model.parameters(), false);
  const auto fwd = model.forward(tape, p, clip.features);
  std::vector<Candidate> out;
  for (const auto& lvl : fwd.levels) {
    const auto refinements = lvl.refinements();
    for (std::size_t i = 0; i < lvl.length(); ++i) {
      const auto& prop = lvl.coarse.proposals[i];
      const auto& ref = refinements[i];
      const auto pc = softmax(prop.class_logits), pr = softmax(ref.class_logits);
      const double eta = use_quality ? ref.quality() : 1.0;
      const Interval iv = apply_offsets(prop.interval(), ref.d_start, ref.d_end);
      for (std::size_t k = 1; k < pc.size(); ++k) {
        Candidate c;
        c.det = {clip.video, iv.start, iv.end, static_cast<int>(k), combined_score(pc[k], pr[k], eta)};
        c.clip = clip_id;
        c.level = lvl.level;
        c.index = i;
        c.anchor = prop.anchor;
        out.push_back(std::move(c));
      }
    }
  }
  return out;
}

// Averages boundaries and scores of location-aligned candidates from two
// streams. An empty side passes the other through.
inline std::vector<Candidate> fuse_streams(const std::vector<Candidate>& a, const std::vector<Candidate>& b) {
  if (a.empty() || b.empty()) {
    if (!(a.empty() && b.empty())) std::fprintf(stderr, "warning: one stream absent; using the other alone\n");
    return a.empty() ? b : a;
  }
  if (a.size() != b.size()) throw ArgumentError("fuse_streams: streams were run on different clip grids");
  std::vector<Candidate> out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto &x = a[i], &y = b[i];
    if (x.det.video != y.det.video || x.clip != y.clip || x.level != y.level || x.index != y.index ||
        x.det.label != y.det.label) {
      throw ArgumentError("fuse_streams: candidate " + std::to_string(i) + " is not location-aligned");
    }
    out[i].det.start = 0.5 * (x.det.start + y.det.start);
    out[i].det.end = 0.5 * (x.det.end + y.det.end);
    out[i].det.score = 0.5 * (x.det.score + y.det.score);
  }
  return out;
}

// Deterministic total order: score descending, then start, end, label.
inline bool detection_before(const Detection& a, const Detection& b) {
  return std::tie(b.score, a.start, a.end, a.label, a.video) < std::tie(a.score, b.start, b.end, b.label, b.video);
}

// Soft-NMS over detections of one class and one video. The linear variant
// decays s <- s * (1 - tIoU) for overlaps above the threshold; the Gaussian
// one s <- s * exp(-tIoU^2 / sigma) for every overlap. Detections falling
// below score_floor are dropped. Output is in selection order.
inline std::vector<Detection> soft_nms(std::vector<Detection> dets, double tiou_threshold, double score_floor,
                                       NmsKind kind = NmsKind::kLinear, double sigma = 0.5) {
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  while (!dets.empty()) {
    auto best = std::min_element(dets.begin(), dets.end(), detection_before);
    Detection top = *best;
    dets.erase(best);
    if (top.score < score_floor) break;  // everything left is lower still
    for (auto& d : dets) {
      const double o = tiou(top.interval(), d.interval());
      if (kind == NmsKind::kLinear) {
        if (o > tiou_threshold) d.score *= 1.0 - o;
      } else {
        d.score *= std::exp(-o * o / sigma);
      }
    }
    kept.push_back(std::move(top));
  }
  return kept;
}

// Per-(video, class) Soft-NMS, then at most `max_per_video` detections per
// video in score order.
inline std::vector<Detection> suppress(const std::vector<Detection>& dets, const InferConfig& cfg) {
  std::map<std::pair<std::string, int>, std::vector<Detection>> groups;
  for (const auto& d : dets) groups[{d.video, d.label}].push_back(d);
  std::map<std::string, std::vector<Detection>> per_video;
  for (auto& [key, g] : groups) {
    auto kept = soft_nms(std::move(g), cfg.nms_threshold, cfg.score_floor, cfg.nms, cfg.nms_sigma);
    auto& v = per_video[key.first];
    v.insert(v.end(), kept.begin(), kept.end());
  }
  std::vector<Detection> out;
  for (auto& [_, v] : per_video) {
    std::sort(v.begin(), v.end(), detection_before);
    if (v.size() > static_cast<std::size_t>(cfg.max_per_video)) v.resize(static_cast<std::size_t>(cfg.max_per_video));
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

// Where the neighbouring clips of a sliding grid begin and end, in video
// frames; infinite when there is no neighbour on that side.
struct ClipNeighbours {
  double previous_end = -INFINITY;
  double next_start = INFINITY;
};

inline double clip_end_frame(const Clip& clip) {
  return clip.to_video_frame(static_cast<double>(clip.valid_steps) * clip.features.frames_per_step);
}

// Maps clip candidates to video frames, dropping locations in the padded
// tail and boundaries that collapse after clamping to the video, and keeps
// the top_k by score. With neighbours given, a detection that runs into an
// interior clip edge is dropped when the neighbour across that edge sees the
// detection's other end untruncated: the window cut the action, and the
// neighbour is the clip that can localize it.
inline std::vector<Detection> clip_detections(const std::vector<Candidate>& cands, const Clip& clip, int top_k,
                                              const ClipNeighbours* neighbours = nullptr) {
  const double valid_frames = static_cast<double>(clip.valid_steps) * clip.features.frames_per_step;
  const double margin = clip.features.frames_per_step * clip.frame_scale;
  const double lo = clip.offset_frame, hi = clip_end_frame(clip);
  std::vector<Detection> out;
  for (const auto& c : cands) {
    if (c.anchor >= valid_frames) continue;
    Detection d = c.det;
    d.start = std::clamp(clip.to_video_frame(d.start), 0.0, clip.video_frames);
    d.end = std::clamp(clip.to_video_frame(d.end), 0.0, clip.video_frames);
    if (!(d.end > d.start)) continue;
    if (neighbours) {
      if (d.end >= hi - margin && d.start > neighbours->next_start + margin) continue;
      if (d.start <= lo + margin && d.end < neighbours->previous_end - margin) continue;
    }
    out.push_back(std::move(d));
  }
  std::sort(out.begin(), out.end(), detection_before);
  if (out.size() > static_cast<std::size_t>(top_k)) out.resize(static_cast<std::size_t>(top_k));
  return out;
}

// Detections (in video frames) for every video, using one model per stream.
// With two streams the clip grids must agree; candidates are fused before
// suppression. Overlapping test clips are resolved by suppression over the
// union of their detections.
template <class Real>
std::vector<Detection> detect(const std::map<std::string, const Model<Real>*>& models,
                              const std::vector<VideoRecord>& videos, const Config& cfg) {
  if (models.empty()) throw ArgumentError("detect: no model given");
  const bool use_quality = cfg.loss.quality != QualityTarget::kNone;
  std::vector<Detection> all;
  for (const auto& video : videos) {
    std::vector<Clip> grid;
    std::vector<std::vector<Candidate>> fused;
    for (const auto& [stream, model] : models) {
      const auto clips = split_clips(video, stream, cfg.data, false);
      if (grid.empty()) {
        grid = clips;
        fused.resize(clips.size());
      } else if (clips.size() != grid.size()) {
        throw ArgumentError("detect: streams produce different clip grids for " + video.id);
      }
      const bool first = stream == models.begin()->first;
      for (std::size_t k = 0; k < clips.size(); ++k) {
        auto cands = clip_candidates(*model, clips[k], k, use_quality);
        fused[k] = first ? std::move(cands) : fuse_streams(fused[k], cands);
      }
    }
    std::vector<Detection> dets;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      ClipNeighbours nb;
      if (k > 0) nb.previous_end = clip_end_frame(grid[k - 1]);
      if (k + 1 < grid.size()) nb.next_start = grid[k + 1].offset_frame;
      auto d = clip_detections(fused[k], grid[k], cfg.infer.top_k, cfg.infer.drop_cut_at_edges ? &nb : nullptr);
      dets.insert(dets.end(), d.begin(), d.end());
    }
    auto kept = suppress(dets, cfg.infer);
    all.insert(all.end(), kept.begin(), kept.end());
  }
  return all;
}

// Detection records: one JSON object per line,
// {"video", "start_sec", "end_sec", "label", "score"}.
inline void write_detections(const std::string& path, const std::vector<Detection>& dets_frames,
                             const AnnotationDocument& doc) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write detections " + path);
  for (const auto& d : dets_frames) {
    const auto it = doc.videos.find(d.video);
    if (it == doc.videos.end()) throw ArgumentError("detection for unknown video " + d.video);
    const double fps = it->second.fps;
    Json j = Json::object();
    j["video"] = d.video;
    j["start_sec"] = d.start / fps;
    j["end_sec"] = d.end / fps;
    j["label"] = doc.label_name(d.label);
    j["score"] = d.score;
    os << j.dump() << '\n';
  }
}

// Reads detection records back with boundaries in seconds.
inline std::vector<Detection> read_detections(const std::string& path, const AnnotationDocument& doc) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open detections " + path);
  std::vector<Detection> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const Json j = Json::parse(line, nullptr, false);
    const auto where = path + ":" + std::to_string(n);
    if (j.is_discarded() || !j.is_object()) throw FormatError(where + ": not a JSON object");
    try {
      Detection d;
      d.video = j.at("video").get<std::string>();
      d.start = j.at("start_sec").get<double>();
      d.end = j.at("end_sec").get<double>();
      d.label = doc.label_index(j.at("label").get<std::string>());
      d.score = j.at("score").get<double>();
      out.push_back(std::move(d));
    } catch (const Json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace afsd
