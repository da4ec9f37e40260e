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

// Seeded synthetic benchmark. Each action imprints a class-specific pattern
// over its extent plus shared onset and offset signatures around its
// boundaries, on top of unit Gaussian noise; `snr` scales all planted
// signal, so snr = 0 yields label-free noise (the negative control).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "afsd/config.hpp"
#include "afsd/data.hpp"

namespace afsd {

struct SyntheticDataset {
  AnnotationDocument annotations;
  std::vector<VideoRecord> videos;
};

namespace detail {

struct StreamSignature {
  std::vector<std::vector<double>> class_patterns;  // per class, C values
  std::vector<double> onset, offset;
};

inline std::vector<double> gaussian_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

inline StreamSignature make_signature(std::size_t C, int classes, std::mt19937_64& rng) {
  StreamSignature s;
  for (int k = 0; k < classes; ++k) s.class_patterns.push_back(gaussian_vector(C, rng));
  s.onset = gaussian_vector(C, rng);
  s.offset = gaussian_vector(C, rng);
  return s;
}

// Fraction of step [a, b) covered by [s, e).
inline double coverage(double a, double b, double s, double e) {
  return std::max(0.0, std::min(b, e) - std::max(a, s)) / (b - a);
}

inline Tensor<double> render_stream(std::size_t T, std::size_t C, double fps_step, const Annotation& ann,
                                    const StreamSignature& sig, double snr, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<double> x({T, C});
  for (auto& v : x.values()) v = normal(rng);
  if (snr == 0.0) return x;
  for (const auto& in : ann.instances) {
    const auto& pattern = sig.class_patterns[static_cast<std::size_t>(in.label - 1)];
    for (std::size_t t = 0; t < T; ++t) {
      const double a = static_cast<double>(t) * fps_step, b = a + fps_step, mid = a + 0.5 * fps_step;
      const double inside = coverage(a, b, in.start, in.end);
      const double zs = (mid - in.start) / fps_step, ze = (mid - in.end) / fps_step;
      const double bump_s = std::exp(-0.5 * zs * zs), bump_e = std::exp(-0.5 * ze * ze);
      if (inside == 0.0 && bump_s < 1e-6 && bump_e < 1e-6) continue;
      for (std::size_t c = 0; c < C; ++c) {
        x(t, c) += snr * (inside * pattern[c] + bump_s * sig.onset[c] + bump_e * sig.offset[c]);
      }
    }
  }
  return x;
}

// Non-overlapping instances with at least `gap` frames between them.
inline Annotation place_instances(const SynthConfig& cfg, double duration, int count, int& label_counter,
                                  std::mt19937_64& rng) {
  std::uniform_int_distribution<int> length(cfg.min_action_frames, cfg.max_action_frames);
  const double gap = 2.0 * cfg.frames_per_step;
  Annotation ann;
  for (int n = 0; n < count; ++n) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const int len = length(rng);
      if (len + 2 * gap > duration) continue;
      std::uniform_int_distribution<int> start(static_cast<int>(gap), static_cast<int>(duration - gap) - len);
      const double s = start(rng), e = s + len;
      const bool clear = std::none_of(ann.instances.begin(), ann.instances.end(), [&](const Instance& o) {
        return s < o.end + gap && o.start < e + gap;
      });
      if (!clear) continue;
      ann.instances.push_back({s, e, 1 + label_counter++ % cfg.num_classes});
      break;
    }
  }
  std::sort(ann.instances.begin(), ann.instances.end(),
            [](const Instance& a, const Instance& b) { return a.start < b.start; });
  return ann;
}

}  // namespace detail

inline const std::vector<std::string>& synthetic_streams() {
  static const std::vector<std::string> streams = {"rgb", "flow"};
  return streams;
}

// Bit-identical for a given (config, seed). Labels cycle through the classes
// so every class occurs in both subsets.
inline SyntheticDataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 world(seed);
  const auto C = static_cast<std::size_t>(cfg.channels);
  std::vector<detail::StreamSignature> signatures;
  for (std::size_t s = 0; s < synthetic_streams().size(); ++s) {
    signatures.push_back(detail::make_signature(C, cfg.num_classes, world));
  }
  SyntheticDataset out;
  for (int k = 0; k < cfg.num_classes; ++k) out.annotations.labels.push_back("class_" + std::to_string(k + 1));

  const double fps_step = cfg.frames_per_step;
  int label_counter = 0;
  auto make_video = [&](const std::string& subset, int index) {
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%03d", subset.c_str(), index);
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(
                                    (subset == "train" ? 0 : 100000) + index + 1)));
    std::uniform_int_distribution<int> frames(cfg.min_frames, cfg.max_frames);
    std::uniform_int_distribution<int> count(cfg.min_actions, cfg.max_actions);
    const auto T = static_cast<std::size_t>(frames(rng) / cfg.frames_per_step);
    const double duration = static_cast<double>(T) * fps_step;
    VideoRecord rec;
    rec.id = id;
    rec.fps = cfg.fps;
    rec.duration_frames = duration;
    rec.subset = subset;
    rec.annotation = detail::place_instances(cfg, duration, count(rng), label_counter, rng);
    for (std::size_t s = 0; s < synthetic_streams().size(); ++s) {
      auto values = detail::render_stream(T, C, fps_step, rec.annotation, signatures[s], cfg.snr, rng);
      // Round through f32 so in-memory data equals what the files hold.
      for (auto& v : values.values()) v = static_cast<double>(static_cast<float>(v));
      rec.streams.emplace(synthetic_streams()[s], FeatureSequence{std::move(values), fps_step, 0.0});
    }
    out.annotations.videos.emplace(rec.id, VideoMeta{duration, cfg.fps, fps_step, subset, rec.annotation});
    out.videos.push_back(std::move(rec));
  };
  for (int i = 0; i < cfg.num_train; ++i) make_video("train", i);
  for (int i = 0; i < cfg.num_test; ++i) make_video("test", i);
  return out;
}

inline void write_dataset(const std::string& root, const SyntheticDataset& data) {
  namespace fs = std::filesystem;
  for (const auto& s : synthetic_streams()) fs::create_directories(fs::path(root) / "features" / s);
  write_annotations((fs::path(root) / "annotations.json").string(), data.annotations);
  for (const auto& v : data.videos)
    for (const auto& [stream, seq] : v.streams)
      write_feature_file(feature_path(root, stream, v.id), seq.values, static_cast<float>(v.fps));
}

}  // namespace afsd
