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

// On-disk data: per-(video, stream) feature files, the annotation document,
// and the clips the detector consumes.
//
// Feature file (little-endian):
//   char[4] "AFSD", u16 version (1), u32 T, u32 C, f32 fps,
//   then T*C f32 values, row-major (time-major).
//
// Annotation document (JSON):
//   {"labels": ["name", ...],
//    "videos": {"<id>": {"duration_frames": n, "fps": f,
//                        "frames_per_step": s,      // optional
//                        "subset": "train" | "test", // optional
//                        "instances": [{"start": a, "end": b, "label": "name"}]}}}
// Instance boundaries are in frames; labels index the vocabulary from 1.
//
// Dataset directory: <root>/annotations.json and
// <root>/features/<stream>/<id>.afsd.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "afsd/config.hpp"
#include "afsd/errors.hpp"
#include "afsd/feature_sequence.hpp"
#include "afsd/losses.hpp"
#include "afsd/parameters.hpp"
#include "json.hpp"

namespace afsd {

inline constexpr std::uint16_t kFeatureFileVersion = 1;

struct FeatureFile {
  Tensor<double> values;  // T x C, exactly representable as f32
  float fps = 0;
};

inline void write_feature_file(const std::string& path, const Tensor<double>& values, float fps) {
  if (values.rank() != 2) throw DimensionError("feature file payload must be T x C");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write feature file " + path);
  os.write("AFSD", 4);
  detail::put_le<std::uint16_t>(os, kFeatureFileVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(values.dim(0)));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(values.dim(1)));
  detail::put_le<float>(os, fps);
  for (double v : values.values()) detail::put_le<float>(os, static_cast<float>(v));
  if (!os) throw FormatError("failed writing feature file " + path);
}

inline FeatureFile read_feature_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open feature file " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "AFSD") {
    throw FormatError(path + ": not an AFSD feature file");
  }
  try {
    const auto version = detail::get_le<std::uint16_t>(is);
    if (version != kFeatureFileVersion) {
      throw FormatError(path + ": unsupported feature file version " + std::to_string(version));
    }
    const auto T = detail::get_le<std::uint32_t>(is);
    const auto C = detail::get_le<std::uint32_t>(is);
    FeatureFile out;
    out.fps = detail::get_le<float>(is);
    if (T == 0 || C == 0) throw FormatError(path + ": empty feature matrix");
    if (!(out.fps > 0)) throw FormatError(path + ": fps must be positive");
    out.values = Tensor<double>({T, C});
    for (auto& v : out.values.values()) v = static_cast<double>(detail::get_le<float>(is));
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes");
    return out;
  } catch (const FormatError& e) {
    const std::string what = e.what();
    if (what.rfind(path, 0) == 0) throw;
    throw FormatError(path + ": " + what);
  }
}

struct VideoMeta {
  double duration_frames = 0;
  double fps = 0;
  double frames_per_step = 0;  // 0: derive from the feature length
  std::string subset;
  Annotation annotation;
};

struct AnnotationDocument {
  std::vector<std::string> labels;
  std::map<std::string, VideoMeta> videos;

  int num_classes() const { return static_cast<int>(labels.size()); }

  int label_index(const std::string& name) const {
    const auto it = std::find(labels.begin(), labels.end(), name);
    if (it == labels.end()) throw FormatError("label '" + name + "' not in the vocabulary");
    return static_cast<int>(it - labels.begin()) + 1;
  }

  const std::string& label_name(int index) const {
    if (index < 1 || index > num_classes()) throw ArgumentError("label index out of range");
    return labels[static_cast<std::size_t>(index - 1)];
  }
};

inline AnnotationDocument parse_annotations(const Json& j, const std::string& where = "annotations") {
  auto fail = [&](const std::string& msg) { return FormatError(where + ": " + msg); };
  if (!j.is_object() || !j.contains("labels") || !j.contains("videos")) {
    throw fail("expected an object with 'labels' and 'videos'");
  }
  AnnotationDocument doc;
  for (const auto& l : j.at("labels")) {
    if (!l.is_string()) throw fail("labels must be strings");
    doc.labels.push_back(l.get<std::string>());
  }
  auto number = [&](const Json& o, const char* key, const std::string& ctx) {
    if (!o.contains(key) || !o.at(key).is_number()) throw fail(ctx + ": missing numeric '" + key + "'");
    return o.at(key).get<double>();
  };
  for (const auto& [id, v] : j.at("videos").items()) {
    if (!v.is_object()) throw fail("video " + id + ": expected an object");
    VideoMeta meta;
    meta.duration_frames = number(v, "duration_frames", "video " + id);
    meta.fps = number(v, "fps", "video " + id);
    if (v.contains("frames_per_step")) meta.frames_per_step = number(v, "frames_per_step", "video " + id);
    if (v.contains("subset")) meta.subset = v.at("subset").get<std::string>();
    if (!(meta.duration_frames > 0) || !(meta.fps > 0)) throw fail("video " + id + ": non-positive duration or fps");
    for (const auto& in : v.value("instances", Json::array())) {
      Instance inst;
      inst.start = number(in, "start", "video " + id);
      inst.end = number(in, "end", "video " + id);
      if (!in.contains("label") || !in.at("label").is_string()) throw fail("video " + id + ": instance without a label");
      try {
        inst.label = doc.label_index(in.at("label").get<std::string>());
      } catch (const FormatError& e) {
        throw fail("video " + id + ": " + e.what());
      }
      if (!(inst.start < inst.end)) throw fail("video " + id + ": instance with start >= end");
      if (inst.start < 0 || inst.end > meta.duration_frames) {
        throw fail("video " + id + ": instance outside [0, duration_frames]");
      }
      meta.annotation.instances.push_back(inst);
    }
    doc.videos.emplace(id, std::move(meta));
  }
  return doc;
}

inline Json annotations_to_json(const AnnotationDocument& doc) {
  Json videos = Json::object();
  for (const auto& [id, m] : doc.videos) {
    Json v = Json::object();
    v["duration_frames"] = m.duration_frames;
    v["fps"] = m.fps;
    if (m.frames_per_step > 0) v["frames_per_step"] = m.frames_per_step;
    if (!m.subset.empty()) v["subset"] = m.subset;
    Json inst = Json::array();
    for (const auto& in : m.annotation.instances) {
      inst.push_back(Json{{"start", in.start}, {"end", in.end}, {"label", doc.label_name(in.label)}});
    }
    v["instances"] = std::move(inst);
    videos[id] = std::move(v);
  }
  return Json{{"labels", doc.labels}, {"videos", std::move(videos)}};
}

inline AnnotationDocument read_annotations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open annotations " + path);
  Json j = Json::parse(is, nullptr, false);
  if (j.is_discarded()) throw FormatError(path + ": not valid JSON");
  return parse_annotations(j, path);
}

inline void write_annotations(const std::string& path, const AnnotationDocument& doc) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write annotations " + path);
  os << annotations_to_json(doc).dump(2) << '\n';
}

struct VideoRecord {
  std::string id;
  std::map<std::string, FeatureSequence> streams;  // "rgb", "flow"
  Annotation annotation;
  double fps = 0;
  double duration_frames = 0;
  std::string subset;
};

inline std::string feature_path(const std::string& root, const std::string& stream, const std::string& id) {
  return (std::filesystem::path(root) / "features" / stream / (id + ".afsd")).string();
}

// Loads the videos of `subset` ("" or "all" for every video) with the given
// streams.
inline std::vector<VideoRecord> load_dataset(const std::string& root, const std::string& subset,
                                             const std::vector<std::string>& streams,
                                             AnnotationDocument* doc_out = nullptr) {
  const auto doc = read_annotations((std::filesystem::path(root) / "annotations.json").string());
  std::vector<VideoRecord> out;
  for (const auto& [id, meta] : doc.videos) {
    if (!subset.empty() && subset != "all" && meta.subset != subset) continue;
    VideoRecord rec{id, {}, meta.annotation, meta.fps, meta.duration_frames, meta.subset};
    for (const auto& s : streams) {
      auto file = read_feature_file(feature_path(root, s, id));
      const double T = static_cast<double>(file.values.dim(0));
      const double fps_step = meta.frames_per_step > 0 ? meta.frames_per_step : meta.duration_frames / T;
      rec.streams.emplace(s, FeatureSequence{std::move(file.values), fps_step, 0.0});
    }
    out.push_back(std::move(rec));
  }
  if (doc_out) *doc_out = doc;
  return out;
}

// A fixed-length window of one stream, in clip-local frames. Clip frame x
// corresponds to video frame offset_frame + x * frame_scale.
struct Clip {
  std::string video;
  std::size_t index = 0;
  FeatureSequence features;
  Annotation annotation;
  double offset_frame = 0;
  double frame_scale = 1;
  std::size_t valid_steps = 0;  // rows before zero padding
  double video_frames = 0;

  double to_video_frame(double clip_frame) const { return offset_frame + clip_frame * frame_scale; }
};

// Steps per clip and between clip starts for a sliding window measured in
// frames.
inline std::pair<std::size_t, std::size_t> clip_grid(double clip_frames, double overlap_frames,
                                                     double frames_per_step) {
  const auto steps = static_cast<std::size_t>(std::ceil(clip_frames / frames_per_step - 1e-9));
  const auto stride = static_cast<std::size_t>(
      std::max(1.0, std::floor((clip_frames - overlap_frames) / frames_per_step + 1e-9)));
  return {std::max<std::size_t>(steps, 1), stride};
}

inline std::vector<std::size_t> clip_starts(std::size_t length, std::size_t clip_steps, std::size_t stride) {
  std::vector<std::size_t> starts;
  for (std::size_t s = 0;; s += stride) {
    starts.push_back(s);
    if (s + clip_steps >= length) break;
  }
  return starts;
}

// Instances shifted into a window of `window_frames` frames starting at
// `offset`; parts outside are cut and instances with less than one visible
// frame dropped.
inline Annotation window_annotation(const Annotation& ann, double offset, double scale,
                                    double window_frames) {
  Annotation out;
  for (const auto& in : ann.instances) {
    const double s = std::max(0.0, (in.start - offset) / scale);
    const double e = std::min(window_frames, (in.end - offset) / scale);
    if (e - s >= 1.0) out.instances.push_back({s, e, in.label});
  }
  return out;
}

inline std::vector<Clip> split_clips(const VideoRecord& video, const std::string& stream,
                                     const DataConfig& cfg, bool training) {
  const auto it = video.streams.find(stream);
  if (it == video.streams.end()) throw ArgumentError("video " + video.id + " has no stream " + stream);
  const FeatureSequence& seq = it->second;
  const std::size_t T = seq.length(), C = seq.channels();
  const double fps_step = seq.frames_per_step;
  std::vector<Clip> clips;

  if (cfg.clip_mode == ClipMode::kResample) {
    const auto R = static_cast<std::size_t>(std::ceil(cfg.resample_length / fps_step - 1e-9));
    Tensor<double> values({R, C});
    for (std::size_t i = 0; i < R; ++i) {
      const double src = R > 1 ? static_cast<double>(i) * static_cast<double>(T - 1) / static_cast<double>(R - 1) : 0.0;
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, T - 1);
      const double a = src - static_cast<double>(lo);
      for (std::size_t c = 0; c < C; ++c) values(i, c) = (1 - a) * seq.values(lo, c) + a * seq.values(hi, c);
    }
    Clip clip;
    clip.video = video.id;
    clip.features = FeatureSequence{std::move(values), fps_step, 0.0};
    clip.frame_scale = seq.duration_frames() / (static_cast<double>(R) * fps_step);
    clip.offset_frame = seq.origin_frame;
    clip.valid_steps = R;
    clip.video_frames = video.duration_frames;
    clip.annotation = window_annotation(video.annotation, clip.offset_frame, clip.frame_scale,
                                        static_cast<double>(R) * fps_step);
    clips.push_back(std::move(clip));
    return clips;
  }

  const double overlap = training ? cfg.train_overlap : cfg.test_overlap;
  const auto [steps, stride] = clip_grid(cfg.clip_length, overlap, fps_step);
  const auto starts = clip_starts(T, steps, stride);
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const std::size_t s = starts[k];
    Tensor<double> values({steps, C});
    const std::size_t valid = std::min(steps, T - s);
    for (std::size_t t = 0; t < valid; ++t)
      for (std::size_t c = 0; c < C; ++c) values(t, c) = seq.values(s + t, c);
    Clip clip;
    clip.video = video.id;
    clip.index = k;
    clip.features = FeatureSequence{std::move(values), fps_step, 0.0};
    clip.offset_frame = seq.origin_frame + static_cast<double>(s) * fps_step;
    clip.valid_steps = valid;
    clip.video_frames = video.duration_frames;
    clip.annotation = window_annotation(video.annotation, clip.offset_frame, 1.0,
                                        static_cast<double>(steps) * fps_step);
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace afsd
