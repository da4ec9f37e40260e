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

// The multi-step runs behind each command: every one takes a resolved
// configuration, writes its artifacts under an output directory together
// with resolved_config.json, and is deterministic given the configuration.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "afsd/config.hpp"
#include "afsd/eval.hpp"
#include "afsd/head_check.hpp"
#include "afsd/infer.hpp"
#include "afsd/kernel_checks.hpp"
#include "afsd/report.hpp"
#include "afsd/synth.hpp"
#include "afsd/train.hpp"

namespace afsd {

// "rgb", "flow" or "both".
inline std::vector<std::string> parse_streams(const std::string& s) {
  if (s == "both") return {"flow", "rgb"};
  if (s == "rgb" || s == "flow") return {s};
  throw ArgumentError("--stream must be rgb, flow or both, got '" + s + "'");
}

inline void prepare_out_dir(const std::string& out_dir, const Config& cfg) {
  if (out_dir.empty()) throw ArgumentError("an output directory is required");
  std::filesystem::create_directories(out_dir);
  write_resolved_config(cfg, (std::filesystem::path(out_dir) / "resolved_config.json").string());
}

inline std::size_t stream_channels(const std::vector<VideoRecord>& videos, const std::string& stream) {
  if (videos.empty()) throw ArgumentError("no videos to read channel count from");
  const std::size_t c = videos.front().streams.at(stream).channels();
  for (const auto& v : videos) {
    if (v.streams.at(stream).channels() != c) {
      throw FormatError("stream " + stream + ": video " + v.id + " has " +
                        std::to_string(v.streams.at(stream).channels()) + " channels, expected " +
                        std::to_string(c));
    }
  }
  return c;
}

// Dataset directory: annotations.json plus features/<stream>/<id>.afsd.
inline void run_synth(const Config& cfg, const std::string& out_dir) {
  prepare_out_dir(out_dir, cfg);
  write_dataset(out_dir, generate_synthetic(cfg.synth, cfg.seed));
}

struct StreamTraining {
  std::string stream;
  TrainSummary summary;
};

// One model per stream under <out>/<stream>/: model.ckpt, per-epoch
// checkpoints and train_log.jsonl.
inline std::vector<StreamTraining> run_train(const Config& cfg, const std::string& data_dir,
                                             const std::vector<std::string>& streams, const std::string& out_dir) {
  prepare_out_dir(out_dir, cfg);
  AnnotationDocument doc;
  const auto videos = load_dataset(data_dir, "train", streams, &doc);
  if (videos.empty()) throw ArgumentError(data_dir + ": no videos in the train subset");
  std::vector<StreamTraining> out;
  for (const auto& stream : streams) {
    const auto dir = std::filesystem::path(out_dir) / stream;
    std::filesystem::create_directories(dir);
    Model<double> model(resolve_model_config(cfg, stream_channels(videos, stream), doc.num_classes()));
    std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
    if (!log) throw FormatError("cannot write " + (dir / "train_log.jsonl").string());
    out.push_back({stream, train(model, training_clips(videos, stream, cfg.data), cfg, {dir.string(), &log})});
  }
  return out;
}

inline std::string checkpoint_path(const std::string& model_dir, const std::string& stream) {
  return (std::filesystem::path(model_dir) / stream / "model.ckpt").string();
}

// Loads <model_dir>/<stream>/model.ckpt for each stream; a missing
// checkpoint is a usage error.
inline std::vector<std::unique_ptr<Model<double>>> load_models(const Config& cfg, const std::string& model_dir,
                                                               const std::vector<std::string>& streams,
                                                               const std::vector<VideoRecord>& videos,
                                                               int num_classes) {
  std::vector<std::unique_ptr<Model<double>>> out;
  for (const auto& stream : streams) {
    const auto path = checkpoint_path(model_dir, stream);
    if (!std::filesystem::exists(path)) throw ArgumentError("missing checkpoint " + path);
    auto m = std::make_unique<Model<double>>(resolve_model_config(cfg, stream_channels(videos, stream), num_classes));
    load_checkpoint(m->parameters(), path);
    out.push_back(std::move(m));
  }
  return out;
}

// <out>/detections.jsonl for one subset.
inline std::vector<Detection> run_infer(const Config& cfg, const std::string& data_dir, const std::string& subset,
                                        const std::string& model_dir, const std::vector<std::string>& streams,
                                        const std::string& out_dir) {
  prepare_out_dir(out_dir, cfg);
  AnnotationDocument doc;
  const auto videos = load_dataset(data_dir, subset, streams, &doc);
  if (videos.empty()) throw ArgumentError(data_dir + ": no videos in subset '" + subset + "'");
  const auto models = load_models(cfg, model_dir, streams, videos, doc.num_classes());
  std::map<std::string, const Model<double>*> by_stream;
  for (std::size_t i = 0; i < streams.size(); ++i) by_stream[streams[i]] = models[i].get();
  const auto dets = detect(by_stream, videos, cfg);
  write_detections((std::filesystem::path(out_dir) / "detections.jsonl").string(), dets, doc);
  return dets;
}

// <out>/metrics.json; returns the report for printing.
inline EvalReport run_eval(const Config& cfg, const std::string& annotations, const std::string& detections,
                           const std::string& subset, const std::string& out_dir) {
  prepare_out_dir(out_dir, cfg);
  const auto doc = read_annotations(annotations);
  const auto gts = ground_truth_seconds(doc, subset);
  if (gts.empty()) throw ArgumentError(annotations + ": no ground truth in subset '" + subset + "'");
  const auto report = mean_ap(read_detections(detections, doc), gts, doc.labels, cfg.eval_thresholds);
  std::ofstream((std::filesystem::path(out_dir) / "metrics.json"), std::ios::binary)
      << report_to_json(report).dump(2) << '\n';
  return report;
}

struct GradCheckSummary {
  std::vector<NamedGradCheck> checks;
  double max_rel_error = 0;
};

// Every kernel plus the composed head with the configured pooling.
inline GradCheckSummary run_gradcheck(const Config& cfg, std::ostream* progress = nullptr) {
  GradCheckSummary s;
  s.checks = run_kernel_checks(cfg.seed);
  s.checks.push_back({"composed_head", check_composed_head(cfg.seed, cfg.model.pooling)});
  for (const auto& c : s.checks) {
    s.max_rel_error = std::max(s.max_rel_error, c.report.max_rel_error);
    if (progress) {
      char line[160];
      std::snprintf(line, sizeof(line), "%-22s checked %6zu excluded %4zu max rel error %.3e\n", c.name.c_str(),
                    c.report.checked, c.report.excluded, c.report.max_rel_error);
      *progress << line;
    }
  }
  return s;
}

inline Json gradcheck_json(const GradCheckSummary& s, double tolerance) {
  Json checks = Json::array();
  for (const auto& c : s.checks) {
    checks.push_back({{"name", c.name}, {"checked", c.report.checked}, {"excluded", c.report.excluded},
                      {"max_rel_error", c.report.max_rel_error}});
  }
  return {{"checks", checks}, {"max_rel_error", s.max_rel_error}, {"tolerance", tolerance},
          {"passed", s.max_rel_error < tolerance}};
}

struct BenchResult {
  std::size_t clips = 0;
  std::size_t clip_steps = 0;
  double infer_clips_per_second = 0;
  double train_clips_per_second = 0;
};

// Throughput of inference and of one detection training step on random
// clips with the configured geometry and synthetic channel count.
inline BenchResult run_bench(const Config& cfg, std::size_t clips) {
  if (clips == 0) throw ArgumentError("bench: --clips must be positive");
  const auto fps_step = static_cast<double>(cfg.synth.frames_per_step);
  BenchResult r;
  r.clips = clips;
  r.clip_steps = clip_grid(cfg.data.clip_length, 0, fps_step).first;
  Model<double> model(resolve_model_config(cfg, static_cast<std::size_t>(cfg.synth.channels),
                                           cfg.model.num_classes > 0 ? cfg.model.num_classes : cfg.synth.num_classes));
  std::mt19937_64 rng(cfg.seed);
  std::vector<Clip> batch(clips);
  for (auto& c : batch) {
    c.video = "bench";
    c.features = FeatureSequence{random_tensor({r.clip_steps, static_cast<std::size_t>(cfg.synth.channels)}, rng),
                                 fps_step, 0.0};
    c.valid_steps = r.clip_steps;
    c.video_frames = static_cast<double>(r.clip_steps) * fps_step;
    c.annotation.instances = {{c.video_frames * 0.25, c.video_frames * 0.5, 1}};
  }
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  std::size_t sink = 0;
  for (std::size_t k = 0; k < clips; ++k) sink += clip_candidates(model, batch[k], k, true).size();
  const double infer_s = std::chrono::duration<double>(clock::now() - t0).count();
  Config tc = cfg;
  tc.bcl.enabled = false;
  tc.train.epochs = 1;
  tc.train.max_steps = 0;
  t0 = clock::now();
  train(model, batch, tc);
  const double train_s = std::chrono::duration<double>(clock::now() - t0).count();
  r.infer_clips_per_second = sink > 0 ? static_cast<double>(clips) / infer_s : 0;
  r.train_clips_per_second = static_cast<double>(clips) / train_s;
  return r;
}

// training_curves.svg from <model_dir>/<stream>/train_log.jsonl and, when
// detections are given, pr_curves.svg at the given tIoU threshold.
inline std::vector<std::string> run_report(const Config& cfg, const std::string& model_dir,
                                           const std::vector<std::string>& streams, const std::string& annotations,
                                           const std::string& detections, const std::string& subset,
                                           double threshold, const std::string& out_dir) {
  namespace fs = std::filesystem;
  prepare_out_dir(out_dir, cfg);
  std::vector<std::string> written;
  if (!model_dir.empty()) {
    std::vector<Series> series;
    for (const auto& stream : streams) {
      const auto path = fs::path(model_dir) / stream / "train_log.jsonl";
      std::ifstream is(path);
      if (!is) throw ArgumentError("missing training log " + path.string());
      for (auto& s : training_series(is, stream + " ")) series.push_back(std::move(s));
    }
    const auto path = (fs::path(out_dir) / "training_curves.svg").string();
    write_text_file(path, svg_line_chart(series, {"Training losses (moving average)", "step", "loss"}));
    written.push_back(path);
  }
  if (!detections.empty()) {
    const auto doc = read_annotations(annotations);
    const auto series = pr_series(read_detections(detections, doc), ground_truth_seconds(doc, subset), doc.labels,
                                  threshold);
    char title[96];
    std::snprintf(title, sizeof(title), "Precision / recall at tIoU %.2f (%s)", threshold, subset.c_str());
    const auto path = (fs::path(out_dir) / "pr_curves.svg").string();
    ChartOptions o{title, "recall", "precision"};
    o.unit_axes = true;
    write_text_file(path, svg_line_chart(series, o));
    written.push_back(path);
  }
  if (written.empty()) throw ArgumentError("report: give --model-dir and/or --detections");
  return written;
}

}  // namespace afsd
