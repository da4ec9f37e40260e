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

// Run configuration. Every field has a dotted key, a provenance tag
// ("paper" for values taken from the published implementation details,
// "artifact" for knobs this toolkit adds) and a validator. Config files are
// flat JSON objects {key: value}; unknown keys are rejected.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "afsd/errors.hpp"
#include "afsd/losses.hpp"
#include "afsd/model.hpp"
#include "json.hpp"

namespace afsd {

using Json = nlohmann::ordered_json;

enum class ClipMode { kSliding, kResample };
enum class NmsKind { kLinear, kGaussian };

struct BclConfig {
  bool enabled = true;
  double delta_b = 100.0;
  double radius = 2.0;  // frame-level steps
  ActNorm norm = ActNorm::kTanh;
  bool symmetric_anchor = false;
};

struct TrainConfig {
  int epochs = 16;
  double lr = 1e-5;
  double weight_decay = 1e-3;
  int batch_size = 1;
  long max_steps = 0;  // 0: no cap
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool skip_empty_clips = false;
};

struct DataConfig {
  ClipMode clip_mode = ClipMode::kSliding;
  int clip_length = 256;  // frames
  int train_overlap = 30;
  int test_overlap = 128;
  int resample_length = 768;
};

struct InferConfig {
  NmsKind nms = NmsKind::kLinear;
  double nms_threshold = 0.5;
  double nms_sigma = 0.5;
  double score_floor = 1e-4;
  int top_k = 2000;
  int max_per_video = 200;
  bool drop_cut_at_edges = true;
};

struct SynthConfig {
  int num_train = 20;
  int num_test = 5;
  int num_classes = 4;
  int channels = 16;
  double fps = 10.0;
  int frames_per_step = 4;
  int min_frames = 512;
  int max_frames = 1024;
  int min_actions = 2;
  int max_actions = 4;
  int min_action_frames = 24;
  int max_action_frames = 120;
  double snr = 1.0;
};

struct Config {
  ModelConfig model = [] {
    ModelConfig m;
    m.num_classes = 0;  // taken from the annotation vocabulary
    return m;
  }();
  LossConfig loss;
  BclConfig bcl;
  TrainConfig train;
  DataConfig data;
  InferConfig infer;
  std::vector<double> eval_thresholds = {0.3, 0.4, 0.5, 0.6, 0.7};
  SynthConfig synth;
  std::uint64_t seed = 0;
};

struct ConfigField {
  std::string key;
  std::string provenance;  // "paper" or "artifact"
  std::string help;
  std::function<Json(const Config&)> get;
  // Returns a diagnostic, or an empty string on success.
  std::function<std::string(Config&, const Json&)> set;
  std::function<std::string(const Config&)> check;
};

namespace detail {

template <class T>
std::string json_to(const Json& j, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) return "expected true/false";
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (j.is_number_integer()) {
      if constexpr (std::is_unsigned_v<T>) {
        if (j.is_number_unsigned() || j.get<long long>() >= 0) {
          out = j.get<T>();
          return {};
        }
        return "expected a non-negative integer";
      }
      out = j.get<T>();
      return {};
    }
    if (j.is_number_float() && std::floor(j.get<double>()) == j.get<double>()) {
      out = static_cast<T>(j.get<double>());
      return {};
    }
    return "expected an integer";
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) return "expected a number";
    out = j.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) return "expected a string";
    out = j.get<std::string>();
  } else {
    if (!j.is_array()) return "expected a list of numbers";
    T tmp;
    for (const auto& v : j) {
      if (!v.is_number()) return "expected a list of numbers";
      tmp.push_back(v.get<double>());
    }
    out = std::move(tmp);
  }
  return {};
}

template <class T, class Access>
ConfigField field(std::string key, std::string provenance, std::string help, Access access,
                  std::function<std::string(const T&)> check = {}) {
  ConfigField f;
  f.key = std::move(key);
  f.provenance = std::move(provenance);
  f.help = std::move(help);
  f.get = [access](const Config& c) { return Json(access(const_cast<Config&>(c))); };
  f.set = [access](Config& c, const Json& j) { return json_to<T>(j, access(c)); };
  if (check) f.check = [access, check](const Config& c) { return check(access(const_cast<Config&>(c))); };
  return f;
}

template <class E, class Access>
ConfigField enum_field(std::string key, std::string provenance, std::string help, Access access,
                       std::vector<std::pair<std::string, E>> names) {
  ConfigField f;
  f.key = std::move(key);
  f.provenance = std::move(provenance);
  f.help = std::move(help);
  f.get = [access, names](const Config& c) {
    for (const auto& [n, v] : names)
      if (v == access(const_cast<Config&>(c))) return Json(n);
    throw InternalError("enum value without a name");
  };
  f.set = [access, names](Config& c, const Json& j) -> std::string {
    std::string allowed;
    for (const auto& [n, v] : names) {
      if (j.is_string() && j.get<std::string>() == n) {
        access(c) = v;
        return {};
      }
      allowed += (allowed.empty() ? "" : ", ") + n;
    }
    return "expected one of {" + allowed + "}";
  };
  return f;
}

template <class T>
std::function<std::string(const T&)> positive() {
  return [](const T& v) { return v > T(0) ? std::string() : std::string("must be > 0"); };
}
template <class T>
std::function<std::string(const T&)> non_negative() {
  return [](const T& v) { return v >= T(0) ? std::string() : std::string("must be >= 0"); };
}
inline std::function<std::string(const double&)> unit_interval() {
  return [](const double& v) { return v >= 0 && v <= 1 ? std::string() : std::string("must lie in [0, 1]"); };
}

}  // namespace detail

inline const std::vector<ConfigField>& config_schema() {
  using namespace detail;
  static const std::vector<ConfigField> schema = [] {
    const std::string P = "paper", A = "artifact";
    std::vector<ConfigField> s;
    // model
    s.push_back(field<std::size_t>("model.in_channels", A, "feature channels; 0 = from the data",
                                   [](Config& c) -> auto& { return c.model.in_channels; }));
    s.push_back(field<std::size_t>("model.channels", A, "pyramid width",
                                   [](Config& c) -> auto& { return c.model.channels; },
                                   positive<std::size_t>()));
    s.push_back(field<int>("model.num_levels", A, "pyramid levels",
                           [](Config& c) -> auto& { return c.model.num_levels; }, positive<int>()));
    s.push_back(field<int>("model.base_stride", A, "feature steps per level-0 step (power of two)",
                           [](Config& c) -> auto& { return c.model.base_stride; }, positive<int>()));
    s.push_back(field<int>("model.num_classes", A, "foreground classes; 0 = from the vocabulary",
                           [](Config& c) -> auto& { return c.model.num_classes; }, non_negative<int>()));
    s.push_back(field<int>("model.gn_groups", A, "GroupNorm groups",
                           [](Config& c) -> auto& { return c.model.gn_groups; }, positive<int>()));
    s.push_back(enum_field<PoolKind>("model.pooling", A, "boundary pooling operator",
                                     [](Config& c) -> auto& { return c.model.pooling; },
                                     {{"max", PoolKind::kMax}, {"mean", PoolKind::kMean},
                                      {"conv", PoolKind::kConv}, {"stack", PoolKind::kStack}}));
    s.push_back(field<double>("model.delta_a", P, "boundary region: outside fraction divisor",
                              [](Config& c) -> auto& { return c.model.delta_a; }, positive<double>()));
    s.push_back(field<double>("model.delta_b", P, "boundary region: inside fraction divisor",
                              [](Config& c) -> auto& { return c.model.delta_b; }, positive<double>()));
    s.push_back(field<double>("model.min_width", A, "minimum coarse proposal width (frames)",
                              [](Config& c) -> auto& { return c.model.min_width; }, positive<double>()));
    // loss
    s.push_back(field<double>("loss.lambda", P, "localization loss weight",
                              [](Config& c) -> auto& { return c.loss.lambda; }, non_negative<double>()));
    s.push_back(field<double>("loss.gamma", P, "quality loss weight",
                              [](Config& c) -> auto& { return c.loss.gamma; }, non_negative<double>()));
    s.push_back(field<double>("loss.focal_alpha", A, "focal loss balance",
                              [](Config& c) -> auto& { return c.loss.focal_alpha; }, unit_interval()));
    s.push_back(field<double>("loss.focal_gamma", A, "focal loss focusing",
                              [](Config& c) -> auto& { return c.loss.focal_gamma; }, non_negative<double>()));
    s.push_back(enum_field<QualityTarget>("loss.quality", A, "quality target (none disables the branch)",
                                          [](Config& c) -> auto& { return c.loss.quality; },
                                          {{"tiou", QualityTarget::kTiou},
                                           {"centerness", QualityTarget::kCenterness},
                                           {"none", QualityTarget::kNone}}));
    // boundary consistency learning
    s.push_back(field<bool>("bcl.enabled", A, "second optimisation step on the consistency loss",
                            [](Config& c) -> auto& { return c.bcl.enabled; }));
    s.push_back(field<double>("bcl.delta_b", P, "inside fraction divisor for the triplet regions",
                              [](Config& c) -> auto& { return c.bcl.delta_b; }, positive<double>()));
    s.push_back(field<double>("bcl.radius", A, "indicator neighbourhood (frame-level steps)",
                              [](Config& c) -> auto& { return c.bcl.radius; }, non_negative<double>()));
    s.push_back(enum_field<ActNorm>("bcl.norm", A, "confidence normalisation",
                                    [](Config& c) -> auto& { return c.bcl.norm; },
                                    {{"tanh", ActNorm::kTanh}, {"clip01", ActNorm::kClip01},
                                     {"minmax", ActNorm::kMinMax}}));
    s.push_back(field<bool>("bcl.symmetric_anchor", A, "also anchor the triplet at the second fragment",
                            [](Config& c) -> auto& { return c.bcl.symmetric_anchor; }));
    // training
    s.push_back(field<int>("train.epochs", P, "training epochs",
                           [](Config& c) -> auto& { return c.train.epochs; }, positive<int>()));
    s.push_back(field<double>("train.lr", P, "learning rate",
                              [](Config& c) -> auto& { return c.train.lr; }, positive<double>()));
    s.push_back(field<double>("train.weight_decay", P, "decoupled weight decay",
                              [](Config& c) -> auto& { return c.train.weight_decay; },
                              non_negative<double>()));
    s.push_back(field<int>("train.batch_size", P, "clips per step (only 1 is supported)",
                           [](Config& c) -> auto& { return c.train.batch_size; },
                           std::function<std::string(const int&)>([](const int& v) {
                             return v == 1 ? std::string() : std::string("only batch size 1 is supported");
                           })));
    s.push_back(field<long>("train.max_steps", A, "cap on detection-loss steps; 0 = none",
                            [](Config& c) -> auto& { return c.train.max_steps; }, non_negative<long>()));
    s.push_back(field<double>("train.beta1", A, "Adam first-moment decay",
                              [](Config& c) -> auto& { return c.train.beta1; }, unit_interval()));
    s.push_back(field<double>("train.beta2", A, "Adam second-moment decay",
                              [](Config& c) -> auto& { return c.train.beta2; }, unit_interval()));
    s.push_back(field<double>("train.adam_eps", A, "Adam epsilon",
                              [](Config& c) -> auto& { return c.train.adam_eps; }, positive<double>()));
    s.push_back(field<bool>("train.skip_empty_clips", A, "skip training clips without instances",
                            [](Config& c) -> auto& { return c.train.skip_empty_clips; }));
    // data
    s.push_back(enum_field<ClipMode>("data.clip_mode", P, "sliding windows or whole-video resampling",
                                     [](Config& c) -> auto& { return c.data.clip_mode; },
                                     {{"sliding", ClipMode::kSliding}, {"resample", ClipMode::kResample}}));
    s.push_back(field<int>("data.clip_length", P, "clip length (frames)",
                           [](Config& c) -> auto& { return c.data.clip_length; }, positive<int>()));
    s.push_back(field<int>("data.train_overlap", P, "training clip overlap (frames)",
                           [](Config& c) -> auto& { return c.data.train_overlap; }, non_negative<int>()));
    s.push_back(field<int>("data.test_overlap", P, "test clip overlap (frames)",
                           [](Config& c) -> auto& { return c.data.test_overlap; }, non_negative<int>()));
    s.push_back(field<int>("data.resample_length", P, "frames per video in resample mode",
                           [](Config& c) -> auto& { return c.data.resample_length; }, positive<int>()));
    // inference
    s.push_back(enum_field<NmsKind>("infer.nms", A, "Soft-NMS decay",
                                    [](Config& c) -> auto& { return c.infer.nms; },
                                    {{"linear", NmsKind::kLinear}, {"gaussian", NmsKind::kGaussian}}));
    s.push_back(field<double>("infer.nms_threshold", P, "Soft-NMS tIoU threshold",
                              [](Config& c) -> auto& { return c.infer.nms_threshold; }, unit_interval()));
    s.push_back(field<double>("infer.nms_sigma", A, "Gaussian Soft-NMS width",
                              [](Config& c) -> auto& { return c.infer.nms_sigma; }, positive<double>()));
    s.push_back(field<double>("infer.score_floor", A, "drop detections scoring below",
                              [](Config& c) -> auto& { return c.infer.score_floor; }, unit_interval()));
    s.push_back(field<int>("infer.top_k", A, "candidates kept per clip before NMS",
                           [](Config& c) -> auto& { return c.infer.top_k; }, positive<int>()));
    s.push_back(field<int>("infer.max_per_video", A, "detections kept per video after NMS",
                           [](Config& c) -> auto& { return c.infer.max_per_video; }, positive<int>()));
    s.push_back(field<bool>("infer.drop_cut_at_edges", A,
                            "drop detections cut by an interior clip edge that a neighbouring clip covers",
                            [](Config& c) -> auto& { return c.infer.drop_cut_at_edges; }));
    // evaluation
    s.push_back(field<std::vector<double>>(
        "eval.thresholds", P, "tIoU thresholds", [](Config& c) -> auto& { return c.eval_thresholds; },
        std::function<std::string(const std::vector<double>&)>([](const std::vector<double>& t) {
          if (t.empty()) return std::string("needs at least one threshold");
          for (std::size_t i = 0; i < t.size(); ++i) {
            if (!(t[i] > 0 && t[i] <= 1)) return std::string("thresholds must lie in (0, 1]");
            if (i > 0 && !(t[i] > t[i - 1])) return std::string("thresholds must be strictly increasing");
          }
          return std::string();
        })));
    // synthetic data
    s.push_back(field<int>("synth.num_train", A, "training videos",
                           [](Config& c) -> auto& { return c.synth.num_train; }, non_negative<int>()));
    s.push_back(field<int>("synth.num_test", A, "test videos",
                           [](Config& c) -> auto& { return c.synth.num_test; }, non_negative<int>()));
    s.push_back(field<int>("synth.num_classes", A, "action classes",
                           [](Config& c) -> auto& { return c.synth.num_classes; }, positive<int>()));
    s.push_back(field<int>("synth.channels", A, "feature channels",
                           [](Config& c) -> auto& { return c.synth.channels; }, positive<int>()));
    s.push_back(field<double>("synth.fps", P, "frame rate",
                              [](Config& c) -> auto& { return c.synth.fps; }, positive<double>()));
    s.push_back(field<int>("synth.frames_per_step", A, "frames per feature step",
                           [](Config& c) -> auto& { return c.synth.frames_per_step; }, positive<int>()));
    s.push_back(field<int>("synth.min_frames", A, "shortest video (frames)",
                           [](Config& c) -> auto& { return c.synth.min_frames; }, positive<int>()));
    s.push_back(field<int>("synth.max_frames", A, "longest video (frames)",
                           [](Config& c) -> auto& { return c.synth.max_frames; }, positive<int>()));
    s.push_back(field<int>("synth.min_actions", A, "fewest actions per video",
                           [](Config& c) -> auto& { return c.synth.min_actions; }, non_negative<int>()));
    s.push_back(field<int>("synth.max_actions", A, "most actions per video",
                           [](Config& c) -> auto& { return c.synth.max_actions; }, non_negative<int>()));
    s.push_back(field<int>("synth.min_action_frames", A, "shortest action (frames)",
                           [](Config& c) -> auto& { return c.synth.min_action_frames; }, positive<int>()));
    s.push_back(field<int>("synth.max_action_frames", A, "longest action (frames)",
                           [](Config& c) -> auto& { return c.synth.max_action_frames; }, positive<int>()));
    s.push_back(field<double>("synth.snr", A, "planted signal amplitude over unit noise",
                              [](Config& c) -> auto& { return c.synth.snr; }, non_negative<double>()));
    s.push_back(field<std::uint64_t>("seed", A, "global seed (initialisation, shuffling, synthesis)",
                                     [](Config& c) -> auto& { return c.seed; }));
    return s;
  }();
  return schema;
}

inline const ConfigField* find_field(std::string_view key) {
  for (const auto& f : config_schema())
    if (f.key == key) return &f;
  return nullptr;
}

// Field-level diagnostics for the whole config; empty when valid.
inline std::vector<std::string> config_errors(const Config& c) {
  std::vector<std::string> errors;
  for (const auto& f : config_schema()) {
    if (!f.check) continue;
    if (auto msg = f.check(c); !msg.empty()) errors.push_back(f.key + ": " + msg);
  }
  if (c.model.gn_groups > 0 && c.model.channels % static_cast<std::size_t>(c.model.gn_groups) != 0) {
    errors.push_back("model.channels: must be divisible by model.gn_groups");
  }
  if (c.model.base_stride > 0 && (c.model.base_stride & (c.model.base_stride - 1)) != 0) {
    errors.push_back("model.base_stride: must be a power of two");
  }
  if (c.data.train_overlap >= c.data.clip_length) {
    errors.push_back("data.train_overlap: must be smaller than data.clip_length");
  }
  if (c.data.test_overlap >= c.data.clip_length) {
    errors.push_back("data.test_overlap: must be smaller than data.clip_length");
  }
  if (c.synth.min_frames > c.synth.max_frames) errors.push_back("synth.min_frames: exceeds synth.max_frames");
  if (c.synth.min_actions > c.synth.max_actions) errors.push_back("synth.min_actions: exceeds synth.max_actions");
  if (c.synth.min_action_frames > c.synth.max_action_frames) {
    errors.push_back("synth.min_action_frames: exceeds synth.max_action_frames");
  }
  return errors;
}

inline void validate_config(const Config& c) {
  const auto errors = config_errors(c);
  if (errors.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ConfigError(msg);
}

// Applies a flat {key: value} object; returns diagnostics for unknown keys
// and type mismatches. A resolved-config dump ({key: {"value", "provenance"}})
// is accepted too, so a run's resolved_config.json reproduces it.
inline std::vector<std::string> apply_json(Config& c, const Json& flat) {
  std::vector<std::string> errors;
  if (!flat.is_object()) return {"config: expected a JSON object of key/value pairs"};
  for (const auto& [key, value] : flat.items()) {
    const auto* f = find_field(key);
    if (!f) {
      errors.push_back(key + ": unknown key");
      continue;
    }
    const bool dumped = value.is_object() && value.contains("value") && value.contains("provenance");
    if (auto msg = f->set(c, dumped ? value.at("value") : value); !msg.empty()) errors.push_back(key + ": " + msg);
  }
  return errors;
}

// Parses "key=value". The value is read as JSON when possible and as a bare
// string otherwise, so `model.pooling=conv` and `train.lr=1e-3` both work.
inline std::pair<std::string, Json> parse_override(std::string_view kv) {
  const auto eq = kv.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(kv) + "': expected key=value");
  }
  std::string key(kv.substr(0, eq)), text(kv.substr(eq + 1));
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  return {key, value};
}

inline Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  Json j = Json::parse(is, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError(path + ": not valid JSON");
  return j;
}

// Defaults, then each file in order (later files win), then overrides,
// then validation.
inline Config load_config(const std::vector<std::string>& paths,
                          const std::vector<std::string>& overrides) {
  Config c;
  std::vector<std::string> errors;
  for (const auto& path : paths) {
    for (auto& e : apply_json(c, read_json_file(path))) errors.push_back(path + ": " + e);
  }
  for (const auto& kv : overrides) {
    auto [key, value] = parse_override(kv);
    Json one = Json::object();
    one[key] = value;
    for (auto& e : apply_json(c, one)) errors.push_back("--set " + e);
  }
  for (auto& e : config_errors(c)) errors.push_back(e);
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

inline Json to_flat_json(const Config& c) {
  Json out = Json::object();
  for (const auto& f : config_schema()) out[f.key] = f.get(c);
  return out;
}

// {key: {"value": v, "provenance": "paper" | "artifact"}} in schema order.
inline Json resolved_dump(const Config& c) {
  Json out = Json::object();
  for (const auto& f : config_schema()) out[f.key] = Json{{"value", f.get(c)}, {"provenance", f.provenance}};
  return out;
}

inline void write_resolved_config(const Config& c, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path);
  os << resolved_dump(c).dump(2) << '\n';
}

}  // namespace afsd
