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

// Plain SVG line charts for training curves and precision/recall curves.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "afsd/config.hpp"
#include "afsd/eval.hpp"

namespace afsd {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

struct ChartOptions {
  std::string title, x_label, y_label;
  double width = 640, height = 400;
  bool unit_axes = false;  // fix both axes to [0, 1]
};

inline std::string svg_line_chart(const std::vector<Series>& series, const ChartOptions& o) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                   "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!o.unit_axes) {
    x0 = y0 = INFINITY;
    x1 = y1 = -INFINITY;
    for (const auto& s : series) {
      for (const auto& [x, y] : s.points) {
        if (!std::isfinite(x) || !std::isfinite(y)) continue;
        x0 = std::min(x0, x), x1 = std::max(x1, x);
        y0 = std::min(y0, y), y1 = std::max(y1, y);
      }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    y0 = std::min(y0, 0.0);
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
  }
  const double left = 60, right = 150, top = 36, bottom = 48;
  const double pw = o.width - left - right, ph = o.height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1 - (y - y0) / (y1 - y0)) * ph; };
  using detail::fmt;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(o.width) << "\" height=\"" << fmt(o.height)
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fmt(o.width / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << detail::xml_escape(o.title) << "</text>\n";
  os << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(pw) << "\" height=\"" << fmt(ph)
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4, fy = y0 + (y1 - y0) * i / 4;
    os << "<text x=\"" << fmt(px(fx)) << "\" y=\"" << fmt(top + ph + 16) << "\" text-anchor=\"middle\">" << fmt(fx)
       << "</text>\n";
    os << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(py(fy) + 4) << "\" text-anchor=\"end\">" << fmt(fy)
       << "</text>\n";
    os << "<line x1=\"" << fmt(left) << "\" x2=\"" << fmt(left + pw) << "\" y1=\"" << fmt(py(fy)) << "\" y2=\""
       << fmt(py(fy)) << "\" stroke=\"#ddd\"/>\n";
  }
  os << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"" << fmt(o.height - 10) << "\" text-anchor=\"middle\">"
     << detail::xml_escape(o.x_label) << "</text>\n";
  os << "<text transform=\"translate(14," << fmt(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << detail::xml_escape(o.y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (const auto& [x, y] : series[k].points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      os << (first ? "" : " ") << fmt(px(x)) << ',' << fmt(py(y));
      first = false;
    }
    os << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << fmt(left + pw + 10) << "\" x2=\"" << fmt(left + pw + 30) << "\" y1=\"" << fmt(ly - 4)
       << "\" y2=\"" << fmt(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << fmt(left + pw + 36) << "\" y=\"" << fmt(ly) << "\">" << detail::xml_escape(series[k].name)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Centered moving average; keeps the curve readable over noisy per-clip
// losses.
inline std::vector<std::pair<double, double>> moving_average(const std::vector<std::pair<double, double>>& pts,
                                                             std::size_t window) {
  if (window <= 1) return pts;
  std::vector<std::pair<double, double>> out;
  out.reserve(pts.size());
  const std::size_t half = window / 2;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::size_t a = i >= half ? i - half : 0, b = std::min(pts.size(), i + half + 1);
    double sum = 0;
    for (std::size_t j = a; j < b; ++j) sum += pts[j].second;
    out.emplace_back(pts[i].first, sum / static_cast<double>(b - a));
  }
  return out;
}

// Loss curves from a JSON-lines training log (the summary line is skipped).
inline std::vector<Series> training_series(std::istream& log, const std::string& prefix = "") {
  std::vector<std::string> keys = {"total", "consistency"};
  std::vector<Series> out;
  for (const auto& k : keys) out.push_back({prefix + k, {}});
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) {
    ++n;
    if (line.empty()) continue;
    const Json rec = Json::parse(line, nullptr, false);
    if (rec.is_discarded()) throw FormatError("training log line " + std::to_string(n) + ": not JSON");
    if (rec.contains("summary")) continue;
    const double step = rec.at("step").get<double>();
    for (std::size_t i = 0; i < keys.size(); ++i) out[i].points.emplace_back(step, rec.at(keys[i]).get<double>());
  }
  const std::size_t window = std::max<std::size_t>(1, out[0].points.size() / 50);
  for (auto& s : out) s.points = moving_average(s.points, window);
  return out;
}

// One precision/recall curve per class at one tIoU threshold.
inline std::vector<Series> pr_series(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                     const std::vector<std::string>& labels, double threshold) {
  std::vector<Series> out;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const int label = static_cast<int>(k + 1);
    std::vector<Detection> d;
    std::vector<GroundTruth> g;
    for (const auto& x : dets)
      if (x.label == label) d.push_back(x);
    for (const auto& x : gts)
      if (x.label == label) g.push_back(x);
    if (g.empty()) continue;
    Series s{labels[k] + " (AP " + detail::fmt(std::round(1000 * average_precision(dets, gts, label, threshold)) / 10) +
                 ")",
             {}};
    for (const auto& p : precision_recall(d, g, threshold)) s.points.emplace_back(p.recall, p.precision);
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path);
  os << text;
}

}  // namespace afsd
