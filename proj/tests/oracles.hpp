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

// Brute-force reference implementations shared by the unit tests and the
// acceptance suite.

#include <algorithm>
#include <cmath>
#include <vector>

#include "afsd/losses.hpp"

namespace afsd::oracle {

inline CoarseProposal proposal_at(double anchor, double start, double end) {
  CoarseProposal p;
  p.anchor = anchor;
  p.start = start;
  p.end = end;
  return p;
}

// Containment, narrowest-instance tie break and tIoU > 0.5 refinement
// written out directly from their definitions.
inline AssignmentResult brute_force_assign(const std::vector<CoarseProposal>& props, const Annotation& ann) {
  AssignmentResult out;
  for (const auto& p : props) {
    std::vector<std::size_t> inside;
    for (std::size_t j = 0; j < ann.instances.size(); ++j)
      if (ann.instances[j].start <= p.anchor && p.anchor <= ann.instances[j].end) inside.push_back(j);
    std::stable_sort(inside.begin(), inside.end(), [&](std::size_t a, std::size_t b) {
      return ann.instances[a].end - ann.instances[a].start < ann.instances[b].end - ann.instances[b].start;
    });
    if (inside.empty()) {
      out.coarse.emplace_back();
      out.refined.emplace_back();
      continue;
    }
    const auto& g = ann.instances[inside.front()];
    out.coarse.push_back(CoarseTarget{inside.front(), g.interval(), g.label});
    ++out.num_coarse;
    const double inter = std::max(0.0, std::min(p.end, g.end) - std::max(p.start, g.start));
    const double uni = std::max(p.end, g.end) - std::min(p.start, g.start);
    const double iou = uni > 0 ? inter / uni : 0.0;
    if (iou > 0.5) {
      const double w = p.end - p.start;
      out.refined.push_back(RefinedTarget{inside.front(), g.interval(),
                                          {(g.start - p.start) * 2 / w, (g.end - p.end) * 2 / w},
                                          g.label, iou});
      ++out.num_refined;
    } else {
      out.refined.emplace_back();
    }
  }
  return out;
}

// Max over the index span of a region, by enumeration.
inline double brute_region_max(const Tensor<double>& f, const Region& r, std::size_t c) {
  const double T = static_cast<double>(f.dim(0));
  const auto lo = static_cast<std::size_t>(std::floor(std::clamp(r.lo, 0.0, T - 1)));
  const auto hi = static_cast<std::size_t>(std::ceil(std::clamp(r.hi, 0.0, T - 1)));
  double m = -INFINITY;
  for (std::size_t i = lo; i <= hi; ++i) m = std::max(m, f(i, c));
  return m;
}

}  // namespace afsd::oracle
