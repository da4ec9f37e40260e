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

#include <algorithm>
#include <cmath>

#include "afsd/errors.hpp"

namespace afsd {

// Closed temporal interval in frames.
struct Interval {
  double start = 0;
  double end = 0;

  double width() const { return end - start; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

// Temporal intersection over union. Disjoint intervals and two points give 0.
inline double tiou(const Interval& a, const Interval& b) {
  if (a.start > a.end || b.start > b.end) {
    throw ArgumentError("tiou: interval start exceeds end");
  }
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  if (!(uni > 0) || !(inter > 0)) return 0.0;
  // Union of overlapping intervals is their hull.
  return inter / (a.width() + b.width() - inter);
}

struct BoundaryRegions {
  Interval start_region;
  Interval end_region;
};

// Regions around each boundary of a proposal: delta_a controls the part
// outside the proposal, delta_b the part inside.
inline BoundaryRegions boundary_regions(const Interval& proposal, double delta_a,
                                       double delta_b) {
  if (!(delta_a > 0) || !(delta_b > 0)) {
    throw ConfigError("boundary_regions: delta_a and delta_b must be positive");
  }
  const double w = proposal.end - proposal.start;
  return {{proposal.start - w / delta_a, proposal.start + w / delta_b},
          {proposal.end - w / delta_b, proposal.end + w / delta_a}};
}

// Raises a proposal narrower than `min_width` to that width about its center.
inline Interval clamp_width(Interval p, double min_width) {
  if (p.end - p.start < min_width) {
    const double c = 0.5 * (p.start + p.end);
    p.start = c - 0.5 * min_width;
    p.end = c + 0.5 * min_width;
  }
  return p;
}

// Coarse proposal of an anchor: start and end distances measured from the
// anchor time, widened to `min_width` when narrower.
inline Interval coarse_interval(double anchor, double d_start, double d_end, double min_width) {
  return clamp_width({anchor - d_start, anchor + d_end}, min_width);
}

// Refined boundaries from a coarse proposal and predicted offsets: each side
// moves by half the proposal width times its offset.
inline Interval apply_offsets(const Interval& coarse, double d_start, double d_end) {
  const double w = coarse.end - coarse.start;
  return {coarse.start + 0.5 * w * d_start, coarse.end + 0.5 * w * d_end};
}

// Offsets that apply_offsets maps `coarse` onto `target` with.
struct Offsets {
  double d_start = 0;
  double d_end = 0;
};

inline Offsets offset_labels(const Interval& coarse, const Interval& target) {
  const double w = coarse.end - coarse.start;
  if (!(w > 0)) throw ArgumentError("offset_labels: coarse proposal has no width");
  return {2.0 * (target.start - coarse.start) / w, 2.0 * (target.end - coarse.end) / w};
}

}  // namespace afsd
