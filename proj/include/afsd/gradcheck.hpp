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
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "afsd/errors.hpp"
#include "afsd/tape.hpp"
#include "afsd/tensor.hpp"

namespace afsd {

// Outcome of comparing analytic gradients with central differences.
//
// The error for one coordinate is |analytic - numeric| / max(|analytic|,
// |numeric|, floor). Coordinates where the function is not smooth within
// +-h (a ReLU kink, a max-pool argmax switch, or a discrete jump) are
// detected from the mismatch of the two one-sided slopes and excluded.
struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

using ScalarFunction =
    std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckOptions {
  double h = 1e-5;
  double denominator_floor = 1e-3;
  // Relative one-sided slope mismatch above which a coordinate counts as
  // non-smooth.
  double kink_tolerance = 1e-3;
  // Optional subset of coordinates per input; empty means all.
  std::vector<std::vector<std::size_t>> coordinates;
};

inline GradCheckReport check_gradients(const ScalarFunction& f,
                                       std::vector<Tensor<double>> inputs,
                                       const GradCheckOptions& opts = {}) {
  if (opts.h < 1e-6 || opts.h > 1e-4) {
    throw ArgumentError("check_gradients: h must lie in [1e-6, 1e-4]");
  }
  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return f(tape, vars).value().item();
  };

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.variable(x));
    auto root = f(tape, vars);
    tape.backward(root);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  GradCheckReport report;
  const double f0 = evaluate(inputs);
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    std::vector<std::size_t> coords;
    if (a < opts.coordinates.size() && !opts.coordinates[a].empty()) {
      coords = opts.coordinates[a];
    } else {
      coords.resize(inputs[a].size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    }
    for (auto i : coords) {
      const double saved = inputs[a][i];
      inputs[a][i] = saved + opts.h;
      const double fp = evaluate(inputs);
      inputs[a][i] = saved - opts.h;
      const double fm = evaluate(inputs);
      inputs[a][i] = saved;

      const double right = (fp - f0) / opts.h;
      const double left = (f0 - fm) / opts.h;
      const double slope_scale = std::max({1.0, std::abs(right), std::abs(left)});
      if (std::abs(right - left) > opts.kink_tolerance * slope_scale) {
        ++report.excluded;
        continue;
      }
      const double numeric = (fp - fm) / (2 * opts.h);
      const double g = analytic[a][i];
      const double denom =
          std::max({std::abs(g), std::abs(numeric), opts.denominator_floor});
      const double err = std::abs(g - numeric) / denom;
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = a;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace afsd
