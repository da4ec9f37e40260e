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

#include <cstddef>
#include <string>

#include "afsd/errors.hpp"
#include "afsd/tensor.hpp"

namespace afsd {

// T x C feature matrix on a regular temporal grid measured in input frames.
struct FeatureSequence {
  Tensor<double> values;
  double frames_per_step = 1.0;
  double origin_frame = 0.0;

  std::size_t length() const { return values.dim(0); }
  std::size_t channels() const { return values.dim(1); }
  double time_of(std::size_t step) const {
    return origin_frame + static_cast<double>(step) * frames_per_step;
  }
  double duration_frames() const {
    return static_cast<double>(length()) * frames_per_step;
  }

  void validate() const {
    if (values.rank() != 2) throw DimensionError("feature sequence must be T x C");
    if (!(frames_per_step > 0)) throw ArgumentError("frames_per_step must be positive");
  }
};

}  // namespace afsd
