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

// Differentiable kernels recorded on a Tape. Every op validates shapes,
// computes its forward value eagerly and registers an analytic backward.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "afsd/errors.hpp"
#include "afsd/tape.hpp"
#include "afsd/tensor.hpp"

namespace afsd {

enum class Activation { kRelu, kTanh, kSigmoid };

// Closed interval in fractional index units of the pooled sequence.
struct Region {
  double lo = 0;
  double hi = 0;
};

enum class PoolKind { kMax, kMean, kConv, kStack };

namespace detail {

template <class Real>
void require_rank(const Var<Real>& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + " input, got " +
                         shape_string(v.shape()));
  }
}

template <class Real>
void require_same_shape(const Var<Real>& a, const Var<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Integer index span [first, last] covered by a region after clamping both
// endpoints to [0, length - 1].
inline std::pair<std::size_t, std::size_t> region_span(const Region& r,
                                                       std::size_t length) {
  if (!(r.lo <= r.hi)) {
    throw ArgumentError("region lower bound exceeds upper bound");
  }
  const double top = static_cast<double>(length - 1);
  const double lo = std::clamp(r.lo, 0.0, top);
  const double hi = std::clamp(r.hi, 0.0, top);
  const auto first = static_cast<std::size_t>(std::floor(lo));
  const auto last = std::min(static_cast<std::size_t>(std::ceil(hi)), length - 1);
  if (first > last) throw InternalError("empty pooling region after clamping");
  return {first, last};
}

// Nearest-index lookups at the clamped lower end, midpoint and upper end.
inline std::array<std::size_t, 3> region_samples(const Region& r,
                                                 std::size_t length) {
  if (!(r.lo <= r.hi)) {
    throw ArgumentError("region lower bound exceeds upper bound");
  }
  const double top = static_cast<double>(length - 1);
  const double lo = std::clamp(r.lo, 0.0, top);
  const double hi = std::clamp(r.hi, 0.0, top);
  const double pos[3] = {lo, 0.5 * (lo + hi), hi};
  std::array<std::size_t, 3> out{};
  for (int k = 0; k < 3; ++k) {
    out[k] = std::min(static_cast<std::size_t>(std::floor(pos[k] + 0.5)), length - 1);
  }
  return out;
}

}  // namespace detail

// Cross-correlation along time with zero padding.
// x: T x Cin, w: K x Cin x Cout, b: Cout. Output T' x Cout with
// T' = floor((T + 2 pad - K) / stride) + 1.
template <class Real>
Var<Real> conv1d(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b,
                 int stride, int pad) {
  detail::require_rank(x, 2, "conv1d");
  detail::require_rank(w, 3, "conv1d");
  const auto& xv = x.value();
  const auto& wv = w.value();
  const std::size_t T = xv.dim(0), cin = xv.dim(1);
  const std::size_t K = wv.dim(0), cout = wv.dim(2);
  if (wv.dim(1) != cin) {
    throw DimensionError("conv1d: kernel input channels " + std::to_string(wv.dim(1)) +
                         " != feature channels " + std::to_string(cin));
  }
  if (b.value().size() != cout) {
    throw DimensionError("conv1d: bias length does not match output channels");
  }
  if (K % 2 == 0) throw ArgumentError("conv1d: kernel size must be odd");
  if (stride < 1 || pad < 0) throw ArgumentError("conv1d: stride >= 1 and pad >= 0 required");
  const long span = static_cast<long>(T) + 2L * pad - static_cast<long>(K);
  if (span < 0) throw ArgumentError("conv1d: empty output (input shorter than kernel)");
  const std::size_t Tout = static_cast<std::size_t>(span / stride) + 1;

  Tensor<Real> out({Tout, cout});
  const Real* xd = xv.values().data();
  const Real* wd = wv.values().data();
  const Real* bd = b.value().values().data();
  Real* od = out.values().data();
  for (std::size_t t = 0; t < Tout; ++t) {
    Real* orow = od + t * cout;
    for (std::size_t o = 0; o < cout; ++o) orow[o] = bd[o];
    for (std::size_t k = 0; k < K; ++k) {
      const long j = static_cast<long>(t) * stride + static_cast<long>(k) - pad;
      if (j < 0 || j >= static_cast<long>(T)) continue;
      const Real* xrow = xd + static_cast<std::size_t>(j) * cin;
      const Real* wk = wd + k * cin * cout;
      for (std::size_t c = 0; c < cin; ++c) {
        const Real xc = xrow[c];
        const Real* wrow = wk + c * cout;
        for (std::size_t o = 0; o < cout; ++o) orow[o] += xc * wrow[o];
      }
    }
  }

  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  return x.tape().record(
      std::move(out), {x, w, b},
      [=](Tape<Real>& tape, const Tensor<Real>& g) {
        const auto& xv = tape.value(xi);
        const auto& wv = tape.value(wi);
        const Real* gd = g.values().data();
        if (tape.requires_grad(bi)) {
          auto& db = tape.grad_buffer(bi);
          for (std::size_t t = 0; t < Tout; ++t)
            for (std::size_t o = 0; o < cout; ++o) db[o] += gd[t * cout + o];
        }
        const bool need_x = tape.requires_grad(xi), need_w = tape.requires_grad(wi);
        Real* dx = need_x ? tape.grad_buffer(xi).values().data() : nullptr;
        Real* dw = need_w ? tape.grad_buffer(wi).values().data() : nullptr;
        const Real* xd = xv.values().data();
        const Real* wd = wv.values().data();
        for (std::size_t t = 0; t < Tout; ++t) {
          const Real* grow = gd + t * cout;
          for (std::size_t k = 0; k < K; ++k) {
            const long j = static_cast<long>(t) * stride + static_cast<long>(k) - pad;
            if (j < 0 || j >= static_cast<long>(T)) continue;
            const std::size_t ju = static_cast<std::size_t>(j);
            for (std::size_t c = 0; c < cin; ++c) {
              const Real* wrow = wd + (k * cin + c) * cout;
              if (dx) {
                Real acc = 0;
                for (std::size_t o = 0; o < cout; ++o) acc += wrow[o] * grow[o];
                dx[ju * cin + c] += acc;
              }
              if (dw) {
                const Real xc = xd[ju * cin + c];
                Real* dwrow = dw + (k * cin + c) * cout;
                for (std::size_t o = 0; o < cout; ++o) dwrow[o] += xc * grow[o];
              }
            }
          }
        }
      });
}

// Group normalization over (time x channels-in-group), then per-channel affine.
template <class Real>
Var<Real> group_norm(const Var<Real>& x, int groups, const Var<Real>& gamma,
                     const Var<Real>& beta, Real eps) {
  detail::require_rank(x, 2, "group_norm");
  const std::size_t T = x.value().dim(0), C = x.value().dim(1);
  if (groups < 1 || C % static_cast<std::size_t>(groups) != 0) {
    throw ConfigError("group_norm: channel count " + std::to_string(C) +
                      " not divisible by groups " + std::to_string(groups));
  }
  if (!(eps > 0)) throw ConfigError("group_norm: eps must be positive");
  if (gamma.value().size() != C || beta.value().size() != C) {
    throw DimensionError("group_norm: affine parameters must have C entries");
  }
  const std::size_t G = static_cast<std::size_t>(groups), per = C / G;
  const Real n = static_cast<Real>(T * per);
  const auto& xv = x.value();
  Tensor<Real> xhat(xv.shape());
  std::vector<Real> inv_std(G);
  for (std::size_t g = 0; g < G; ++g) {
    Real mean = 0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = g * per; c < (g + 1) * per; ++c) mean += xv(t, c);
    mean /= n;
    Real var = 0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = g * per; c < (g + 1) * per; ++c) {
        const Real d = xv(t, c) - mean;
        var += d * d;
      }
    var /= n;
    inv_std[g] = Real(1) / std::sqrt(var + eps);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = g * per; c < (g + 1) * per; ++c)
        xhat(t, c) = (xv(t, c) - mean) * inv_std[g];
  }
  Tensor<Real> out(xv.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) out(t, c) = gv[c] * xhat(t, c) + bv[c];

  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<Real>& tape, const Tensor<Real>& g) {
        if (tape.requires_grad(gi)) {
          auto& dg = tape.grad_buffer(gi);
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < C; ++c) dg[c] += g(t, c) * xhat(t, c);
        }
        if (tape.requires_grad(bi)) {
          auto& db = tape.grad_buffer(bi);
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < C; ++c) db[c] += g(t, c);
        }
        if (!tape.requires_grad(xi)) return;
        const auto& gv = tape.value(gi);
        auto& dx = tape.grad_buffer(xi);
        for (std::size_t grp = 0; grp < G; ++grp) {
          Real sum_d = 0, sum_dx = 0;
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = grp * per; c < (grp + 1) * per; ++c) {
              const Real d = g(t, c) * gv[c];
              sum_d += d;
              sum_dx += d * xhat(t, c);
            }
          const Real scale = inv_std[grp] / n;
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = grp * per; c < (grp + 1) * per; ++c) {
              const Real d = g(t, c) * gv[c];
              dx(t, c) += scale * (n * d - sum_d - xhat(t, c) * sum_dx);
            }
        }
      });
}

template <class Real>
Var<Real> pointwise(const Var<Real>& x, Activation kind) {
  Tensor<Real> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const Real v = xv[i];
    switch (kind) {
      case Activation::kRelu: out[i] = v <= 0 ? Real(0) : v; break;  // NaN propagates
      case Activation::kTanh: out[i] = std::tanh(v); break;
      case Activation::kSigmoid:
        out[i] = v >= 0 ? Real(1) / (Real(1) + std::exp(-v))
                        : std::exp(v) / (Real(1) + std::exp(v));
        break;
    }
  }
  const std::size_t xi = x.id();
  auto y = out;
  return x.tape().record(
      std::move(out), {x}, [=, y = std::move(y)](Tape<Real>& tape, const Tensor<Real>& g) {
        auto& dx = tape.grad_buffer(xi);
        const auto& xv = tape.value(xi);
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (kind) {
            case Activation::kRelu: dx[i] += xv[i] > 0 ? g[i] : Real(0); break;
            case Activation::kTanh: dx[i] += g[i] * (Real(1) - y[i] * y[i]); break;
            case Activation::kSigmoid: dx[i] += g[i] * y[i] * (Real(1) - y[i]); break;
          }
        }
      });
}

template <class Real>
Var<Real> relu(const Var<Real>& x) { return pointwise(x, Activation::kRelu); }
template <class Real>
Var<Real> tanh(const Var<Real>& x) { return pointwise(x, Activation::kTanh); }
template <class Real>
Var<Real> sigmoid(const Var<Real>& x) { return pointwise(x, Activation::kSigmoid); }

// Boundary max pooling: row n holds, per channel, the maximum of x over the
// integer index span of regions[n]. Ties resolve to the lowest index and the
// backward pass routes each channel's gradient to that single index.
template <class Real>
Var<Real> region_max_pool(const Var<Real>& x, std::span<const Region> regions) {
  detail::require_rank(x, 2, "region_max_pool");
  if (regions.empty()) throw ArgumentError("region_max_pool: no regions");
  const auto& xv = x.value();
  const std::size_t T = xv.dim(0), C = xv.dim(1), N = regions.size();
  Tensor<Real> out({N, C});
  std::vector<std::size_t> argmax(N * C);
  for (std::size_t n = 0; n < N; ++n) {
    const auto [first, last] = detail::region_span(regions[n], T);
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best = first;
      for (std::size_t j = first + 1; j <= last; ++j)
        if (xv(j, c) > xv(best, c)) best = j;
      argmax[n * C + c] = best;
      out(n, c) = xv(best, c);
    }
  }
  const std::size_t xi = x.id();
  return x.tape().record(
      std::move(out), {x},
      [=, argmax = std::move(argmax)](Tape<Real>& tape, const Tensor<Real>& g) {
        auto& dx = tape.grad_buffer(xi);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) dx(argmax[n * C + c], c) += g(n, c);
      });
}

template <class Real>
Var<Real> region_max_pool(const Var<Real>& x, const Region& region) {
  return region_max_pool(x, std::span<const Region>(&region, 1));
}

// Per-channel mean over the integer index span of each region.
template <class Real>
Var<Real> region_mean_pool(const Var<Real>& x, std::span<const Region> regions) {
  detail::require_rank(x, 2, "region_mean_pool");
  if (regions.empty()) throw ArgumentError("region_mean_pool: no regions");
  const auto& xv = x.value();
  const std::size_t T = xv.dim(0), C = xv.dim(1), N = regions.size();
  Tensor<Real> out({N, C});
  std::vector<std::pair<std::size_t, std::size_t>> spans(N);
  for (std::size_t n = 0; n < N; ++n) {
    spans[n] = detail::region_span(regions[n], T);
    const auto [first, last] = spans[n];
    const Real inv = Real(1) / static_cast<Real>(last - first + 1);
    for (std::size_t j = first; j <= last; ++j)
      for (std::size_t c = 0; c < C; ++c) out(n, c) += xv(j, c) * inv;
  }
  const std::size_t xi = x.id();
  return x.tape().record(
      std::move(out), {x},
      [=, spans = std::move(spans)](Tape<Real>& tape, const Tensor<Real>& g) {
        auto& dx = tape.grad_buffer(xi);
        for (std::size_t n = 0; n < N; ++n) {
          const auto [first, last] = spans[n];
          const Real inv = Real(1) / static_cast<Real>(last - first + 1);
          for (std::size_t j = first; j <= last; ++j)
            for (std::size_t c = 0; c < C; ++c) dx(j, c) += g(n, c) * inv;
        }
      });
}

// Concatenates the features at the lower end, midpoint and upper end of each
// region (nearest-index lookup): N x 3C.
template <class Real>
Var<Real> region_stack_pool(const Var<Real>& x, std::span<const Region> regions) {
  detail::require_rank(x, 2, "region_stack_pool");
  if (regions.empty()) throw ArgumentError("region_stack_pool: no regions");
  const auto& xv = x.value();
  const std::size_t T = xv.dim(0), C = xv.dim(1), N = regions.size();
  Tensor<Real> out({N, 3 * C});
  std::vector<std::array<std::size_t, 3>> picks(N);
  for (std::size_t n = 0; n < N; ++n) {
    picks[n] = detail::region_samples(regions[n], T);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t c = 0; c < C; ++c) out(n, k * C + c) = xv(picks[n][k], c);
  }
  const std::size_t xi = x.id();
  return x.tape().record(
      std::move(out), {x},
      [=, picks = std::move(picks)](Tape<Real>& tape, const Tensor<Real>& g) {
        auto& dx = tape.grad_buffer(xi);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t c = 0; c < C; ++c) dx(picks[n][k], c) += g(n, k * C + c);
      });
}

// Learned aggregation of the three region samples: a width-3 temporal kernel
// (stored as 1 x 3C x Cout) applied to the stacked samples.
template <class Real>
Var<Real> region_conv_pool(const Var<Real>& x, std::span<const Region> regions,
                           const Var<Real>& w, const Var<Real>& b) {
  return conv1d(region_stack_pool(x, regions), w, b, 1, 0);
}

// Linear interpolation along time by an integer factor. Output row j samples
// source position j / factor; positions past the last row replicate it.
template <class Real>
Var<Real> linear_upsample(const Var<Real>& x, int factor) {
  detail::require_rank(x, 2, "linear_upsample");
  if (factor < 1) throw ArgumentError("linear_upsample: factor must be >= 1");
  const auto& xv = x.value();
  const std::size_t T = xv.dim(0), C = xv.dim(1), F = static_cast<std::size_t>(factor);
  Tensor<Real> out({T * F, C});
  for (std::size_t j = 0; j < T * F; ++j) {
    const std::size_t i0 = j / F;
    const Real frac = static_cast<Real>(j % F) / static_cast<Real>(F);
    const std::size_t i1 = std::min(i0 + 1, T - 1);
    for (std::size_t c = 0; c < C; ++c)
      out(j, c) = (Real(1) - frac) * xv(i0, c) + frac * xv(i1, c);
  }
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<Real>& tape, const Tensor<Real>& g) {
    auto& dx = tape.grad_buffer(xi);
    for (std::size_t j = 0; j < T * F; ++j) {
      const std::size_t i0 = j / F;
      const Real frac = static_cast<Real>(j % F) / static_cast<Real>(F);
      const std::size_t i1 = std::min(i0 + 1, T - 1);
      for (std::size_t c = 0; c < C; ++c) {
        dx(i0, c) += (Real(1) - frac) * g(j, c);
        dx(i1, c) += frac * g(j, c);
      }
    }
  });
}

// Channel-wise concatenation of equally long sequences.
template <class Real>
Var<Real> concat_cols(std::span<const Var<Real>> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: nothing to concatenate");
  const std::size_t T = parts[0].value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.value().rows() != T) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Tensor<Real> out({T, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < v.cols(); ++c) out(t, off + c) = v(t, c);
    off += v.cols();
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(
      std::move(out), parts,
      [=, ids = std::move(ids), widths = std::move(widths)](Tape<Real>& tape,
                                                            const Tensor<Real>& g) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (tape.requires_grad(ids[p])) {
            auto& d = tape.grad_buffer(ids[p]);
            for (std::size_t t = 0; t < T; ++t)
              for (std::size_t c = 0; c < widths[p]; ++c) d(t, c) += g(t, off + c);
          }
          off += widths[p];
        }
      });
}

template <class Real>
Var<Real> concat_cols(std::initializer_list<Var<Real>> parts) {
  return concat_cols(std::span<const Var<Real>>(parts.begin(), parts.size()));
}

// Stacks matrices with equal column counts on top of each other.
template <class Real>
Var<Real> concat_rows(std::span<const Var<Real>> parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: nothing to concatenate");
  const std::size_t C = parts[0].value().cols();
  std::size_t total = 0;
  std::vector<std::size_t> heights;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_rows");
    if (p.value().cols() != C) throw DimensionError("concat_rows: column counts differ");
    heights.push_back(p.value().rows());
    total += p.value().rows();
  }
  std::vector<Real> data;
  data.reserve(total * C);
  for (const auto& p : parts)
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(
      Tensor<Real>({total, C}, std::move(data)), parts,
      [=, ids = std::move(ids), heights = std::move(heights)](Tape<Real>& tape,
                                                              const Tensor<Real>& g) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (tape.requires_grad(ids[p])) {
            auto& d = tape.grad_buffer(ids[p]);
            for (std::size_t i = 0; i < heights[p] * C; ++i) d[i] += g[off + i];
          }
          off += heights[p] * C;
        }
      });
}

template <class Real>
Var<Real> gather_rows(const Var<Real>& x, std::vector<std::size_t> indices) {
  detail::require_rank(x, 2, "gather_rows");
  if (indices.empty()) throw ArgumentError("gather_rows: empty index list");
  const auto& xv = x.value();
  const std::size_t C = xv.cols();
  Tensor<Real> out({indices.size(), C});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= xv.rows()) throw ArgumentError("gather_rows: index out of range");
    for (std::size_t c = 0; c < C; ++c) out(r, c) = xv(indices[r], c);
  }
  const std::size_t xi = x.id();
  return x.tape().record(
      std::move(out), {x},
      [=, indices = std::move(indices)](Tape<Real>& tape, const Tensor<Real>& g) {
        auto& dx = tape.grad_buffer(xi);
        for (std::size_t r = 0; r < indices.size(); ++r)
          for (std::size_t c = 0; c < C; ++c) dx(indices[r], c) += g(r, c);
      });
}

template <class Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape<Real>& tape, const Tensor<Real>& g) {
    for (auto id : {ai, bi}) {
      if (!tape.requires_grad(id)) continue;
      auto& d = tape.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

template <class Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape<Real>& tape, const Tensor<Real>& g) {
    if (tape.requires_grad(ai)) {
      auto& d = tape.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (tape.requires_grad(bi)) {
      auto& d = tape.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

template <class Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape<Real>& tape, const Tensor<Real>& g) {
    const auto& av = tape.value(ai);
    const auto& bv = tape.value(bi);
    if (tape.requires_grad(ai)) {
      auto& d = tape.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(bi)) {
      auto& d = tape.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

// a * x + c elementwise with constant a, c.
template <class Real>
Var<Real> affine(const Var<Real>& x, Real a, Real c = Real(0)) {
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.value()[i] + c;
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<Real>& tape, const Tensor<Real>& g) {
    auto& d = tape.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += a * g[i];
  });
}

template <class Real>
Var<Real> square(const Var<Real>& x) { return mul(x, x); }

template <class Real>
Var<Real> sum(const Var<Real>& x) {
  Real s = 0;
  for (auto v : x.value().values()) s += v;
  const std::size_t xi = x.id();
  return x.tape().record(Tensor<Real>::scalar(s), {x},
                         [=](Tape<Real>& tape, const Tensor<Real>& g) {
                           auto& d = tape.grad_buffer(xi);
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0];
                         });
}

template <class Real>
Var<Real> mean(const Var<Real>& x) {
  return affine(sum(x), Real(1) / static_cast<Real>(x.value().size()));
}

// Sum of scalar vars.
template <class Real>
Var<Real> add_all(std::span<const Var<Real>> terms) {
  if (terms.empty()) throw ArgumentError("add_all: no terms");
  Var<Real> acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

// Per-row mean over channels: T x C -> T x 1.
template <class Real>
Var<Real> channel_mean(const Var<Real>& x) {
  detail::require_rank(x, 2, "channel_mean");
  const auto& xv = x.value();
  const std::size_t T = xv.dim(0), C = xv.dim(1);
  Tensor<Real> out({T, 1});
  for (std::size_t t = 0; t < T; ++t) {
    Real s = 0;
    for (std::size_t c = 0; c < C; ++c) s += xv(t, c);
    out[t] = s / static_cast<Real>(C);
  }
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<Real>& tape, const Tensor<Real>& g) {
    auto& d = tape.grad_buffer(xi);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) d(t, c) += g[t] / static_cast<Real>(C);
  });
}

// Hard clip to [lo, hi]; gradient passes only strictly inside.
template <class Real>
Var<Real> clamp(const Var<Real>& x, Real lo, Real hi) {
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x.value()[i], lo, hi);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<Real>& tape, const Tensor<Real>& g) {
    const auto& xv = tape.value(xi);
    auto& d = tape.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > lo && xv[i] < hi) d[i] += g[i];
  });
}

// Per column: (x - min) / (max - min) over the rows. A constant column maps
// to zeros.
template <class Real>
Var<Real> minmax_normalize(const Var<Real>& x) {
  detail::require_rank(x, 2, "minmax_normalize");
  const auto& xv = x.value();
  const std::size_t T = xv.dim(0), C = xv.dim(1);
  std::vector<std::size_t> imin(C, 0), imax(C, 0);
  std::vector<Real> range(C);
  Tensor<Real> out(xv.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 1; t < T; ++t) {
      if (xv(t, c) < xv(imin[c], c)) imin[c] = t;
      if (xv(t, c) > xv(imax[c], c)) imax[c] = t;
    }
    range[c] = xv(imax[c], c) - xv(imin[c], c);
    if (range[c] > 0)
      for (std::size_t t = 0; t < T; ++t) out(t, c) = (xv(t, c) - xv(imin[c], c)) / range[c];
  }
  const std::size_t xi = x.id();
  auto y = out;
  return x.tape().record(
      std::move(out), {x},
      [=, y = std::move(y), imin = std::move(imin), imax = std::move(imax),
       range = std::move(range)](Tape<Real>& tape, const Tensor<Real>& g) {
        auto& d = tape.grad_buffer(xi);
        for (std::size_t c = 0; c < C; ++c) {
          if (!(range[c] > 0)) continue;
          Real to_min = 0, to_max = 0;
          for (std::size_t t = 0; t < T; ++t) {
            d(t, c) += g(t, c) / range[c];
            to_min += g(t, c) * (y(t, c) - Real(1)) / range[c];
            to_max -= g(t, c) * y(t, c) / range[c];
          }
          d(imin[c], c) += to_min;
          d(imax[c], c) += to_max;
        }
      });
}

// Summed softmax focal loss. logits: N x K, targets: class index per row.
// Per row: -alpha * (1 - p_t)^gamma * log p_t with p = softmax(logits).
template <class Real>
Var<Real> softmax_focal_loss(const Var<Real>& logits, std::vector<int> targets,
                             Real alpha, Real gamma) {
  detail::require_rank(logits, 2, "softmax_focal_loss");
  const auto& zv = logits.value();
  const std::size_t N = zv.dim(0), K = zv.dim(1);
  if (targets.size() != N) throw DimensionError("softmax_focal_loss: target count != rows");
  Tensor<Real> prob({N, K});
  std::vector<Real> row_scale(N);
  Real total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const int y = targets[n];
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw ArgumentError("softmax_focal_loss: target class out of range");
    }
    Real zmax = zv(n, 0);
    for (std::size_t k = 1; k < K; ++k) zmax = std::max(zmax, zv(n, k));
    Real denom = 0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(zv(n, k) - zmax);
    const Real log_denom = std::log(denom);
    for (std::size_t k = 0; k < K; ++k) prob(n, k) = std::exp(zv(n, k) - zmax - log_denom);
    const Real logp = zv(n, static_cast<std::size_t>(y)) - zmax - log_denom;
    const Real pt = prob(n, static_cast<std::size_t>(y));
    const Real q = Real(1) - pt;
    total += -alpha * std::pow(q, gamma) * logp;
    // d loss / d z_j = row_scale * (delta_jy - p_j)
    const Real qg1 = q > 0 ? std::pow(q, gamma - Real(1)) : Real(0);
    row_scale[n] = alpha * (gamma * qg1 * pt * logp - std::pow(q, gamma));
  }
  const std::size_t zi = logits.id();
  return logits.tape().record(
      Tensor<Real>::scalar(total), {logits},
      [=, prob = std::move(prob), row_scale = std::move(row_scale),
       targets = std::move(targets)](Tape<Real>& tape, const Tensor<Real>& g) {
        auto& d = tape.grad_buffer(zi);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < K; ++k) {
            const Real delta = static_cast<int>(k) == targets[n] ? Real(1) : Real(0);
            d(n, k) += g[0] * row_scale[n] * (delta - prob(n, k));
          }
      });
}

// Summed binary cross entropy between probabilities p and targets; p is
// clipped to [eps, 1 - eps] (no gradient where clipped).
template <class Real>
Var<Real> binary_cross_entropy(const Var<Real>& p, const Tensor<Real>& target,
                               Real eps = Real(1e-6)) {
  if (p.value().size() != target.size()) {
    throw DimensionError("binary_cross_entropy: target size mismatch");
  }
  Real total = 0;
  const auto& pv = p.value();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const Real q = std::clamp(pv[i], eps, Real(1) - eps);
    total -= target[i] * std::log(q) + (Real(1) - target[i]) * std::log(Real(1) - q);
  }
  const std::size_t pi = p.id();
  return p.tape().record(
      Tensor<Real>::scalar(total), {p}, [=](Tape<Real>& tape, const Tensor<Real>& g) {
        const auto& pv = tape.value(pi);
        auto& d = tape.grad_buffer(pi);
        for (std::size_t i = 0; i < pv.size(); ++i) {
          const Real q = pv[i];
          if (q <= eps || q >= Real(1) - eps) continue;
          d[i] += g[0] * (q - target[i]) / (q * (Real(1) - q));
        }
      });
}

// Summed BCE of sigmoid(z) against targets, computed from logits.
template <class Real>
Var<Real> bce_with_logits(const Var<Real>& z, const Tensor<Real>& target) {
  if (z.value().size() != target.size()) {
    throw DimensionError("bce_with_logits: target size mismatch");
  }
  Real total = 0;
  const auto& zv = z.value();
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const Real v = zv[i];
    total += std::max(v, Real(0)) - v * target[i] + std::log1p(std::exp(-std::abs(v)));
  }
  const std::size_t zi = z.id();
  return z.tape().record(
      Tensor<Real>::scalar(total), {z}, [=](Tape<Real>& tape, const Tensor<Real>& g) {
        const auto& zv = tape.value(zi);
        auto& d = tape.grad_buffer(zi);
        for (std::size_t i = 0; i < zv.size(); ++i) {
          const Real v = zv[i];
          const Real s = v >= 0 ? Real(1) / (Real(1) + std::exp(-v))
                                : std::exp(v) / (Real(1) + std::exp(v));
          d[i] += g[0] * (s - target[i]);
        }
      });
}

// Summed 1 - tIoU between intervals that share an anchor point. Row n of
// `dist` holds predicted (start, end) distances from the anchor (>= 0) and
// row n of `target` the ground-truth distances from the same anchor.
template <class Real>
Var<Real> anchored_iou_loss(const Var<Real>& dist, const Tensor<Real>& target) {
  detail::require_rank(dist, 2, "anchored_iou_loss");
  const auto& dv = dist.value();
  if (dv.dim(1) != 2 || target.shape() != dv.shape()) {
    throw DimensionError("anchored_iou_loss: expected matching N x 2 inputs");
  }
  const std::size_t N = dv.dim(0);
  Real total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const Real inter = std::min(dv(n, 0), target(n, 0)) + std::min(dv(n, 1), target(n, 1));
    const Real uni = dv(n, 0) + dv(n, 1) + target(n, 0) + target(n, 1) - inter;
    total += uni > 0 ? Real(1) - inter / uni : Real(0);
  }
  const std::size_t di = dist.id();
  return dist.tape().record(
      Tensor<Real>::scalar(total), {dist}, [=](Tape<Real>& tape, const Tensor<Real>& g) {
        const auto& dv = tape.value(di);
        auto& d = tape.grad_buffer(di);
        for (std::size_t n = 0; n < N; ++n) {
          const Real inter = std::min(dv(n, 0), target(n, 0)) + std::min(dv(n, 1), target(n, 1));
          const Real uni = dv(n, 0) + dv(n, 1) + target(n, 0) + target(n, 1) - inter;
          if (!(uni > 0)) continue;
          for (std::size_t side = 0; side < 2; ++side) {
            const Real di_dd = dv(n, side) < target(n, side) ? Real(1) : Real(0);
            const Real du_dd = Real(1) - di_dd;
            d(n, side) -= g[0] * (di_dd * uni - inter * du_dd) / (uni * uni);
          }
        }
      });
}

// Summed absolute error against a constant target.
template <class Real>
Var<Real> l1_loss(const Var<Real>& x, const Tensor<Real>& target) {
  if (x.value().size() != target.size()) throw DimensionError("l1_loss: size mismatch");
  Real total = 0;
  for (std::size_t i = 0; i < target.size(); ++i) total += std::abs(x.value()[i] - target[i]);
  const std::size_t xi = x.id();
  return x.tape().record(
      Tensor<Real>::scalar(total), {x}, [=](Tape<Real>& tape, const Tensor<Real>& g) {
        const auto& xv = tape.value(xi);
        auto& d = tape.grad_buffer(xi);
        for (std::size_t i = 0; i < xv.size(); ++i) {
          const Real diff = xv[i] - target[i];
          d[i] += diff > 0 ? g[0] : (diff < 0 ? -g[0] : Real(0));
        }
      });
}

}  // namespace afsd
