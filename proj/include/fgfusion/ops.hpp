/* Copyright 2026 The FGFusion Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Differentiable operations over Tensor<T>. Every op validates shapes
// (ShapeError naming both operands) and rejects non-finite results
// (NumericError). Spatial maps are channel-first: (C,H,W) or (C,D,H,W).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fgfusion/tensor.hpp"

namespace fgf {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline ShapeError shape_error(const std::string& op, const Shape& a,
                              const Shape& b) {
  return ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " +
                    shape_str(b));
}

inline void require_rank(const std::string& op, const Shape& s,
                         std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(op + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(s));
  }
}

template <class T>
T softplus(T z) {
  return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

// Per-operand strides over the broadcast output shape (0 on broadcast axes).
inline Shape broadcast_shape(const std::string& op, const Shape& a,
                             const Shape& b) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
    std::size_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1) throw shape_error(op, a, b);
    out[i] = da == 1 ? db : da;
  }
  return out;
}

inline std::vector<std::size_t> broadcast_strides(const Shape& in,
                                                  const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    std::size_t i = in.size() - 1 - k;
    std::size_t o = out.size() - 1 - k;
    strides[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& fn) {
  std::size_t n = shape_numel(out);
  std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t k = r; k-- > 0;) {
      ++idx[k];
      ia += sa[k];
      ib += sb[k];
      if (idx[k] < out[k]) break;
      ia -= sa[k] * out[k];
      ib -= sb[k] * out[k];
      idx[k] = 0;
    }
  }
}

template <class T, class F, class GA, class GB>
Tensor<T> broadcast_binary(const char* op, const Tensor<T>& a,
                           const Tensor<T>& b, F f, GA ga, GB gb) {
  const auto& av = a.values();
  const auto& bv = b.values();
  if (a.shape() == b.shape()) {
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    return make_result<T>(op, a.shape(), std::move(out), {a, b},
                          [ga, gb](Node<T>& n) {
                            const auto& x = n.parents[0]->value;
                            const auto& y = n.parents[1]->value;
                            if (auto* g = parent_grad(n, 0)) {
                              for (std::size_t i = 0; i < n.grad.size(); ++i)
                                (*g)[i] += n.grad[i] * ga(x[i], y[i]);
                            }
                            if (auto* g = parent_grad(n, 1)) {
                              for (std::size_t i = 0; i < n.grad.size(); ++i)
                                (*g)[i] += n.grad[i] * gb(x[i], y[i]);
                            }
                          });
  }
  Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<T> out(shape_numel(out_shape));
  for_each_broadcast(out_shape, sa, sb,
                     [&](std::size_t i, std::size_t ia, std::size_t ib) {
                       out[i] = f(av[ia], bv[ib]);
                     });
  return make_result<T>(
      op, out_shape, std::move(out), {a, b},
      [ga, gb, out_shape, sa, sb](Node<T>& n) {
        const auto& x = n.parents[0]->value;
        const auto& y = n.parents[1]->value;
        auto* g0 = parent_grad(n, 0);
        auto* g1 = parent_grad(n, 1);
        for_each_broadcast(out_shape, sa, sb,
                           [&](std::size_t i, std::size_t ia, std::size_t ib) {
                             if (g0) (*g0)[ia] += n.grad[i] * ga(x[ia], y[ib]);
                             if (g1) (*g1)[ib] += n.grad[i] * gb(x[ia], y[ib]);
                           });
      });
}

// d(x, y) is dy/dx given input x and output y.
template <class T, class F, class D>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, D d) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x}, [d](Node<T>& n) {
    auto* g = parent_grad(n, 0);
    if (!g) return;
    const auto& xin = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      (*g)[i] += n.grad[i] * d(xin[i], n.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y) { return T(1) / y; }, [](T x, T y) { return -x / (y * y); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary<T>(
      "scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary<T>(
      "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.values()) {
    if (!(v > T(0))) throw NumericError("log: non-positive input");
  }
  return detail::unary<T>(
      "log", x, [](T v) { return std::log(v); },
      [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>(
      "square", x, [](T v) { return v * v; },
      [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  for (T v : x.values()) {
    if (!std::isfinite(v)) throw NumericError("sigmoid: non-finite input");
  }
  return detail::unary<T>(
      "sigmoid", x, [](T v) { return detail::stable_sigmoid(v); },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

// ----------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  return detail::make_result<T>("sum", {}, {s}, {x}, [](Node<T>& n) {
    if (auto* g = detail::parent_grad(n, 0))
      for (auto& v : *g) v += n.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ContractError("mean: empty input");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Sum over one axis; the axis is removed from the shape.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw ShapeError("sum_axis: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1, n = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  std::vector<T> out(outer * inner, T(0));
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xv[(o * n + k) * inner + i];
  return detail::make_result<T>(
      "sum_axis", os, std::move(out), {x}, [outer, n, inner](Node<T>& nd) {
        auto* g = detail::parent_grad(nd, 0);
        if (!g) return;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < inner; ++i)
              (*g)[(o * n + k) * inner + i] += nd.grad[o * inner + i];
      });
}

// (C,H,W) -> (C,1,1) per-channel spatial mean.
template <class T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
  detail::require_rank("global_average_pool", x.shape(), 3);
  std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (hw == 0) throw ContractError("global_average_pool: empty H*W");
  std::vector<T> out(c, T(0));
  const auto& xv = x.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    T s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += xv[ch * hw + i];
    out[ch] = s / static_cast<T>(hw);
  }
  return detail::make_result<T>(
      "global_average_pool", {c, 1, 1}, std::move(out), {x},
      [c, hw](Node<T>& n) {
        auto* g = detail::parent_grad(n, 0);
        if (!g) return;
        for (std::size_t ch = 0; ch < c; ++ch) {
          T d = n.grad[ch] / static_cast<T>(hw);
          for (std::size_t i = 0; i < hw; ++i) (*g)[ch * hw + i] += d;
        }
      });
}

// -------------------------------------------------------------------- layout

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw detail::shape_error("reshape", x.shape(), shape);
  }
  return detail::make_result<T>("reshape", std::move(shape), x.values(), {x},
                                [](Node<T>& n) {
                                  auto* g = detail::parent_grad(n, 0);
                                  if (!g) return;
                                  for (std::size_t i = 0; i < n.grad.size(); ++i)
                                    (*g)[i] += n.grad[i];
                                });
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  detail::require_rank("transpose2d", x.shape(), 2);
  std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return detail::make_result<T>("transpose2d", {c, r}, std::move(out), {x},
                                [r, c](Node<T>& n) {
                                  auto* g = detail::parent_grad(n, 0);
                                  if (!g) return;
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < c; ++j)
                                      (*g)[i * c + j] += n.grad[j * r + i];
                                });
}

// (C, S...) -> (prod S, C): one row per spatial location.
template <class T>
Tensor<T> channels_last(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("channels_last: rank < 2 " + shape_str(x.shape()));
  std::size_t c = x.dim(0);
  return transpose2d(reshape(x, {c, x.numel() / c}));
}

// Concatenation along `axis`; all other dims must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ContractError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) ok = false;
    if (!ok) throw detail::shape_error("concat", s0, s);
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& v = xs[k].values();
    std::size_t block = lens[k] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(v.begin() + o * block, v.begin() + (o + 1) * block,
                out.begin() + o * total * inner + off * inner);
    off += lens[k];
  }
  return detail::make_result<T>(
      "concat", os, std::move(out), xs, [lens, outer, inner, total](Node<T>& n) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < lens.size(); ++k) {
          std::size_t block = lens[k] * inner;
          if (auto* g = detail::parent_grad(n, k)) {
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < block; ++i)
                (*g)[o * block + i] += n.grad[o * total * inner + off * inner + i];
          }
          off += lens[k];
        }
      });
}

// Slice [start, start+len) along axis.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start,
                std::size_t len) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start + len > s[axis]) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1, n = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[axis] = len;
  std::vector<T> out(outer * len * inner);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(xv.begin() + (o * n + start) * inner,
              xv.begin() + (o * n + start + len) * inner,
              out.begin() + o * len * inner);
  return detail::make_result<T>(
      "slice", os, std::move(out), {x}, [outer, n, inner, start, len](Node<T>& nd) {
        auto* g = detail::parent_grad(nd, 0);
        if (!g) return;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < len * inner; ++i)
            (*g)[(o * n + start) * inner + i] += nd.grad[o * len * inner + i];
      });
}

// Nearest-neighbour resize of a (C,H,W) map to (C,out_h,out_w).
template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t out_h,
                           std::size_t out_w) {
  detail::require_rank("upsample_nearest", x.shape(), 3);
  std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<std::size_t> src(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i)
    for (std::size_t j = 0; j < out_w; ++j)
      src[i * out_w + j] = (i * h / out_h) * w + (j * w / out_w);
  std::vector<T> out(c * out_h * out_w);
  const auto& xv = x.values();
  std::size_t hw = h * w, ohw = out_h * out_w;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t k = 0; k < ohw; ++k) out[ch * ohw + k] = xv[ch * hw + src[k]];
  return detail::make_result<T>(
      "upsample_nearest", {c, out_h, out_w}, std::move(out), {x},
      [src, c, hw, ohw](Node<T>& n) {
        auto* g = detail::parent_grad(n, 0);
        if (!g) return;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t k = 0; k < ohw; ++k)
            (*g)[ch * hw + src[k]] += n.grad[ch * ohw + k];
      });
}

// Rows of a (M,C) matrix picked by index.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& idx) {
  detail::require_rank("gather_rows", x.shape(), 2);
  std::size_t m = x.dim(0), c = x.dim(1);
  std::vector<T> out(idx.size() * c);
  const auto& xv = x.values();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= m) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[k]) +
                       " out of range for " + shape_str(x.shape()));
    }
    std::copy(xv.begin() + idx[k] * c, xv.begin() + (idx[k] + 1) * c,
              out.begin() + k * c);
  }
  return detail::make_result<T>(
      "gather_rows", {idx.size(), c}, std::move(out), {x}, [idx, c](Node<T>& n) {
        auto* g = detail::parent_grad(n, 0);
        if (!g) return;
        for (std::size_t k = 0; k < idx.size(); ++k)
          for (std::size_t j = 0; j < c; ++j) (*g)[idx[k] * c + j] += n.grad[k * c + j];
      });
}

// Sparse row interpolation: out[k] = sum_j weights[k*taps+j] * x[idx[k*taps+j]].
// Negative indices are skipped (zero contribution). Used for bilinear and
// trilinear sampling with precomputed geometry.
template <class T>
Tensor<T> weighted_rows(const Tensor<T>& x, const std::vector<std::int64_t>& idx,
                        const std::vector<T>& weights, std::size_t taps) {
  detail::require_rank("weighted_rows", x.shape(), 2);
  if (taps == 0 || idx.size() != weights.size() || idx.size() % taps != 0) {
    throw ContractError("weighted_rows: index/weight layout mismatch");
  }
  std::size_t m = x.dim(0), c = x.dim(1), k_out = idx.size() / taps;
  std::vector<T> out(k_out * c, T(0));
  const auto& xv = x.values();
  for (std::size_t k = 0; k < k_out; ++k)
    for (std::size_t j = 0; j < taps; ++j) {
      std::int64_t r = idx[k * taps + j];
      if (r < 0) continue;
      if (static_cast<std::size_t>(r) >= m) {
        throw ShapeError("weighted_rows: index " + std::to_string(r) +
                         " out of range for " + shape_str(x.shape()));
      }
      T w = weights[k * taps + j];
      for (std::size_t ch = 0; ch < c; ++ch) out[k * c + ch] += w * xv[r * c + ch];
    }
  return detail::make_result<T>(
      "weighted_rows", {k_out, c}, std::move(out), {x},
      [idx, weights, taps, c, k_out](Node<T>& n) {
        auto* g = detail::parent_grad(n, 0);
        if (!g) return;
        for (std::size_t k = 0; k < k_out; ++k)
          for (std::size_t j = 0; j < taps; ++j) {
            std::int64_t r = idx[k * taps + j];
            if (r < 0) continue;
            T w = weights[k * taps + j];
            for (std::size_t ch = 0; ch < c; ++ch)
              (*g)[r * c + ch] += w * n.grad[k * c + ch];
          }
      });
}

// ------------------------------------------------------------- dense algebra

// (M,K) x (K,N) -> (M,N)
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul", a.shape(), 2);
  detail::require_rank("matmul", b.shape(), 2);
  if (a.dim(1) != b.dim(0)) throw detail::shape_error("matmul", a.shape(), b.shape());
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  detail::MatMap<T>(out.data(), m, n).noalias() =
      detail::ConstMatMap<T>(a.values().data(), m, k) *
      detail::ConstMatMap<T>(b.values().data(), k, n);
  return detail::make_result<T>(
      "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& nd) {
        detail::ConstMatMap<T> gy(nd.grad.data(), m, n);
        if (auto* g = detail::parent_grad(nd, 0)) {
          detail::MatMap<T>(g->data(), m, k).noalias() +=
              gy * detail::ConstMatMap<T>(nd.parents[1]->value.data(), k, n).transpose();
        }
        if (auto* g = detail::parent_grad(nd, 1)) {
          detail::MatMap<T>(g->data(), k, n).noalias() +=
              detail::ConstMatMap<T>(nd.parents[0]->value.data(), m, k).transpose() * gy;
        }
      });
}

// y = x W^T + b with x (M,K), W (N,K), b (N) or undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank("linear", x.shape(), 2);
  detail::require_rank("linear", w.shape(), 2);
  if (x.dim(1) != w.dim(1)) throw detail::shape_error("linear", x.shape(), w.shape());
  std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(0);
  bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != n)) {
    throw detail::shape_error("linear(bias)", w.shape(), b.shape());
  }
  std::vector<T> out(m * n);
  detail::MatMap<T> y(out.data(), m, n);
  y.noalias() = detail::ConstMatMap<T>(x.values().data(), m, k) *
                detail::ConstMatMap<T>(w.values().data(), n, k).transpose();
  if (has_bias) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
        b.values().data(), n);
  }
  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return detail::make_result<T>(
      "linear", {m, n}, std::move(out), inputs, [m, k, n, has_bias](Node<T>& nd) {
        detail::ConstMatMap<T> gy(nd.grad.data(), m, n);
        if (auto* g = detail::parent_grad(nd, 0)) {
          detail::MatMap<T>(g->data(), m, k).noalias() +=
              gy * detail::ConstMatMap<T>(nd.parents[1]->value.data(), n, k);
        }
        if (auto* g = detail::parent_grad(nd, 1)) {
          detail::MatMap<T>(g->data(), n, k).noalias() +=
              gy.transpose() * detail::ConstMatMap<T>(nd.parents[0]->value.data(), m, k);
        }
        if (has_bias) {
          if (auto* g = detail::parent_grad(nd, 2)) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g->data(), n) +=
                gy.colwise().sum();
          }
        }
      });
}

namespace detail {

// Geometry of a (possibly degenerate-depth) 3D convolution.
struct ConvGeom {
  std::size_t c, d, h, w;     // input
  std::size_t kd, kh, kw;
  std::size_t sd, sh, sw;
  std::size_t pd, ph, pw;
  std::size_t od, oh, ow;     // output

  std::size_t cols() const { return c * kd * kh * kw; }
  std::size_t positions() const { return od * oh * ow; }
};

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s,
                            std::size_t p) {
  if (in + 2 * p < k) return 0;
  return (in + 2 * p - k) / s + 1;
}

// (C,D,H,W) -> (C*kd*kh*kw, od*oh*ow), zero padded.
template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  std::size_t p = g.positions();
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t a = 0; a < g.kd; ++a)
      for (std::size_t b = 0; b < g.kh; ++b)
        for (std::size_t e = 0; e < g.kw; ++e) {
          T* row = col + (((ch * g.kd + a) * g.kh + b) * g.kw + e) * p;
          for (std::size_t zd = 0; zd < g.od; ++zd) {
            std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(zd * g.sd + a) -
                                static_cast<std::ptrdiff_t>(g.pd);
            for (std::size_t yh = 0; yh < g.oh; ++yh) {
              std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(yh * g.sh + b) -
                                  static_cast<std::ptrdiff_t>(g.ph);
              T* dst = row + (zd * g.oh + yh) * g.ow;
              if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(g.d) || iy < 0 ||
                  iy >= static_cast<std::ptrdiff_t>(g.h)) {
                std::fill(dst, dst + g.ow, T(0));
                continue;
              }
              const T* src = x + ((ch * g.d + iz) * g.h + iy) * g.w;
              for (std::size_t xw = 0; xw < g.ow; ++xw) {
                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xw * g.sw + e) -
                                    static_cast<std::ptrdiff_t>(g.pw);
                dst[xw] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                              ? T(0)
                              : src[ix];
              }
            }
          }
        }
}

// Adjoint of im2col: scatter-add columns back into (C,D,H,W).
template <class T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  std::size_t p = g.positions();
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t a = 0; a < g.kd; ++a)
      for (std::size_t b = 0; b < g.kh; ++b)
        for (std::size_t e = 0; e < g.kw; ++e) {
          const T* row = col + (((ch * g.kd + a) * g.kh + b) * g.kw + e) * p;
          for (std::size_t zd = 0; zd < g.od; ++zd) {
            std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(zd * g.sd + a) -
                                static_cast<std::ptrdiff_t>(g.pd);
            if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(g.d)) continue;
            for (std::size_t yh = 0; yh < g.oh; ++yh) {
              std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(yh * g.sh + b) -
                                  static_cast<std::ptrdiff_t>(g.ph);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              const T* src = row + (zd * g.oh + yh) * g.ow;
              T* dst = x + ((ch * g.d + iz) * g.h + iy) * g.w;
              for (std::size_t xw = 0; xw < g.ow; ++xw) {
                std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xw * g.sw + e) -
                                    static_cast<std::ptrdiff_t>(g.pw);
                if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[xw];
              }
            }
          }
        }
}

template <class T>
Tensor<T> conv_impl(const char* op, const Tensor<T>& x, const Tensor<T>& w,
                    const Tensor<T>& b, const ConvGeom& g, std::size_t out_ch,
                    Shape out_shape) {
  std::size_t ck = g.cols(), p = g.positions();
  std::vector<T> col(ck * p);
  im2col(x.values().data(), g, col.data());
  std::vector<T> out(out_ch * p);
  MatMap<T> y(out.data(), out_ch, p);
  y.noalias() = ConstMatMap<T>(w.values().data(), out_ch, ck) *
                ConstMatMap<T>(col.data(), ck, p);
  bool has_bias = b.defined();
  if (has_bias) {
    y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(
        b.values().data(), out_ch);
  }
  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result<T>(
      op, std::move(out_shape), std::move(out), inputs,
      [g, out_ch, ck, p, has_bias, col = std::move(col)](Node<T>& n) {
        ConstMatMap<T> gy(n.grad.data(), out_ch, p);
        if (auto* gw = parent_grad(n, 1)) {
          MatMap<T>(gw->data(), out_ch, ck).noalias() +=
              gy * ConstMatMap<T>(col.data(), ck, p).transpose();
        }
        if (auto* gx = parent_grad(n, 0)) {
          std::vector<T> dcol(ck * p);
          MatMap<T>(dcol.data(), ck, p).noalias() =
              ConstMatMap<T>(n.parents[1]->value.data(), out_ch, ck).transpose() * gy;
          col2im(dcol.data(), g, gx->data());
        }
        if (has_bias) {
          if (auto* gb = parent_grad(n, 2)) {
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb->data(), out_ch) +=
                gy.rowwise().sum();
          }
        }
      });
}

}  // namespace detail

// 3D convolution. x (C,D,H,W), w (O,C,kd,kh,kw), b (O) or undefined.
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::array<std::size_t, 3> stride, std::array<std::size_t, 3> pad) {
  detail::require_rank("conv3d", x.shape(), 4);
  detail::require_rank("conv3d(weight)", w.shape(), 5);
  if (w.dim(1) != x.dim(0)) throw detail::shape_error("conv3d", x.shape(), w.shape());
  if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(0))) {
    throw detail::shape_error("conv3d(bias)", w.shape(), b.shape());
  }
  detail::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
                     w.dim(2), w.dim(3), w.dim(4),
                     stride[0], stride[1], stride[2],
                     pad[0], pad[1], pad[2], 0, 0, 0};
  g.od = detail::conv_out(g.d, g.kd, g.sd, g.pd);
  g.oh = detail::conv_out(g.h, g.kh, g.sh, g.ph);
  g.ow = detail::conv_out(g.w, g.kw, g.sw, g.pw);
  if (g.positions() == 0) throw detail::shape_error("conv3d", x.shape(), w.shape());
  return detail::conv_impl<T>("conv3d", x, w, b, g, w.dim(0),
                              {w.dim(0), g.od, g.oh, g.ow});
}

// 2D convolution. x (C,H,W), w (O,C,kh,kw), b (O) or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride, std::size_t pad) {
  detail::require_rank("conv2d", x.shape(), 3);
  detail::require_rank("conv2d(weight)", w.shape(), 4);
  if (w.dim(1) != x.dim(0)) throw detail::shape_error("conv2d", x.shape(), w.shape());
  if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(0))) {
    throw detail::shape_error("conv2d(bias)", w.shape(), b.shape());
  }
  detail::ConvGeom g{x.dim(0), 1, x.dim(1), x.dim(2), 1, w.dim(2), w.dim(3),
                     1, stride, stride, 0, pad, pad, 1, 0, 0};
  g.oh = detail::conv_out(g.h, g.kh, g.sh, g.ph);
  g.ow = detail::conv_out(g.w, g.kw, g.sw, g.pw);
  if (g.positions() == 0) throw detail::shape_error("conv2d", x.shape(), w.shape());
  return detail::conv_impl<T>("conv2d", x, w, b, g, w.dim(0), {w.dim(0), g.oh, g.ow});
}

// Transposed 2D convolution. x (C,H,W), w (C,O,kh,kw), b (O) or undefined.
// Output (O, (H-1)*stride - 2*pad + kh, (W-1)*stride - 2*pad + kw).
template <class T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                   std::size_t stride, std::size_t pad) {
  detail::require_rank("deconv2d", x.shape(), 3);
  detail::require_rank("deconv2d(weight)", w.shape(), 4);
  if (w.dim(0) != x.dim(0)) throw detail::shape_error("deconv2d", x.shape(), w.shape());
  std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  std::size_t o = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != o)) {
    throw detail::shape_error("deconv2d(bias)", w.shape(), b.shape());
  }
  std::ptrdiff_t oh = static_cast<std::ptrdiff_t>((h - 1) * stride + kh) -
                      2 * static_cast<std::ptrdiff_t>(pad);
  std::ptrdiff_t ow = static_cast<std::ptrdiff_t>((wd - 1) * stride + kw) -
                      2 * static_cast<std::ptrdiff_t>(pad);
  if (h == 0 || wd == 0 || oh <= 0 || ow <= 0) {
    throw detail::shape_error("deconv2d", x.shape(), w.shape());
  }
  // Geometry of the forward convolution whose input-gradient this op is.
  detail::ConvGeom g{o, 1, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow),
                     1, kh, kw, 1, stride, stride, 0, pad, pad, 1, h, wd};
  std::size_t ok = o * kh * kw, p = h * wd;
  std::vector<T> col(ok * p);
  detail::MatMap<T>(col.data(), ok, p).noalias() =
      detail::ConstMatMap<T>(w.values().data(), c, ok).transpose() *
      detail::ConstMatMap<T>(x.values().data(), c, p);
  std::size_t ohw = g.h * g.w;
  std::vector<T> out(o * ohw, T(0));
  detail::col2im(col.data(), g, out.data());
  bool has_bias = b.defined();
  if (has_bias) {
    for (std::size_t ch = 0; ch < o; ++ch)
      for (std::size_t i = 0; i < ohw; ++i) out[ch * ohw + i] += b.values()[ch];
  }
  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return detail::make_result<T>(
      "deconv2d", {o, g.h, g.w}, std::move(out), inputs,
      [g, c, o, ok, p, ohw, has_bias](Node<T>& n) {
        std::vector<T> dcol(ok * p);
        detail::im2col(n.grad.data(), g, dcol.data());
        detail::ConstMatMap<T> dc(dcol.data(), ok, p);
        if (auto* gx = detail::parent_grad(n, 0)) {
          detail::MatMap<T>(gx->data(), c, p).noalias() +=
              detail::ConstMatMap<T>(n.parents[1]->value.data(), c, ok) * dc;
        }
        if (auto* gw = detail::parent_grad(n, 1)) {
          detail::MatMap<T>(gw->data(), c, ok).noalias() +=
              detail::ConstMatMap<T>(n.parents[0]->value.data(), c, p) * dc.transpose();
        }
        if (has_bias) {
          if (auto* gb = detail::parent_grad(n, 2)) {
            for (std::size_t ch = 0; ch < o; ++ch) {
              T s = 0;
              for (std::size_t i = 0; i < ohw; ++i) s += n.grad[ch * ohw + i];
              (*gb)[ch] += s;
            }
          }
        }
      });
}

// ------------------------------------------------------------ normalisation

// Softmax along `axis`. With a mask (same numel as x, nonzero = allowed),
// disallowed entries get probability exactly 0; every slice must allow at
// least one entry.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis,
                  const std::vector<std::uint8_t>& mask = {}) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
  }
  if (!mask.empty() && mask.size() != x.numel()) {
    throw ShapeError("softmax: mask of " + std::to_string(mask.size()) +
                     " entries for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1, n = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const auto& xv = x.values();
  std::vector<T> out(xv.size(), T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      auto at = [&](std::size_t k) { return (o * n + k) * inner + i; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < n; ++k)
        if (mask.empty() || mask[at(k)]) mx = std::max(mx, xv[at(k)]);
      if (!std::isfinite(mx)) throw ContractError("softmax: fully masked slice");
      T z = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (!mask.empty() && !mask[at(k)]) continue;
        out[at(k)] = std::exp(xv[at(k)] - mx);
        z += out[at(k)];
      }
      for (std::size_t k = 0; k < n; ++k) out[at(k)] /= z;
    }
  return detail::make_result<T>(
      "softmax", s, std::move(out), {x}, [outer, n, inner](Node<T>& nd) {
        auto* g = detail::parent_grad(nd, 0);
        if (!g) return;
        const auto& y = nd.value;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i) {
            T dot = 0;
            for (std::size_t k = 0; k < n; ++k) {
              std::size_t j = (o * n + k) * inner + i;
              dot += y[j] * nd.grad[j];
            }
            for (std::size_t k = 0; k < n; ++k) {
              std::size_t j = (o * n + k) * inner + i;
              (*g)[j] += y[j] * (nd.grad[j] - dot);
            }
          }
      });
}

// Row-wise layer normalisation of (M,C) with affine gamma/beta (C).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  detail::require_rank("layer_norm", x.shape(), 2);
  std::size_t m = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw detail::shape_error("layer_norm", x.shape(), gamma.shape());
  }
  const auto& xv = x.values();
  std::vector<T> xhat(m * c), inv_std(m), out(m * c);
  for (std::size_t r = 0; r < m; ++r) {
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[r * c + j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      T d = xv[r * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(c);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (xv[r * c + j] - mu) * inv_std[r];
      out[r * c + j] = xhat[r * c + j] * gamma.values()[j] + beta.values()[j];
    }
  }
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [m, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& n) {
        const auto& gam = n.parents[1]->value;
        auto* gx = detail::parent_grad(n, 0);
        auto* gg = detail::parent_grad(n, 1);
        auto* gb = detail::parent_grad(n, 2);
        for (std::size_t r = 0; r < m; ++r) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < c; ++j) {
            T dy = n.grad[r * c + j];
            if (gg) (*gg)[j] += dy * xhat[r * c + j];
            if (gb) (*gb)[j] += dy;
            T dxh = dy * gam[j];
            mean_d += dxh;
            mean_dx += dxh * xhat[r * c + j];
          }
          if (!gx) continue;
          mean_d /= static_cast<T>(c);
          mean_dx /= static_cast<T>(c);
          for (std::size_t j = 0; j < c; ++j) {
            T dxh = n.grad[r * c + j] * gam[j];
            (*gx)[r * c + j] += inv_std[r] * (dxh - mean_d - xhat[r * c + j] * mean_dx);
          }
        }
      });
}

// --------------------------------------------------------------------- losses

// Sum over elements of
//   pos_w * -(1-p)^gamma * log(p)  +  neg_w * -p^gamma * log(1-p),
// p = sigmoid(logit). Binary focal loss uses pos_w = alpha*t,
// neg_w = (1-alpha)*(1-t); the Gaussian-heatmap variant uses pos_w = [y==1],
// neg_w = (1-y)^4.
template <class T>
Tensor<T> focal_terms(const Tensor<T>& logits, const std::vector<T>& pos_w,
                      const std::vector<T>& neg_w, T gamma) {
  std::size_t n = logits.numel();
  if (pos_w.size() != n || neg_w.size() != n) {
    throw ShapeError("focal_terms: " + std::to_string(pos_w.size()) +
                     " weights for logits " + shape_str(logits.shape()));
  }
  const auto& xv = logits.values();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    T p = detail::stable_sigmoid(xv[i]);
    T log_p = -detail::softplus(-xv[i]);
    T log_q = -detail::softplus(xv[i]);
    if (pos_w[i] != T(0)) total -= pos_w[i] * std::pow(T(1) - p, gamma) * log_p;
    if (neg_w[i] != T(0)) total -= neg_w[i] * std::pow(p, gamma) * log_q;
  }
  return detail::make_result<T>(
      "focal_terms", {}, {total}, {logits}, [pos_w, neg_w, gamma](Node<T>& nd) {
        auto* g = detail::parent_grad(nd, 0);
        if (!g) return;
        const auto& x = nd.parents[0]->value;
        T up = nd.grad[0];
        for (std::size_t i = 0; i < x.size(); ++i) {
          T p = detail::stable_sigmoid(x[i]);
          T q = T(1) - p;
          T log_p = -detail::softplus(-x[i]);
          T log_q = -detail::softplus(x[i]);
          T d = 0;
          if (pos_w[i] != T(0))
            d += pos_w[i] * std::pow(q, gamma) * (gamma * p * log_p - q);
          if (neg_w[i] != T(0))
            d += neg_w[i] * std::pow(p, gamma) * (p - gamma * q * log_q);
          (*g)[i] += up * d;
        }
      });
}

// Sum of weight * smoothL1(pred - target) with transition point beta.
template <class T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const std::vector<T>& target,
                    const std::vector<T>& weight, T beta) {
  std::size_t n = pred.numel();
  if (target.size() != n || weight.size() != n) {
    throw ShapeError("smooth_l1: " + std::to_string(target.size()) +
                     " targets for " + shape_str(pred.shape()));
  }
  if (!(beta > T(0))) throw ContractError("smooth_l1: beta must be positive");
  const auto& pv = pred.values();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weight[i] == T(0)) continue;
    T d = std::abs(pv[i] - target[i]);
    total += weight[i] * (d < beta ? T(0.5) * d * d / beta : d - T(0.5) * beta);
  }
  return detail::make_result<T>(
      "smooth_l1", {}, {total}, {pred}, [target, weight, beta](Node<T>& nd) {
        auto* g = detail::parent_grad(nd, 0);
        if (!g) return;
        const auto& p = nd.parents[0]->value;
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (weight[i] == T(0)) continue;
          T d = p[i] - target[i];
          T slope = std::abs(d) < beta ? d / beta : (d > 0 ? T(1) : T(-1));
          (*g)[i] += nd.grad[0] * weight[i] * slope;
        }
      });
}

}  // namespace fgf
