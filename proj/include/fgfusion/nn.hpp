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

// Parameterised layers. Each layer registers its weights in a ParamStore
// under "<prefix>.<field>" at construction and keeps handles to them.

#include <cmath>
#include <string>
#include <vector>

#include "fgfusion/ops.hpp"
#include "fgfusion/params.hpp"

namespace fgf::nn {

template <class T>
struct Linear {
  Tensor<T> weight;  // (out, in)
  Tensor<T> bias;    // (out) or undefined

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out,
         bool with_bias = true, Init init = Init::kFanInUniform) {
    weight = ps.create(name + ".weight", {out, in}, init, in);
    if (with_bias) {
      bias = ps.create(name + ".bias", {out},
                       init == Init::kFanInUniform ? Init::kFanInUniform : Init::kZeros, in);
    }
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <class T>
struct Conv2d {
  Tensor<T> weight;  // (out, in, k, k)
  Tensor<T> bias;
  std::size_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out,
         std::size_t k, std::size_t stride_, std::size_t pad_,
         Init init = Init::kFanInUniform)
      : stride(stride_), pad(pad_) {
    weight = ps.create(name + ".weight", {out, in, k, k}, init, in * k * k);
    bias = ps.create(name + ".bias", {out},
                     init == Init::kFanInUniform ? Init::kFanInUniform : Init::kZeros,
                     in * k * k);
  }
  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, stride, pad);
  }
};

template <class T>
struct Conv3d {
  Tensor<T> weight;  // (out, in, 3, 3, 3)
  Tensor<T> bias;
  std::array<std::size_t, 3> stride{1, 1, 1}, pad{1, 1, 1};

  Conv3d() = default;
  Conv3d(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out,
         std::array<std::size_t, 3> stride_)
      : stride(stride_) {
    weight = ps.create(name + ".weight", {out, in, 3, 3, 3}, Init::kFanInUniform, in * 27);
    bias = ps.create(name + ".bias", {out}, Init::kFanInUniform, in * 27);
  }
  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv3d(x, weight, bias, stride, pad);
  }
};

template <class T>
struct Deconv2d {
  Tensor<T> weight;  // (in, out, k, k)
  Tensor<T> bias;
  std::size_t stride = 1, pad = 0;

  Deconv2d() = default;
  Deconv2d(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out,
           std::size_t k, std::size_t stride_, std::size_t pad_)
      : stride(stride_), pad(pad_) {
    weight = ps.create(name + ".weight", {in, out, k, k}, Init::kFanInUniform, in * k * k);
    bias = ps.create(name + ".bias", {out}, Init::kFanInUniform, in * k * k);
  }
  Tensor<T> operator()(const Tensor<T>& x) const {
    return deconv2d(x, weight, bias, stride, pad);
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, std::size_t dim) {
    gamma = ps.create(name + ".gamma", {dim}, Init::kOnes);
    beta = ps.create(name + ".beta", {dim}, Init::kZeros);
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

// Single-head scaled dot-product attention. Value and output projections are
// bias-free so all-zero values give an exactly-zero attention output.
template <class T>
struct Attention {
  Linear<T> q, k, v, o;
  std::size_t dim = 0;

  struct Result {
    Tensor<T> out;      // (Q, dim)
    Tensor<T> weights;  // (Q, M), rows sum to 1
  };

  Attention() = default;
  Attention(ParamStore<T>& ps, const std::string& name, std::size_t query_dim,
            std::size_t key_dim, std::size_t dim_)
      : dim(dim_) {
    q = Linear<T>(ps, name + ".q", query_dim, dim);
    k = Linear<T>(ps, name + ".k", key_dim, dim);
    v = Linear<T>(ps, name + ".v", key_dim, dim, false);
    o = Linear<T>(ps, name + ".o", dim, query_dim, false);
  }

  // query (Q, query_dim); key/value (M, key_dim); key already carries any
  // positional encoding. mask (Q*M, nonzero = attend) may be empty.
  Result operator()(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value,
                    const std::vector<std::uint8_t>& mask = {}) const {
    Tensor<T> qp = q(query);
    Tensor<T> kp = k(key);
    Tensor<T> vp = v(value);
    Tensor<T> logits = scale(matmul(qp, transpose2d(kp)),
                             T(1) / std::sqrt(static_cast<T>(dim)));
    Tensor<T> w = softmax(logits, 1, mask);
    return {o(matmul(w, vp)), w};
  }
};

template <class T>
struct FeedForward {
  Linear<T> fc1, fc2;

  FeedForward() = default;
  FeedForward(ParamStore<T>& ps, const std::string& name, std::size_t dim,
              std::size_t hidden) {
    fc1 = Linear<T>(ps, name + ".fc1", dim, hidden);
    fc2 = Linear<T>(ps, name + ".fc2", hidden, dim);
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(relu(fc1(x))); }
};

}  // namespace fgf::nn
