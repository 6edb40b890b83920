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

// Image backbone, top-down pyramid and the spatial/channel attention pyramid.

#include <string>
#include <vector>

#include "fgfusion/nn.hpp"

namespace fgf {

struct CameraConfig {
  std::size_t height = 448;
  std::size_t width = 800;
  std::size_t lateral_channels = 64;  // C_f
  std::size_t reduction = 4;          // r in the channel-attention bottleneck
  std::size_t fused_levels = 3;       // N
  bool attention = true;              // false: F' = F
};

inline constexpr std::size_t kCameraBlocks = 4;
inline constexpr std::size_t kCameraChannels[kCameraBlocks] = {16, 32, 64, 128};
inline constexpr std::size_t kCameraStrides[kCameraBlocks] = {4, 8, 16, 32};

// Spatial size after `n` stride-2, pad-1, 3x3 convolutions.
inline std::size_t halve(std::size_t s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) s = (s + 1) / 2;
  return s;
}

template <class T>
Tensor<T> spatial_attention(const Tensor<T>& f, const nn::Deconv2d<T>& kernel) {
  return sigmoid(kernel(f));
}

template <class T>
struct ChannelAttention {
  Tensor<T> logits;     // (C, 1, 1), pre-sigmoid, carried to the next level
  Tensor<T> attention;  // (C, 1, 1)
};

// A^c = sigmoid(W_b relu(W_a GAP(F)) + prev_logits).
template <class T>
ChannelAttention<T> channel_attention(const Tensor<T>& f, const Tensor<T>& prev_logits,
                                      const nn::Linear<T>& wa, const nn::Linear<T>& wb) {
  std::size_t c = f.dim(0);
  Tensor<T> g = reshape(global_average_pool(f), {1, c});
  Tensor<T> z = reshape(wb(relu(wa(g))), {c, 1, 1});
  if (prev_logits.defined()) {
    if (prev_logits.shape() != z.shape()) {
      throw ShapeError("channel_attention: previous level " + shape_str(prev_logits.shape()) +
                       " vs " + shape_str(z.shape()));
    }
    z = add(z, prev_logits);
  }
  return {z, sigmoid(z)};
}

// F' = F * (A^s + alpha A^c) with broadcasting.
template <class T>
Tensor<T> apply_attention(const Tensor<T>& f, const Tensor<T>& as, const Tensor<T>& ac,
                          const Tensor<T>& alpha) {
  return mul(f, add(as, mul(alpha, ac)));
}

template <class T>
struct CameraOutput {
  std::vector<Tensor<T>> blocks;    // B_1..B_l
  std::vector<Tensor<T>> laterals;  // F_{l-N+1}..F_l, fine to coarse
  std::vector<Tensor<T>> spatial;   // A^s per level
  std::vector<Tensor<T>> channel;   // A^c per level
  std::vector<Tensor<T>> fused;     // F' per level
  std::vector<std::size_t> strides;
};

template <class T>
class CameraStream {
 public:
  CameraStream() = default;
  CameraStream(ParamStore<T>& ps, const CameraConfig& cfg) : cfg_(cfg) {
    if (cfg.fused_levels < 1 || cfg.fused_levels > kCameraBlocks) {
      throw ContractError("camera: fused level count " + std::to_string(cfg.fused_levels) +
                          " outside [1, " + std::to_string(kCameraBlocks) + "]");
    }
    if (cfg.lateral_channels % cfg.reduction != 0 || cfg.reduction == 0) {
      throw ContractError("camera: lateral channels not divisible by reduction ratio");
    }
    stem_ = nn::Conv2d<T>(ps, "cam.stem", 3, kCameraChannels[0], 3, 2, 1);
    std::size_t in = kCameraChannels[0];
    for (std::size_t b = 0; b < kCameraBlocks; ++b) {
      blocks_.emplace_back(ps, "cam.block" + std::to_string(b + 1), in, kCameraChannels[b], 3,
                           2, 1);
      in = kCameraChannels[b];
    }
    std::size_t cf = cfg.lateral_channels;
    for (std::size_t b = first_block(); b < kCameraBlocks; ++b) {
      std::string p = "cam.level" + std::to_string(b + 1);
      laterals_.emplace_back(ps, p + ".lateral", kCameraChannels[b], cf, 1, 1, 0);
      if (cfg.attention) {
        spatial_.emplace_back(ps, p + ".spatial", cf, 1, 3, 1, 1);
        reduce_.emplace_back(ps, p + ".ca_reduce", cf, cf / cfg.reduction);
        expand_.emplace_back(ps, p + ".ca_expand", cf / cfg.reduction, cf);
      }
    }
    if (cfg.attention) alpha_ = ps.create("cam.alpha", {1}, Init::kOnes);
  }

  const CameraConfig& config() const { return cfg_; }
  std::size_t first_block() const { return kCameraBlocks - cfg_.fused_levels; }
  std::size_t level_stride(std::size_t level) const {
    return kCameraStrides[first_block() + level];
  }
  const Tensor<T>& alpha() const { return alpha_; }

  std::vector<Tensor<T>> backbone(const Tensor<T>& image) const {
    Shape want{3, cfg_.height, cfg_.width};
    if (image.shape() != want) {
      throw ShapeError("camera backbone: image " + shape_str(image.shape()) + " vs expected " +
                       shape_str(want));
    }
    Tensor<T> x = relu(stem_(image));
    std::vector<Tensor<T>> out;
    for (const auto& blk : blocks_) {
      x = relu(blk(x));
      out.push_back(x);
    }
    return out;
  }

  // Laterals for the last N blocks, fine to coarse.
  std::vector<Tensor<T>> top_down(const std::vector<Tensor<T>>& blocks) const {
    if (blocks.size() != kCameraBlocks) throw ContractError("top_down: expected 4 blocks");
    std::size_t n = cfg_.fused_levels;
    std::vector<Tensor<T>> out(n);
    for (std::size_t k = n; k-- > 0;) {
      const Tensor<T>& b = blocks[first_block() + k];
      Tensor<T> lat = laterals_[k](b);
      if (k + 1 < n) lat = add(lat, upsample_nearest(out[k + 1], b.dim(1), b.dim(2)));
      out[k] = lat;
    }
    return out;
  }

  CameraOutput<T> forward(const Tensor<T>& image) const {
    CameraOutput<T> o;
    o.blocks = backbone(image);
    o.laterals = top_down(o.blocks);
    for (std::size_t k = 0; k < o.laterals.size(); ++k) o.strides.push_back(level_stride(k));
    if (!cfg_.attention) {
      o.fused = o.laterals;
      return o;
    }
    Tensor<T> prev;
    for (std::size_t k = 0; k < o.laterals.size(); ++k) {
      const Tensor<T>& f = o.laterals[k];
      Tensor<T> as = spatial_attention(f, spatial_[k]);
      auto ca = channel_attention(f, prev, reduce_[k], expand_[k]);
      prev = ca.logits;
      o.spatial.push_back(as);
      o.channel.push_back(ca.attention);
      o.fused.push_back(apply_attention(f, as, ca.attention, alpha_));
    }
    return o;
  }

 private:
  CameraConfig cfg_;
  nn::Conv2d<T> stem_;
  std::vector<nn::Conv2d<T>> blocks_;
  std::vector<nn::Conv2d<T>> laterals_;
  std::vector<nn::Deconv2d<T>> spatial_;
  std::vector<nn::Linear<T>> reduce_, expand_;
  Tensor<T> alpha_;
};

}  // namespace fgf
