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

// Per-level query decoding and lidar-camera fusion.
//
// Each fused level owns a BEV neck, a class-agnostic center heatmap, a lidar
// decoder layer with its box head, and an image decoder layer with its box
// head. Levels share no state.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "fgfusion/box.hpp"
#include "fgfusion/geometry.hpp"
#include "fgfusion/nn.hpp"

namespace fgf {

struct FusionConfig {
  std::size_t queries = 20;
  std::size_t dim = 64;  // C_q
  std::size_t ffn_hidden = 128;
  std::size_t heatmap_hidden = 32;
  std::size_t num_classes = 2;
  double z_anchor = -1.0;
  std::array<double, 3> size_anchor{1.6, 3.9, 1.56};  // w, l, h
  std::size_t window_dilation = 2;
  bool full_image_attention = false;
};

inline constexpr double kPriorLogit = -2.19;  // sigmoid ~ 0.1

// Fourier features of normalised 2D positions: dim/4 frequencies per axis,
// geometric from pi to 64 pi, each contributing sin and cos.
template <class T>
Tensor<T> positional_encoding(const std::vector<std::array<double, 2>>& pos, std::size_t dim) {
  if (dim % 4 != 0) throw ContractError("positional_encoding: dim must be a multiple of 4");
  std::size_t nf = dim / 4;
  std::vector<T> v(pos.size() * dim);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    for (std::size_t a = 0; a < 2; ++a) {
      for (std::size_t f = 0; f < nf; ++f) {
        double w = std::numbers::pi *
                   std::pow(2.0, 6.0 * static_cast<double>(f) / std::max<double>(1, nf - 1));
        double ang = w * pos[i][a];
        v[i * dim + a * 2 * nf + 2 * f] = static_cast<T>(std::sin(ang));
        v[i * dim + a * 2 * nf + 2 * f + 1] = static_cast<T>(std::cos(ang));
      }
    }
  }
  return Tensor<T>::from_vector({pos.size(), dim}, std::move(v));
}

// Cells surviving a 3x3 local-maximum filter keep their score, others drop to
// zero; then the top q by score, ties broken by row-major index.
inline std::vector<std::size_t> select_queries(const std::vector<double>& heat, std::size_t h,
                                               std::size_t w, std::size_t q,
                                               bool local_max = true) {
  if (heat.size() != h * w) throw ShapeError("select_queries: heatmap size mismatch");
  if (q > h * w) {
    throw ContractError("select_queries: " + std::to_string(q) + " queries for " +
                        std::to_string(h * w) + " cells");
  }
  std::vector<double> score = heat;
  if (local_max) {
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        double v = heat[r * w + c];
        bool peak = true;
        for (int dr = -1; dr <= 1 && peak; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
            if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
            if (heat[rr * w + cc] > v) {
              peak = false;
              break;
            }
          }
        if (!peak) score[r * w + c] = 0;
      }
  }
  std::vector<std::size_t> idx(h * w);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  idx.resize(q);
  return idx;
}

template <class T>
struct HeadOutput {
  Tensor<T> boxes;         // (Q, 8): x, y, z, log w, log l, log h, sin, cos
  Tensor<T> class_logits;  // (Q, K)
  bool defined() const { return boxes.defined(); }
};

template <class T>
struct LevelPrediction {
  std::size_t level = 0;          // lidar stage index, 0-based
  Tensor<T> heatmap_logits;       // (1, H, W)
  std::vector<std::size_t> cells;  // selected BEV cells, row-major
  HeadOutput<T> initial;
  HeadOutput<T> fused;             // undefined in lidar-only mode
  Tensor<T> lidar_weights;         // (Q, H*W)
  Tensor<T> image_weights;         // (Q, Hi*Wi + 1); last column is the global token
  std::vector<std::uint8_t> image_mask;
  Tensor<T> cross_residual;        // LN(q + image cross-attention), for inspection

  const HeadOutput<T>& final() const { return fused.defined() ? fused : initial; }
};

template <class T>
struct DecoderLayer {
  nn::Attention<T> self_attn, cross_attn;
  nn::LayerNorm<T> norm1, norm2, norm3;
  nn::FeedForward<T> ffn;

  struct Out {
    Tensor<T> queries;
    Tensor<T> after_cross;
    Tensor<T> cross_weights;
  };

  DecoderLayer() = default;
  DecoderLayer(ParamStore<T>& ps, const std::string& name, std::size_t dim, std::size_t key_dim,
               std::size_t hidden)
      : self_attn(ps, name + ".self", dim, dim, dim),
        cross_attn(ps, name + ".cross", dim, key_dim, dim),
        norm1(ps, name + ".norm1", dim),
        norm2(ps, name + ".norm2", dim),
        norm3(ps, name + ".norm3", dim),
        ffn(ps, name + ".ffn", dim, hidden) {}

  Out operator()(const Tensor<T>& q, const Tensor<T>& qpos, const Tensor<T>& keys,
                 const Tensor<T>& values, const std::vector<std::uint8_t>& mask) const {
    Tensor<T> qp = add(q, qpos);
    Tensor<T> x = norm1(add(q, self_attn(qp, qp, q).out));
    auto ca = cross_attn(add(x, qpos), keys, values, mask);
    Tensor<T> y = norm2(add(x, ca.out));
    Tensor<T> z = norm3(add(y, ffn(y)));
    return {z, y, ca.weights};
  }
};

template <class T>
struct BoxHead {
  nn::Linear<T> reg1, reg2, cls1, cls2;

  BoxHead() = default;
  // A residual head starts at exactly zero output.
  BoxHead(ParamStore<T>& ps, const std::string& name, std::size_t dim, std::size_t classes,
          bool residual = false)
      : reg1(ps, name + ".reg1", dim, dim),
        reg2(ps, name + ".reg2", dim, 8, true, residual ? Init::kZeros : Init::kFanInUniform),
        cls1(ps, name + ".cls1", dim, dim),
        cls2(ps, name + ".cls2", dim, classes, true,
             residual ? Init::kZeros : Init::kFanInUniform) {
    if (!residual) {
      Tensor<T> b = cls2.bias;
      for (auto& v : b.mutable_data()) v = static_cast<T>(kPriorLogit);
    }
  }

  // Raw outputs added onto another head's prediction.
  HeadOutput<T> refine(const Tensor<T>& q, const HeadOutput<T>& base,
                       const std::array<double, 2>& cell) const {
    Tensor<T> raw = reg2(relu(reg1(q)));
    std::vector<T> sc{static_cast<T>(cell[0]), static_cast<T>(cell[1]), 1, 1, 1, 1, 1, 1};
    return {add(base.boxes, mul(raw, Tensor<T>::from_vector({1, 8}, sc))),
            add(base.class_logits, cls2(relu(cls1(q))))};
  }

  // Box parameters are offsets from the query cell center (in cells), the z
  // anchor (meters) and the log size anchor.
  HeadOutput<T> operator()(const Tensor<T>& q, const std::vector<std::array<double, 2>>& centers,
                           const std::array<double, 2>& cell, const FusionConfig& cfg) const {
    Tensor<T> raw = reg2(relu(reg1(q)));
    std::size_t n = centers.size();
    std::vector<T> sc{static_cast<T>(cell[0]), static_cast<T>(cell[1]), 1, 1, 1, 1, 1, 1};
    std::vector<T> off(n * 8, T(0));
    for (std::size_t i = 0; i < n; ++i) {
      off[i * 8 + 0] = static_cast<T>(centers[i][0]);
      off[i * 8 + 1] = static_cast<T>(centers[i][1]);
      off[i * 8 + 2] = static_cast<T>(cfg.z_anchor);
      for (int k = 0; k < 3; ++k) off[i * 8 + 3 + k] = static_cast<T>(std::log(cfg.size_anchor[k]));
    }
    Tensor<T> boxes = add(mul(raw, Tensor<T>::from_vector({1, 8}, sc)),
                          Tensor<T>::from_vector({n, 8}, off));
    return {boxes, cls2(relu(cls1(q)))};
  }
};

template <class T>
std::vector<Box3D> decode_boxes(const Tensor<T>& boxes) {
  std::vector<Box3D> out;
  const auto& v = boxes.values();
  for (std::size_t i = 0; i < boxes.dim(0); ++i) {
    double raw[8];
    for (int k = 0; k < 8; ++k) raw[k] = static_cast<double>(v[i * 8 + k]);
    out.push_back(decode_box(raw));
  }
  return out;
}

// Bilinear taps sampling an image feature map (stride `stride` pixels per
// cell) at the projection of every BEV cell center at height z.
template <class T>
void bev_to_image_taps(const BEVFeatureMap<T>& bev, const Calibration& calib, double z,
                       std::size_t stride, std::size_t hi, std::size_t wi,
                       std::vector<std::int64_t>& idx, std::vector<T>& weight) {
  std::size_t h = bev.height(), w = bev.width();
  idx.assign(h * w * 4, -1);
  weight.assign(h * w * 4, T(0));
  auto m = calib.projection();
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      auto pr = project_point(m, calib.height, calib.width, bev.center_x(r), bev.center_y(c), z);
      if (!pr.valid) continue;
      double fu = pr.u / stride - 0.5, fv = pr.v / stride - 0.5;
      double u0 = std::floor(fu), v0 = std::floor(fv);
      double au = fu - u0, av = fv - v0;
      std::size_t k = (r * w + c) * 4;
      int tap = 0;
      for (int dv = 0; dv < 2; ++dv)
        for (int du = 0; du < 2; ++du, ++tap) {
          long vv = static_cast<long>(v0) + dv, uu = static_cast<long>(u0) + du;
          if (vv < 0 || uu < 0 || vv >= static_cast<long>(hi) || uu >= static_cast<long>(wi)) continue;
          idx[k + tap] = vv * static_cast<long>(wi) + uu;
          weight[k + tap] = static_cast<T>((dv ? av : 1 - av) * (du ? au : 1 - au));
        }
    }
}

// Image cells a query may attend to: the projected footprint of its box,
// dilated by `dilation` cells. Queries whose box lies fully outside the image
// attend to the global token (last column) only.
inline std::vector<std::uint8_t> image_window_mask(const std::vector<Box3D>& boxes,
                                                   const Calibration& calib, std::size_t stride,
                                                   std::size_t hi, std::size_t wi,
                                                   std::size_t dilation, bool full = false) {
  std::size_t m = hi * wi + 1;
  std::vector<std::uint8_t> mask(boxes.size() * m, 0);
  auto proj = calib.projection();
  for (std::size_t q = 0; q < boxes.size(); ++q) {
    std::uint8_t* row = mask.data() + q * m;
    if (full) {
      std::fill(row, row + m - 1, 1);
      continue;
    }
    double umin = 1e18, umax = -1e18, vmin = 1e18, vmax = -1e18;
    bool any = false;
    for (const auto& c : box_corners(boxes[q])) {
      auto pr = project_point(proj, calib.height, calib.width, c[0], c[1], c[2]);
      if (pr.depth <= 0) continue;
      any = true;
      umin = std::min(umin, pr.u), umax = std::max(umax, pr.u);
      vmin = std::min(vmin, pr.v), vmax = std::max(vmax, pr.v);
    }
    if (any) {
      umin = std::max(umin, 0.0), vmin = std::max(vmin, 0.0);
      umax = std::min(umax, calib.width - 1e-9), vmax = std::min(vmax, calib.height - 1e-9);
    }
    if (!any || umin > umax || vmin > vmax) {
      row[m - 1] = 1;
      continue;
    }
    long d = static_cast<long>(dilation);
    long c0 = std::max(0L, static_cast<long>(umin / stride) - d);
    long c1 = std::min(static_cast<long>(wi) - 1, static_cast<long>(umax / stride) + d);
    long r0 = std::max(0L, static_cast<long>(vmin / stride) - d);
    long r1 = std::min(static_cast<long>(hi) - 1, static_cast<long>(vmax / stride) + d);
    bool hit = false;
    for (long r = r0; r <= r1; ++r)
      for (long c = c0; c <= c1; ++c) {
        row[r * wi + c] = 1;
        hit = true;
      }
    if (!hit) row[m - 1] = 1;
  }
  return mask;
}

template <class T>
class FusionLevel {
 public:
  FusionLevel() = default;
  FusionLevel(ParamStore<T>& ps, const std::string& name, std::size_t bev_channels,
              std::size_t image_channels, const FusionConfig& cfg)
      : cfg_(cfg), image_channels_(image_channels) {
    std::size_t d = cfg.dim;
    neck_ = nn::Conv2d<T>(ps, name + ".neck", bev_channels, d, 3, 1, 1);
    hm1_ = nn::Conv2d<T>(ps, name + ".heatmap1", d, cfg.heatmap_hidden, 3, 1, 1);
    hm2_ = nn::Conv2d<T>(ps, name + ".heatmap2", cfg.heatmap_hidden, 1, 1, 1, 0);
    Tensor<T> b = hm2_.bias;
    for (auto& v : b.mutable_data()) v = static_cast<T>(kPriorLogit);
    img_mod_ = nn::Linear<T>(ps, name + ".image_init", image_channels, d, false, Init::kZeros);
    dec_lidar_ = DecoderLayer<T>(ps, name + ".decoder_lidar", d, d, cfg.ffn_hidden);
    head_lidar_ = BoxHead<T>(ps, name + ".head_lidar", d, cfg.num_classes);
    dec_image_ = DecoderLayer<T>(ps, name + ".decoder_image", d, image_channels, cfg.ffn_hidden);
    head_image_ = BoxHead<T>(ps, name + ".head_image", d, cfg.num_classes, true);
  }

  struct ImageInput {
    const Tensor<T>* features = nullptr;  // F' (C_f, Hi, Wi)
    std::size_t stride = 0;
    const Calibration* calib = nullptr;
  };

  // Lidar-only when `image.features` is null; otherwise image-guided
  // initialisation and the image decoder run as well.
  LevelPrediction<T> forward(const BEVFeatureMap<T>& bev, std::size_t level,
                             const ImageInput& image) const {
    const FusionConfig& cfg = cfg_;
    LevelPrediction<T> out;
    out.level = level;
    std::size_t h = bev.height(), w = bev.width(), d = cfg.dim;
    Tensor<T> rows = channels_last(relu(neck_(bev.features)));  // (HW, d)
    const bool fused = image.features != nullptr;
    std::size_t hi = 0, wi = 0;
    if (fused) {
      const Tensor<T>& f = *image.features;
      if (f.rank() != 3 || f.dim(0) != image_channels_) {
        throw ShapeError("fusion: image features " + shape_str(f.shape()));
      }
      hi = f.dim(1), wi = f.dim(2);
      std::vector<std::int64_t> idx;
      std::vector<T> wt;
      bev_to_image_taps(bev, *image.calib, cfg.z_anchor, image.stride, hi, wi, idx, wt);
      rows = add(rows, img_mod_(weighted_rows(channels_last(f), idx, wt, 4)));
    }
    Tensor<T> grid = reshape(transpose2d(rows), {d, h, w});
    out.heatmap_logits = hm2_(relu(hm1_(grid)));

    std::vector<double> heat(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
      heat[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(out.heatmap_logits[i])));
    }
    out.cells = select_queries(heat, h, w, cfg.queries);

    std::vector<std::array<double, 2>> all_pos(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
      all_pos[i] = {(i / w + 0.5) / h, (i % w + 0.5) / w};
    }
    Tensor<T> pos = positional_encoding<T>(all_pos, d);
    Tensor<T> qpos = gather_rows(pos, out.cells);
    Tensor<T> q0 = add(gather_rows(rows, out.cells), qpos);
    std::vector<std::array<double, 2>> centers;
    for (std::size_t c : out.cells) centers.push_back({bev.center_x(c / w), bev.center_y(c % w)});
    std::array<double, 2> cell{bev.cell_x, bev.cell_y};

    auto l1 = dec_lidar_(q0, qpos, add(rows, pos), rows, {});
    out.lidar_weights = l1.cross_weights;
    out.initial = head_lidar_(l1.queries, centers, cell, cfg);
    if (!fused) return out;

    const Tensor<T>& f = *image.features;
    Tensor<T> img_rows = channels_last(f);  // (Hi*Wi, C_f)
    std::vector<std::array<double, 2>> ipos(hi * wi);
    for (std::size_t i = 0; i < hi * wi; ++i) ipos[i] = {(i / wi + 0.5) / hi, (i % wi + 0.5) / wi};
    Tensor<T> global = reshape(scale(sum_axis(img_rows, 0), T(1) / static_cast<T>(hi * wi)),
                               {1, image_channels_});
    Tensor<T> keys = concat<T>({add(img_rows, positional_encoding<T>(ipos, image_channels_)), global}, 0);
    Tensor<T> values = concat<T>({img_rows, global}, 0);
    std::vector<Box3D> init_boxes = decode_boxes(out.initial.boxes);
    out.image_mask = image_window_mask(init_boxes, *image.calib, image.stride, hi, wi,
                                       cfg.window_dilation, cfg.full_image_attention);
    auto l2 = dec_image_(l1.queries, qpos, keys, values, out.image_mask);
    out.image_weights = l2.cross_weights;
    out.cross_residual = l2.after_cross;
    out.fused = head_image_.refine(l2.queries, out.initial, cell);
    return out;
  }

 private:
  FusionConfig cfg_;
  std::size_t image_channels_ = 0;
  nn::Conv2d<T> neck_, hm1_, hm2_;
  nn::Linear<T> img_mod_;
  DecoderLayer<T> dec_lidar_, dec_image_;
  BoxHead<T> head_lidar_, head_image_;
};

inline std::string fusion_level_prefix(std::size_t stage) {
  return "fusion.level" + std::to_string(stage + 1);
}

// One FusionLevel per fused BEV level; level k of the last N pairs with image
// pyramid level k of its last N, both ordered fine to coarse.
template <class T>
class MultiScaleFusion {
 public:
  MultiScaleFusion() = default;
  MultiScaleFusion(ParamStore<T>& ps, const FusionConfig& cfg,
                   const std::vector<std::size_t>& bev_channels, std::size_t image_channels,
                   std::size_t fused_levels)
      : cfg_(cfg), fused_levels_(fused_levels), stages_(bev_channels.size()) {
    if (fused_levels < 1 || fused_levels > stages_) {
      throw ConfigError("fusion: " + std::to_string(fused_levels) + " fused levels but " +
                        std::to_string(stages_) + " lidar stages");
    }
    for (std::size_t s = stages_ - fused_levels; s < stages_; ++s) {
      levels_.emplace_back(ps, fusion_level_prefix(s), bev_channels[s], image_channels, cfg);
    }
  }

  std::size_t fused_levels() const { return fused_levels_; }
  std::size_t first_stage() const { return stages_ - fused_levels_; }
  const FusionConfig& config() const { return cfg_; }

  // Lidar-only pass over the last BEV level.
  LevelPrediction<T> forward_lidar(const std::vector<BEVFeatureMap<T>>& bev) const {
    if (bev.size() != stages_) throw ConfigError("fusion: BEV pyramid depth mismatch");
    return levels_.back().forward(bev.back(), stages_ - 1, {});
  }

  std::vector<LevelPrediction<T>> forward(const std::vector<BEVFeatureMap<T>>& bev,
                                          const std::vector<Tensor<T>>& image_levels,
                                          const std::vector<std::size_t>& image_strides,
                                          const Calibration& calib) const {
    if (bev.size() != stages_) throw ConfigError("fusion: BEV pyramid depth mismatch");
    if (image_levels.size() != fused_levels_ || image_strides.size() != fused_levels_) {
      throw ConfigError("fusion: " + std::to_string(image_levels.size()) +
                        " image levels for " + std::to_string(fused_levels_) + " fused levels");
    }
    std::vector<LevelPrediction<T>> out;
    for (std::size_t k = 0; k < fused_levels_; ++k) {
      typename FusionLevel<T>::ImageInput img{&image_levels[k], image_strides[k], &calib};
      out.push_back(levels_[k].forward(bev[first_stage() + k], first_stage() + k, img));
    }
    return out;
  }

 private:
  FusionConfig cfg_;
  std::size_t fused_levels_ = 0, stages_ = 0;
  std::vector<FusionLevel<T>> levels_;
};

}  // namespace fgf
