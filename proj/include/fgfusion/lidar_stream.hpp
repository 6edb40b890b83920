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

// Dense 3D voxel backbone with one BEV map per stage, and the training-only
// auxiliary point heads (foreground segmentation, center offsets).

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fgfusion/box.hpp"
#include "fgfusion/geometry.hpp"
#include "fgfusion/nn.hpp"

namespace fgf {

inline constexpr std::size_t kMaxLidarStages = 4;
inline constexpr std::size_t kLidarInputChannels = 5;  // occupancy, offset xyz, intensity
inline constexpr std::size_t kMaxDenseVoxels = 64 * 64 * 64;

struct LidarConfig {
  DetectionRange range;
  VoxelSize voxel;
  std::size_t stages = 3;
  std::vector<std::size_t> channels{16, 32, 64, 64};
  BevMode bev_mode = BevMode::kConcat;
  bool aux = true;
  std::size_t aux_hidden = 32;
};

struct StageGeometry {
  std::size_t nx, ny, nz;              // stage volume dims
  std::size_t stride_xy, stride_z;     // cumulative, in input voxels
  std::array<std::size_t, 3> conv_stride;  // (z, x, y) stride of the entry conv
};

// Stage 1 keeps full resolution; each later stage halves x and y, and z while
// more than one slice remains.
inline std::vector<StageGeometry> lidar_stage_geometry(const LidarConfig& cfg) {
  if (cfg.stages < 1 || cfg.stages > kMaxLidarStages) {
    throw ConfigError("lidar: stage count " + std::to_string(cfg.stages) + " outside [1, " +
                      std::to_string(kMaxLidarStages) + "]");
  }
  if (cfg.channels.size() < cfg.stages) {
    throw ConfigError("lidar: " + std::to_string(cfg.channels.size()) +
                      " channel widths for " + std::to_string(cfg.stages) + " stages");
  }
  GridDims d = grid_dims(cfg.voxel, cfg.range);
  if (d.volume() > kMaxDenseVoxels) {
    throw ConfigError("lidar: dense grid " + std::to_string(d.nx) + "x" + std::to_string(d.ny) +
                      "x" + std::to_string(d.nz) + " exceeds the 64^3 voxel budget");
  }
  std::size_t need = std::size_t{1} << (cfg.stages - 1);
  if (d.nx < need || d.ny < need || d.nz < 1) {
    throw ConfigError("lidar: grid " + std::to_string(d.nx) + "x" + std::to_string(d.ny) +
                      " too small for " + std::to_string(cfg.stages) + " stages");
  }
  std::vector<StageGeometry> out;
  StageGeometry g{d.nx, d.ny, d.nz, 1, 1, {1, 1, 1}};
  out.push_back(g);
  for (std::size_t k = 1; k < cfg.stages; ++k) {
    std::size_t sz = g.nz > 1 ? 2 : 1;
    g.conv_stride = {sz, 2, 2};
    g.nx = (g.nx + 1) / 2;
    g.ny = (g.ny + 1) / 2;
    g.nz = (g.nz + sz - 1) / sz;
    g.stride_xy *= 2;
    g.stride_z *= sz;
    out.push_back(g);
  }
  return out;
}

// Dense (5, nz, nx, ny) input: occupancy, mean offset from the voxel center in
// voxel units, mean intensity.
template <class T>
Tensor<T> voxel_input(const VoxelGrid& grid) {
  const GridDims& d = grid.dims;
  std::size_t n = d.volume();
  std::vector<T> v(kLidarInputChannels * n, T(0));
  for (const auto& [key, cell] : grid.occupied) {
    auto [ix, iy, iz] = grid.index_of(key);
    auto c = grid.center(ix, iy, iz);
    v[key] = T(1);
    v[n + key] = static_cast<T>((cell.mean[0] - c[0]) / grid.size.dx);
    v[2 * n + key] = static_cast<T>((cell.mean[1] - c[1]) / grid.size.dy);
    v[3 * n + key] = static_cast<T>((cell.mean[2] - c[2]) / grid.size.dz);
    v[4 * n + key] = static_cast<T>(cell.mean[3]);
  }
  return Tensor<T>::from_vector({kLidarInputChannels, d.nz, d.nx, d.ny}, std::move(v));
}

template <class T>
struct LidarOutput {
  std::vector<Tensor<T>> stages;     // (C, nz, nx, ny) per stage
  std::vector<BEVFeatureMap<T>> bev;  // one per stage
};

struct AuxTargets {
  std::vector<std::uint8_t> fg;
  std::vector<std::array<double, 3>> offset;  // box center - point, zero for background
  std::vector<int> owner;                     // box index or -1
  std::size_t num_fg() const {
    std::size_t n = 0;
    for (auto f : fg) n += f;
    return n;
  }
};

// Oriented containment; overlapping boxes resolve to the nearest center, then
// the lower box index.
inline AuxTargets aux_targets(const PointCloud& pc, const std::vector<Box3D>& boxes) {
  AuxTargets t;
  t.fg.assign(pc.size(), 0);
  t.offset.assign(pc.size(), {0, 0, 0});
  t.owner.assign(pc.size(), -1);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Point& p = pc[i];
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      if (!box_contains(boxes[b], p.x, p.y, p.z)) continue;
      double dx = boxes[b].x - p.x, dy = boxes[b].y - p.y, dz = boxes[b].z - p.z;
      double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) {
        best = d2;
        t.fg[i] = 1;
        t.owner[i] = static_cast<int>(b);
        t.offset[i] = {dx, dy, dz};
      }
    }
  }
  return t;
}

template <class T>
struct PointSample {
  std::vector<std::int64_t> idx;  // 8 taps per point, -1 = none
  std::vector<T> weight;
  std::vector<std::uint8_t> in_range;
};

// Trilinear taps into a stage volume flattened to (nz*nx*ny) rows. Stage voxel
// (j) is centered at min + (stride * j + 0.5) * size; coordinates clamp to the
// outermost centers.
template <class T>
PointSample<T> trilinear_taps(const PointCloud& pc, const DetectionRange& range,
                              const VoxelSize& vs, const StageGeometry& g) {
  PointSample<T> s;
  s.idx.assign(pc.size() * 8, -1);
  s.weight.assign(pc.size() * 8, T(0));
  s.in_range.assign(pc.size(), 0);
  auto coord = [](double p, double lo, double size, std::size_t stride, std::size_t n) {
    double c = ((p - lo) / size - 0.5) / static_cast<double>(stride);
    return std::clamp(c, 0.0, static_cast<double>(n - 1));
  };
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Point& p = pc[i];
    if (!range.contains(p.x, p.y, p.z)) continue;
    s.in_range[i] = 1;
    double cx = coord(p.x, range.x_min, vs.dx, g.stride_xy, g.nx);
    double cy = coord(p.y, range.y_min, vs.dy, g.stride_xy, g.ny);
    double cz = coord(p.z, range.z_min, vs.dz, g.stride_z, g.nz);
    auto x0 = static_cast<std::size_t>(std::floor(cx));
    auto y0 = static_cast<std::size_t>(std::floor(cy));
    auto z0 = static_cast<std::size_t>(std::floor(cz));
    double fx = cx - x0, fy = cy - y0, fz = cz - z0;
    int tap = 0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy, ++tap) {
          double w = (dz ? fz : 1 - fz) * (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
          std::size_t z = std::min(z0 + dz, g.nz - 1);
          std::size_t x = std::min(x0 + dx, g.nx - 1);
          std::size_t y = std::min(y0 + dy, g.ny - 1);
          if (w == 0) continue;
          s.idx[i * 8 + tap] = static_cast<std::int64_t>((z * g.nx + x) * g.ny + y);
          s.weight[i * 8 + tap] = static_cast<T>(w);
        }
  }
  return s;
}

// (C, nz, nx, ny) stage volume sampled at each point -> (P, C).
template <class T>
Tensor<T> interpolate_to_points(const Tensor<T>& volume, const PointCloud& pc,
                                const DetectionRange& range, const VoxelSize& vs,
                                const StageGeometry& g,
                                std::vector<std::uint8_t>* in_range = nullptr) {
  Shape want{volume.dim(0), g.nz, g.nx, g.ny};
  if (volume.shape() != want) {
    throw ShapeError("interpolate_to_points: volume " + shape_str(volume.shape()) +
                     " vs stage geometry " + shape_str(want));
  }
  auto taps = trilinear_taps<T>(pc, range, vs, g);
  if (in_range) *in_range = taps.in_range;
  if (pc.empty()) return Tensor<T>::zeros({0, volume.dim(0)});
  return weighted_rows(channels_last(volume), taps.idx, taps.weight, 8);
}

struct AuxLossWeights {
  double focal = 1.0;
  double offset = 1.0;
  double alpha = 0.25;
  double gamma = 2.0;
  double beta = 1.0 / 9.0;
};

// Focal loss over all points plus smooth-L1 over foreground offsets, both
// normalised by max(1, #fg).
template <class T>
Tensor<T> aux_loss(const Tensor<T>& fg_logits, const Tensor<T>& offsets,
                   const AuxTargets& tgt, const AuxLossWeights& w = {}) {
  std::size_t n = tgt.fg.size();
  if (fg_logits.numel() != n || offsets.numel() != 3 * n) {
    throw ShapeError("aux_loss: logits " + shape_str(fg_logits.shape()) + " / offsets " +
                     shape_str(offsets.shape()) + " for " + std::to_string(n) + " points");
  }
  T norm = static_cast<T>(std::max<std::size_t>(1, tgt.num_fg()));
  std::vector<T> pos(n), neg(n), target(3 * n, T(0)), weight(3 * n, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = tgt.fg[i] ? static_cast<T>(w.alpha) : T(0);
    neg[i] = tgt.fg[i] ? T(0) : static_cast<T>(1 - w.alpha);
    if (tgt.fg[i]) {
      for (int k = 0; k < 3; ++k) {
        target[3 * i + k] = static_cast<T>(tgt.offset[i][k]);
        weight[3 * i + k] = T(1);
      }
    }
  }
  Tensor<T> lf = scale(focal_terms(fg_logits, pos, neg, static_cast<T>(w.gamma)),
                       static_cast<T>(w.focal) / norm);
  if (tgt.num_fg() == 0) return lf;
  Tensor<T> lo = scale(smooth_l1(offsets, target, weight, static_cast<T>(w.beta)),
                       static_cast<T>(w.offset) / norm);
  return add(lf, lo);
}

template <class T>
struct AuxOutput {
  Tensor<T> fg_logits;  // (P, 1)
  Tensor<T> offsets;    // (P, 3)
};

template <class T>
class LidarStream {
 public:
  LidarStream() = default;
  LidarStream(ParamStore<T>& ps, const LidarConfig& cfg)
      : cfg_(cfg), geom_(lidar_stage_geometry(cfg)) {
    std::size_t in = kLidarInputChannels;
    std::size_t feat = 0;
    for (std::size_t k = 0; k < cfg.stages; ++k) {
      std::string p = "lidar.stage" + std::to_string(k + 1);
      std::size_t c = cfg.channels[k];
      down_.emplace_back(ps, p + ".down", in, c, geom_[k].conv_stride);
      refine_.emplace_back(ps, p + ".refine", c, c, std::array<std::size_t, 3>{1, 1, 1});
      in = c;
      feat += c;
    }
    if (cfg.aux) {
      fg1_ = nn::Linear<T>(ps, "aux.fg.fc1", feat, cfg.aux_hidden);
      fg2_ = nn::Linear<T>(ps, "aux.fg.fc2", cfg.aux_hidden, 1);
      ctr1_ = nn::Linear<T>(ps, "aux.center.fc1", feat, cfg.aux_hidden);
      ctr2_ = nn::Linear<T>(ps, "aux.center.fc2", cfg.aux_hidden, 3);
    }
  }

  const LidarConfig& config() const { return cfg_; }
  const std::vector<StageGeometry>& geometry() const { return geom_; }
  bool has_aux() const { return cfg_.aux; }
  GridDims dims() const { return grid_dims(cfg_.voxel, cfg_.range); }

  std::size_t bev_channels(std::size_t stage) const {
    std::size_t c = cfg_.channels[stage];
    return cfg_.bev_mode == BevMode::kConcat ? c * geom_[stage].nz : c;
  }

  VoxelGrid voxelize(const PointCloud& pc) const { return fgf::voxelize(pc, cfg_.voxel, cfg_.range); }

  LidarOutput<T> forward(const VoxelGrid& grid) const {
    if (!(grid.dims == dims())) throw ShapeError("lidar: voxel grid dims do not match config");
    return forward_volume(voxel_input<T>(grid));
  }

  // From a dense (5, nz, nx, ny) input volume.
  LidarOutput<T> forward_volume(const Tensor<T>& input) const {
    GridDims g = dims();
    Shape want{kLidarInputChannels, g.nz, g.nx, g.ny};
    if (input.shape() != want) {
      throw ShapeError("lidar: input volume " + shape_str(input.shape()) + " vs " + shape_str(want));
    }
    LidarOutput<T> out;
    Tensor<T> x = input;
    for (std::size_t k = 0; k < cfg_.stages; ++k) {
      x = relu(down_[k](x));
      x = relu(refine_[k](x));
      out.stages.push_back(x);
      BEVFeatureMap<T> m;
      m.features = bev_compress(x, cfg_.bev_mode);
      double s = static_cast<double>(geom_[k].stride_xy);
      m.x_min = cfg_.range.x_min;
      m.y_min = cfg_.range.y_min;
      m.cell_x = s * cfg_.voxel.dx;
      m.cell_y = s * cfg_.voxel.dy;
      m.offset = 0.5 / s;
      out.bev.push_back(std::move(m));
    }
    return out;
  }

  // Point features from every stage, concatenated along channels.
  Tensor<T> point_features(const LidarOutput<T>& out, const PointCloud& pc) const {
    std::vector<Tensor<T>> parts;
    for (std::size_t k = 0; k < cfg_.stages; ++k) {
      parts.push_back(
          interpolate_to_points(out.stages[k], pc, cfg_.range, cfg_.voxel, geom_[k]));
    }
    return concat(parts, 1);
  }

  AuxOutput<T> aux_forward(const LidarOutput<T>& out, const PointCloud& pc) const {
    if (!cfg_.aux) throw ContractError("lidar: auxiliary heads were detached");
    Tensor<T> f = point_features(out, pc);
    return {fg2_(relu(fg1_(f))), ctr2_(relu(ctr1_(f)))};
  }

 private:
  LidarConfig cfg_;
  std::vector<StageGeometry> geom_;
  std::vector<nn::Conv3d<T>> down_, refine_;
  nn::Linear<T> fg1_, fg2_, ctr1_, ctr2_;
};

}  // namespace fgf
