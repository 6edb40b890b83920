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

// Calibration, projection, voxelization and BEV compression.
//
// Dense voxel volumes are laid out (C, nz, nx, ny): depth is z, BEV rows
// index x and BEV columns index y.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fgfusion/errors.hpp"
#include "fgfusion/ops.hpp"

namespace fgf {

struct Calibration {
  Eigen::Matrix<double, 3, 4> intrinsics = Eigen::Matrix<double, 3, 4>::Zero();
  Eigen::Matrix4d lidar_to_cam = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d rectification = Eigen::Matrix4d::Identity();
  int height = 0;
  int width = 0;

  void validate() const {
    if (height <= 0 || width <= 0) {
      throw ContractError("calibration: image size must be positive, got " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    Eigen::Matrix3d r = lidar_to_cam.topLeftCorner<3, 3>();
    double err = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(err <= 1e-6)) {
      throw ContractError("calibration: lidar_to_cam rotation not orthonormal (error " +
                          std::to_string(err) + ")");
    }
    if (!intrinsics.allFinite() || !lidar_to_cam.allFinite() || !rectification.allFinite()) {
      throw ContractError("calibration: non-finite entries");
    }
  }

  // Full lidar-to-pixel matrix P * R * T.
  Eigen::Matrix<double, 3, 4> projection() const {
    return intrinsics * rectification * lidar_to_cam;
  }
};

struct Point {
  float x = 0, y = 0, z = 0, intensity = 0;
};
using PointCloud = std::vector<Point>;

inline void validate_cloud(const PointCloud& pc) {
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Point& p = pc[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
        !std::isfinite(p.intensity)) {
      throw ContractError("point cloud: non-finite point at index " + std::to_string(i));
    }
  }
}

struct PixelProjection {
  double u = 0, v = 0, depth = 0;
  bool valid = false;
};

inline PixelProjection project_point(const Eigen::Matrix<double, 3, 4>& m, int height,
                                     int width, double x, double y, double z) {
  Eigen::Vector3d h = m * Eigen::Vector4d(x, y, z, 1.0);
  PixelProjection out;
  out.depth = h.z();
  if (h.z() > 0) {
    out.u = h.x() / h.z();
    out.v = h.y() / h.z();
    out.valid = out.u >= 0 && out.u < width && out.v >= 0 && out.v < height;
  }
  return out;
}

inline std::vector<PixelProjection> project_points(const PointCloud& pc,
                                                   const Calibration& calib) {
  calib.validate();
  auto m = calib.projection();
  std::vector<PixelProjection> out;
  out.reserve(pc.size());
  for (const Point& p : pc) out.push_back(project_point(m, calib.height, calib.width, p.x, p.y, p.z));
  return out;
}

// Inverse of project_point for a pixel at a given projective depth.
inline Eigen::Vector3d back_project(const Calibration& calib, double u, double v,
                                    double depth) {
  Eigen::Matrix<double, 3, 4> m = calib.projection();
  Eigen::Matrix3d a = m.leftCols<3>();
  Eigen::Vector3d rhs = Eigen::Vector3d(u * depth, v * depth, depth) - m.col(3);
  Eigen::FullPivLU<Eigen::Matrix3d> lu(a);
  if (!lu.isInvertible()) throw ContractError("back_project: singular projection");
  return lu.solve(rhs);
}

struct DetectionRange {
  double x_min = 0, x_max = 70.4;
  double y_min = -40, y_max = 40;
  double z_min = -3, z_max = 1;

  void validate() const {
    if (!(x_min < x_max && y_min < y_max && z_min < z_max)) {
      throw ContractError("detection range is not well-ordered");
    }
  }
  bool contains(double x, double y, double z) const {
    return x >= x_min && x < x_max && y >= y_min && y < y_max && z >= z_min && z < z_max;
  }
};

struct VoxelSize {
  double dx = 0.05, dy = 0.05, dz = 0.1;

  void validate() const {
    if (!(dx > 0 && dy > 0 && dz > 0)) throw ContractError("voxel size must be positive");
  }
};

struct GridDims {
  std::size_t nx = 0, ny = 0, nz = 0;
  std::size_t volume() const { return nx * ny * nz; }
  bool operator==(const GridDims&) const = default;
};

// ceil(extent / size), with a small tolerance so that exact multiples are not
// rounded up by floating-point noise.
inline GridDims grid_dims(const VoxelSize& size, const DetectionRange& range) {
  size.validate();
  range.validate();
  auto n = [](double extent, double s) {
    return static_cast<std::size_t>(std::ceil(extent / s - 1e-6));
  };
  return {n(range.x_max - range.x_min, size.dx), n(range.y_max - range.y_min, size.dy),
          n(range.z_max - range.z_min, size.dz)};
}

struct VoxelCell {
  std::array<double, 4> mean{};  // x, y, z, intensity
  std::uint32_t count = 0;
};

struct VoxelGrid {
  VoxelSize size;
  DetectionRange range;
  GridDims dims;
  // Keyed by (iz * nx + ix) * ny + iy, i.e. the dense (nz, nx, ny) offset.
  std::map<std::size_t, VoxelCell> occupied;
  std::size_t in_range = 0;
  std::size_t out_of_range = 0;

  std::size_t key(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return (iz * dims.nx + ix) * dims.ny + iy;
  }
  std::array<std::size_t, 3> index_of(std::size_t key) const {
    std::size_t iy = key % dims.ny;
    std::size_t ix = (key / dims.ny) % dims.nx;
    std::size_t iz = key / (dims.ny * dims.nx);
    return {ix, iy, iz};
  }
  std::array<double, 3> center(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return {range.x_min + (ix + 0.5) * size.dx, range.y_min + (iy + 0.5) * size.dy,
            range.z_min + (iz + 0.5) * size.dz};
  }
};

// Half-open intervals [min, max) on every axis. The index is clamped to the
// last cell to absorb rounding when extent is not a multiple of size.
inline VoxelGrid voxelize(const PointCloud& pc, const VoxelSize& size,
                          const DetectionRange& range) {
  VoxelGrid g;
  g.size = size;
  g.range = range;
  g.dims = grid_dims(size, range);
  std::map<std::size_t, std::pair<std::array<double, 4>, std::uint32_t>> acc;
  for (const Point& p : pc) {
    if (!range.contains(p.x, p.y, p.z)) {
      ++g.out_of_range;
      continue;
    }
    auto idx = [](double v, double lo, double s, std::size_t n) {
      auto i = static_cast<std::size_t>(std::floor((v - lo) / s));
      return std::min(i, n - 1);
    };
    std::size_t ix = idx(p.x, range.x_min, size.dx, g.dims.nx);
    std::size_t iy = idx(p.y, range.y_min, size.dy, g.dims.ny);
    std::size_t iz = idx(p.z, range.z_min, size.dz, g.dims.nz);
    auto& [sum, count] = acc[g.key(ix, iy, iz)];
    sum[0] += p.x;
    sum[1] += p.y;
    sum[2] += p.z;
    sum[3] += p.intensity;
    ++count;
    ++g.in_range;
  }
  for (auto& [k, sc] : acc) {
    VoxelCell c;
    c.count = sc.second;
    for (int i = 0; i < 4; ++i) c.mean[i] = sc.first[i] / sc.second;
    g.occupied.emplace(k, c);
  }
  return g;
}

enum class BevMode { kConcat, kSum };

// (C, D, H, W) -> (C*D, H, W) under concat, (C, H, W) under sum.
template <class T>
Tensor<T> bev_compress(const Tensor<T>& volume, BevMode mode) {
  if (volume.rank() != 4) {
    throw ShapeError("bev_compress: expected (C,D,H,W), got " + shape_str(volume.shape()));
  }
  std::size_t c = volume.dim(0), d = volume.dim(1), h = volume.dim(2), w = volume.dim(3);
  if (d == 0) throw ContractError("bev_compress: depth D = 0");
  if (mode == BevMode::kConcat) return reshape(volume, {c * d, h, w});
  return sum_axis(volume, 1);
}

template <class T>
struct BEVFeatureMap {
  Tensor<T> features;  // (C, H, W); rows index x, columns index y
  double x_min = 0, y_min = 0;
  double cell_x = 0, cell_y = 0;  // meters per cell
  double offset = 0.5;            // cell r is centered at x_min + (r + offset) * cell_x

  std::size_t height() const { return features.dim(1); }
  std::size_t width() const { return features.dim(2); }
  double center_x(double r) const { return x_min + (r + offset) * cell_x; }
  double center_y(double c) const { return y_min + (c + offset) * cell_y; }
  // Continuous (row, col) of a metric position.
  double row_of(double x) const { return (x - x_min) / cell_x - offset; }
  double col_of(double y) const { return (y - y_min) / cell_y - offset; }
};

}  // namespace fgf
