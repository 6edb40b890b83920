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

// Synthetic scenes and KITTI-format files.
//
// Directory layout, one six-digit stem per frame:
//   velodyne/<id>.bin   little-endian float32 (x, y, z, intensity) records
//   image_2/<id>.png    8-bit RGB
//   calib/<id>.txt      P0..P3, R0_rect, Tr_velo_to_cam, Tr_imu_to_velo
//   label_2/<id>.txt    KITTI object lines, camera frame

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fgfusion/box.hpp"
#include "fgfusion/errors.hpp"
#include "fgfusion/geometry.hpp"
#include "fgfusion/params.hpp"
#include "fgfusion/postprocess.hpp"
#include "fgfusion/rng.hpp"
#include "fgfusion/scene.hpp"

namespace fgf {

// ---------------------------------------------------------------- difficulty

struct DifficultyThresholds {
  std::array<double, 3> min_height{40, 25, 25};  // pixels, easy/moderate/hard
  std::array<int, 3> max_occlusion{0, 1, 2};
  std::array<double, 3> max_truncation{0.15, 0.3, 0.5};
};

inline int assign_difficulty(double pixel_height, int occlusion, double truncation,
                             const DifficultyThresholds& t) {
  for (int d = kEasy; d <= kHard; ++d) {
    if (pixel_height >= t.min_height[d] && occlusion <= t.max_occlusion[d] &&
        truncation <= t.max_truncation[d]) {
      return d;
    }
  }
  return kIgnored;
}

// Image-plane bounding box of the projected corners, clipped to the image,
// and the fraction of the unclipped box area lying outside it. Returns false
// when a corner is behind the camera or nothing is visible.
inline bool project_box_2d(const Box3D& b, const Calibration& calib, std::array<double, 4>& bbox,
                           double& truncation) {
  auto m = calib.projection();
  double l = 1e300, t = 1e300, r = -1e300, btm = -1e300;
  for (const auto& c : box_corners(b)) {
    auto p = project_point(m, calib.height, calib.width, c[0], c[1], c[2]);
    if (p.depth <= 0) return false;
    l = std::min(l, p.u);
    r = std::max(r, p.u);
    t = std::min(t, p.v);
    btm = std::max(btm, p.v);
  }
  double cl = std::clamp(l, 0.0, double(calib.width)), cr = std::clamp(r, 0.0, double(calib.width));
  double ct = std::clamp(t, 0.0, double(calib.height));
  double cb = std::clamp(btm, 0.0, double(calib.height));
  if (cr <= cl || cb <= ct) return false;
  double full = (r - l) * (btm - t);
  truncation = full > 0 ? std::clamp(1 - (cr - cl) * (cb - ct) / full, 0.0, 1.0) : 0.0;
  bbox = {cl, ct, cr, cb};
  return true;
}

// ----------------------------------------------------------------- synthetic

struct ClassShape {
  std::array<double, 3> mean;   // w, l, h
  std::array<double, 3> sigma;
};

struct SyntheticConfig {
  std::size_t num_scenes = 8;
  std::size_t boxes_min = 2, boxes_max = 4;
  double surface_density = 20;  // points per square meter of box surface
  double ground_density = 0.3;  // points per square meter of ground
  double noise_sigma = 0.02;    // meters, truncated at 3 sigma
  double car_fraction = 0.5;    // the rest are pedestrians
  bool ambiguous = false;       // both classes share one shape distribution
  std::uint64_t seed = 0;
  DetectionRange range{0, 32, -16, 16, -3, 1};
  std::size_t image_height = 128, image_width = 256;
  double focal = 128;
  double ground_z = -1.7;
  double min_distance = 5;        // meters ahead of the sensor
  double edge_margin = 1.5;       // meters from the range border
  double fov_fraction = 0.85;     // usable part of the horizontal field of view
  ClassShape car{{1.6, 3.9, 1.56}, {0.08, 0.2, 0.08}};
  ClassShape pedestrian{{0.6, 0.8, 1.73}, {0.05, 0.06, 0.08}};
  ClassShape neutral{{1.0, 1.4, 1.6}, {0.05, 0.08, 0.06}};  // ambiguous mode
  DifficultyThresholds difficulty{};

  void validate() const {
    if (num_scenes == 0) throw ConfigError("synthetic: num_scenes must be positive");
    if (boxes_min > boxes_max) throw ConfigError("synthetic: boxes_min > boxes_max");
    if (!(surface_density > 0) || !(ground_density >= 0) || !(noise_sigma >= 0)) {
      throw ConfigError("synthetic: densities and noise must be non-negative");
    }
    if (!(car_fraction >= 0 && car_fraction <= 1)) {
      throw ConfigError("synthetic: car_fraction outside [0, 1]");
    }
    if (image_height == 0 || image_width == 0 || !(focal > 0)) {
      throw ConfigError("synthetic: image size and focal length must be positive");
    }
    range.validate();
  }
};

// KITTI-like extrinsics: a forward camera slightly below and behind the
// lidar, no rectification.
inline Calibration synthetic_calibration(const SyntheticConfig& cfg) {
  Calibration c;
  double w = static_cast<double>(cfg.image_width), h = static_cast<double>(cfg.image_height);
  c.intrinsics << cfg.focal, 0, w / 2, 0, 0, cfg.focal, h / 2, 0, 0, 0, 1, 0;
  c.lidar_to_cam << 0, -1, 0, 0, 0, 0, -1, -0.08, 1, 0, 0, -0.27, 0, 0, 0, 1;
  c.height = static_cast<int>(cfg.image_height);
  c.width = static_cast<int>(cfg.image_width);
  return c;
}

inline constexpr std::array<std::array<float, 3>, 3> kClassColors{{
    {0.85f, 0.15f, 0.1f},   // car
    {0.1f, 0.3f, 0.9f},     // pedestrian
    {0.15f, 0.8f, 0.2f},    // cyclist
}};

struct GeneratedScene {
  Scene scene;
  std::size_t unplaced = 0;  // boxes dropped after 100 placement attempts
  std::vector<std::size_t> surface_begin;  // first surface point per object
  std::vector<std::size_t> surface_count;
};

namespace detail {

inline double truncated_normal(Rng& rng, double sigma) {
  if (sigma <= 0) return 0;
  double v = rng.normal();
  while (std::abs(v) > 3) v = rng.normal();
  return sigma * v;
}

inline void render_silhouette(std::vector<float>& img, std::size_t h, std::size_t w,
                              const Box3D& b, const Calibration& calib,
                              const std::array<float, 3>& color, Rng& rng) {
  auto m = calib.projection();
  std::vector<Vec2> pts;
  for (const auto& c : box_corners(b)) {
    auto p = project_point(m, calib.height, calib.width, c[0], c[1], c[2]);
    if (p.depth <= 0) return;
    pts.push_back({p.u, p.v});
  }
  // Convex hull (monotone chain), counter-clockwise in (u, v).
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& c) {
    return a.x < c.x || (a.x == c.x && a.y < c.y);
  });
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && detail::cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && detail::cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k > 0 ? k - 1 : 0);
  if (hull.size() < 3) return;
  double u0 = 1e300, u1 = -1e300, v0 = 1e300, v1 = -1e300;
  for (const auto& p : hull) {
    u0 = std::min(u0, p.x);
    u1 = std::max(u1, p.x);
    v0 = std::min(v0, p.y);
    v1 = std::max(v1, p.y);
  }
  long r0 = std::max(0L, static_cast<long>(std::floor(v0)));
  long r1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(v1)));
  long c0 = std::max(0L, static_cast<long>(std::floor(u0)));
  long c1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(u1)));
  for (long r = r0; r <= r1; ++r)
    for (long c = c0; c <= c1; ++c) {
      Vec2 q{c + 0.5, r + 0.5};
      bool inside = true;
      for (std::size_t i = 0; i < hull.size() && inside; ++i) {
        inside = detail::cross(hull[i], hull[(i + 1) % hull.size()], q) >= 0;
      }
      if (!inside) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        float v = color[ch] + static_cast<float>(rng.uniform(-0.05, 0.05));
        img[(ch * h + r) * w + c] = std::clamp(v, 0.0f, 1.0f);
      }
    }
}

}  // namespace detail

inline GeneratedScene generate_scene(const SyntheticConfig& cfg, std::size_t index) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, 0x53434E45ULL + index));
  GeneratedScene out;
  Scene& s = out.scene;
  char id[16];
  std::snprintf(id, sizeof(id), "%06zu", index);
  s.id = id;
  s.calib = synthetic_calibration(cfg);
  s.image_height = cfg.image_height;
  s.image_width = cfg.image_width;

  std::size_t want = cfg.boxes_min + rng.below(cfg.boxes_max - cfg.boxes_min + 1);
  const DetectionRange& R = cfg.range;
  double tan_half = cfg.fov_fraction * 0.5 * cfg.image_width / cfg.focal;
  for (std::size_t n = 0; n < want; ++n) {
    int label = rng.bernoulli(cfg.car_fraction) ? kCar : kPedestrian;
    const ClassShape& shape = cfg.ambiguous ? cfg.neutral : (label == kCar ? cfg.car : cfg.pedestrian);
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      Box3D b;
      b.w = shape.mean[0] + detail::truncated_normal(rng, shape.sigma[0]);
      b.l = shape.mean[1] + detail::truncated_normal(rng, shape.sigma[1]);
      b.h = shape.mean[2] + detail::truncated_normal(rng, shape.sigma[2]);
      b.heading = normalize_angle(rng.uniform(-std::numbers::pi, std::numbers::pi));
      double rad = 0.5 * std::hypot(b.w, b.l);
      double xlo = std::max(R.x_min + cfg.edge_margin, cfg.min_distance) + rad;
      double xhi = R.x_max - cfg.edge_margin - rad;
      if (xhi <= xlo) continue;
      b.x = rng.uniform(xlo, xhi);
      double ylim = std::min({b.x * tan_half - rad, R.y_max - cfg.edge_margin - rad,
                              -(R.y_min + cfg.edge_margin) - rad});
      if (ylim <= 0) continue;
      b.y = rng.uniform(-ylim, ylim);
      b.z = cfg.ground_z + 0.5 * b.h;
      Box3D grown = b;
      grown.w += 0.5;
      grown.l += 0.5;
      bool clash = false;
      for (const Object& o : s.objects) {
        if (bev_intersection_area(grown, o.box) > 0) clash = true;
      }
      if (clash || !R.contains(b.x, b.y, b.z)) continue;
      Object o;
      o.box = b;
      o.label = label;
      double trunc = 0;
      if (!project_box_2d(b, s.calib, o.bbox2d, trunc)) continue;
      o.truncation = trunc;
      o.occlusion = 0;
      o.difficulty = assign_difficulty(o.bbox2d[3] - o.bbox2d[1], 0, trunc, cfg.difficulty);
      s.objects.push_back(o);
      placed = true;
    }
    if (!placed) ++out.unplaced;
  }

  // Box surfaces: four sides and the top, area-weighted, noise in the box frame.
  for (const Object& o : s.objects) {
    const Box3D& b = o.box;
    out.surface_begin.push_back(s.points.size());
    double side_l = b.l * b.h, side_w = b.w * b.h, top = b.l * b.w;
    double area = 2 * side_l + 2 * side_w + top;
    auto count = static_cast<std::size_t>(std::lround(cfg.surface_density * area));
    double c = std::cos(b.heading), sn = std::sin(b.heading);
    for (std::size_t i = 0; i < count; ++i) {
      double pick = rng.uniform() * area;
      double lx, ly, lz;
      double a = rng.uniform(-0.5, 0.5), e = rng.uniform(-0.5, 0.5);
      if (pick < 2 * side_l) {
        lx = a * b.l;
        ly = (pick < side_l ? 0.5 : -0.5) * b.w;
        lz = e * b.h;
      } else if (pick < 2 * side_l + 2 * side_w) {
        lx = (pick < 2 * side_l + side_w ? 0.5 : -0.5) * b.l;
        ly = a * b.w;
        lz = e * b.h;
      } else {
        lx = a * b.l;
        ly = e * b.w;
        lz = 0.5 * b.h;
      }
      lx += detail::truncated_normal(rng, cfg.noise_sigma);
      ly += detail::truncated_normal(rng, cfg.noise_sigma);
      lz += detail::truncated_normal(rng, cfg.noise_sigma);
      Point p;
      p.x = static_cast<float>(b.x + c * lx - sn * ly);
      p.y = static_cast<float>(b.y + sn * lx + c * ly);
      p.z = static_cast<float>(b.z + lz);
      p.intensity = static_cast<float>(rng.uniform(0.2, 0.6));
      s.points.push_back(p);
    }
    out.surface_count.push_back(s.points.size() - out.surface_begin.back());
  }
  auto ground = static_cast<std::size_t>(
      std::lround(cfg.ground_density * (R.x_max - R.x_min) * (R.y_max - R.y_min)));
  for (std::size_t i = 0; i < ground; ++i) {
    Point p;
    p.x = static_cast<float>(rng.uniform(R.x_min, R.x_max));
    p.y = static_cast<float>(rng.uniform(R.y_min, R.y_max));
    p.z = static_cast<float>(cfg.ground_z + detail::truncated_normal(rng, cfg.noise_sigma));
    p.intensity = static_cast<float>(rng.uniform(0.0, 0.2));
    s.points.push_back(p);
  }

  // Textured grey background, then silhouettes far to near.
  std::size_t h = cfg.image_height, w = cfg.image_width;
  s.image.resize(3 * h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col) {
      float base = static_cast<float>(rng.uniform(0.35, 0.6));
      for (std::size_t ch = 0; ch < 3; ++ch) {
        s.image[(ch * h + r) * w + col] = base + static_cast<float>(rng.uniform(-0.04, 0.04));
      }
    }
  std::vector<std::size_t> order(s.objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s.objects[a].box.x > s.objects[b].box.x;
  });
  for (std::size_t i : order) {
    detail::render_silhouette(s.image, h, w, s.objects[i].box, s.calib,
                              kClassColors[s.objects[i].label], rng);
  }
  return out;
}

inline std::vector<Scene> generate_dataset(const SyntheticConfig& cfg) {
  std::vector<Scene> out;
  for (std::size_t i = 0; i < cfg.num_scenes; ++i) out.push_back(generate_scene(cfg, i).scene);
  return out;
}

// ----------------------------------------------------------------------- PNG

// (3, H, W) floats in [0, 1] to 8-bit RGB.
inline void write_png(const std::string& path, const std::vector<float>& chw, std::size_t h,
                      std::size_t w) {
  if (chw.size() != 3 * h * w) throw ShapeError("write_png: image size mismatch");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("PNG encoding failed for '" + path + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(3 * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        float v = std::clamp(chw[(ch * h + r) * w + c], 0.0f, 1.0f);
        row[3 * c + ch] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

struct Image {
  std::size_t height = 0, width = 0;
  std::vector<float> chw;
};

inline Image read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open '" + path + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    std::fclose(fp);
    throw ParseError(path + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw ParseError(path + ": corrupt PNG");
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  Image img;
  img.height = png_get_image_height(png, info);
  img.width = png_get_image_width(png, info);
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  img.chw.resize(3 * img.height * img.width);
  for (std::size_t r = 0; r < img.height; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (std::size_t c = 0; c < img.width; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        img.chw[(ch * img.height + r) * img.width + c] = row[3 * c + ch] / 255.0f;
      }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// --------------------------------------------------------------------- KITTI

inline void write_velodyne(const std::string& path, const PointCloud& pc) {
  std::string bytes;
  bytes.reserve(16 * pc.size());
  for (const Point& p : pc) {
    for (float f : {p.x, p.y, p.z, p.intensity}) detail::put_f32(bytes, f);
  }
  write_file(path, bytes);
}

inline PointCloud read_velodyne(const std::string& path) {
  std::string bytes = read_file(path);
  if (bytes.size() % 16 != 0) {
    throw ParseError(path + ": size " + std::to_string(bytes.size()) +
                     " is not a multiple of 16 bytes");
  }
  detail::ByteReader rd(bytes, path);
  PointCloud pc(bytes.size() / 16);
  for (Point& p : pc) {
    p.x = rd.f32();
    p.y = rd.f32();
    p.z = rd.f32();
    p.intensity = rd.f32();
  }
  return pc;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12e", v);
  return buf;
}

inline std::string join_fmt(const double* v, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + fmt(v[i]);
  return s;
}

inline std::vector<double> parse_numbers(std::istringstream& ss, std::size_t n,
                                         const std::string& where) {
  std::vector<double> v(n);
  for (auto& x : v) {
    std::string tok;
    if (!(ss >> tok)) throw ParseError(where + ": expected " + std::to_string(n) + " numbers");
    try {
      std::size_t used = 0;
      x = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ParseError(where + ": bad number '" + tok + "'");
    }
  }
  return v;
}

// Lidar to rectified camera coordinates.
inline Eigen::Matrix4d lidar_to_rect(const Calibration& c) { return c.rectification * c.lidar_to_cam; }

}  // namespace detail

inline void write_calib(const std::string& path, const Calibration& c) {
  Eigen::Matrix<double, 3, 4, Eigen::RowMajor> p = c.intrinsics;
  Eigen::Matrix<double, 3, 3, Eigen::RowMajor> r0 = c.rectification.topLeftCorner<3, 3>();
  Eigen::Matrix<double, 3, 4, Eigen::RowMajor> tr = c.lidar_to_cam.topRows<3>();
  Eigen::Matrix<double, 3, 4, Eigen::RowMajor> eye = Eigen::Matrix<double, 3, 4>::Identity();
  std::string s;
  for (const char* k : {"P0", "P1", "P2", "P3"}) s += std::string(k) + ": " + detail::join_fmt(p.data(), 12) + "\n";
  s += "R0_rect: " + detail::join_fmt(r0.data(), 9) + "\n";
  s += "Tr_velo_to_cam: " + detail::join_fmt(tr.data(), 12) + "\n";
  s += "Tr_imu_to_velo: " + detail::join_fmt(eye.data(), 12) + "\n";
  write_file(path, s);
}

inline Calibration read_calib(const std::string& path, int height, int width) {
  std::istringstream in(read_file(path));
  std::map<std::string, std::vector<double>> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": missing ':'");
    }
    std::string key = line.substr(0, colon);
    std::istringstream ss(line.substr(colon + 1));
    std::vector<double> v;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
    }
    kv[key] = v;
  }
  auto need = [&](const std::string& k, std::size_t n) -> const std::vector<double>& {
    auto it = kv.find(k);
    if (it == kv.end()) throw SchemaError(path + ": missing calibration key '" + k + "'");
    if (it->second.size() != n) {
      throw ParseError(path + ": key '" + k + "' has " + std::to_string(it->second.size()) +
                       " values, expected " + std::to_string(n));
    }
    return it->second;
  };
  Calibration c;
  const auto& p2 = need("P2", 12);
  const auto& r0 = need("R0_rect", 9);
  const auto& tr = need("Tr_velo_to_cam", 12);
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 4; ++col) {
      c.intrinsics(r, col) = p2[r * 4 + col];
      c.lidar_to_cam(r, col) = tr[r * 4 + col];
    }
    for (int col = 0; col < 3; ++col) c.rectification(r, col) = r0[r * 3 + col];
  }
  c.height = height;
  c.width = width;
  return c;
}

// Lidar-frame box to the KITTI camera-frame fields (h, w, l, x, y, z, ry);
// the location is the bottom-face center.
inline std::array<double, 7> box_to_camera(const Box3D& b, const Calibration& calib) {
  Eigen::Matrix4d m = detail::lidar_to_rect(calib);
  Eigen::Vector4d bottom = m * Eigen::Vector4d(b.x, b.y, b.bottom(), 1);
  Eigen::Vector3d dir = m.topLeftCorner<3, 3>() *
                        Eigen::Vector3d(std::cos(b.heading), std::sin(b.heading), 0);
  double ry = normalize_angle(std::atan2(-dir.z(), dir.x()));
  return {b.h, b.w, b.l, bottom.x(), bottom.y(), bottom.z(), ry};
}

inline Box3D box_from_camera(const std::array<double, 7>& f, const Calibration& calib) {
  Eigen::Matrix4d inv = detail::lidar_to_rect(calib).inverse();
  Eigen::Vector4d bottom = inv * Eigen::Vector4d(f[3], f[4], f[5], 1);
  // The ground-plane direction d that box_to_camera maps to ry: the camera
  // (x, -z) of M d must be parallel to (cos ry, sin ry). Exact even when the
  // rectification is not orthonormal.
  Eigen::Matrix4d m = detail::lidar_to_rect(calib);
  Eigen::Vector2d ax(m(0, 0), m(0, 1)), az(m(2, 0), m(2, 1));
  double c = std::cos(f[6]), s = std::sin(f[6]);
  Eigen::Vector2d normal = az * c + ax * s;
  Eigen::Vector2d dir(-normal.y(), normal.x());
  if (ax.dot(dir) * c - az.dot(dir) * s < 0) dir = -dir;
  Box3D b;
  b.h = f[0];
  b.w = f[1];
  b.l = f[2];
  b.x = bottom.x();
  b.y = bottom.y();
  b.z = bottom.z() + 0.5 * b.h;
  b.heading = normalize_angle(std::atan2(dir.y(), dir.x()));
  return b;
}

namespace detail {

inline std::string kitti_line(const std::string& type, double trunc, int occ, const Box3D& b,
                              const std::array<double, 4>& bbox, const Calibration& calib) {
  auto f = box_to_camera(b, calib);
  double alpha = normalize_angle(f[6] - std::atan2(f[3], f[5]));
  std::string s = type + " " + fmt(trunc) + " " + std::to_string(occ) + " " + fmt(alpha);
  for (double v : bbox) s += " " + fmt(v);
  for (double v : f) s += " " + fmt(v);
  return s;
}

}  // namespace detail

inline void write_labels(const std::string& path, const Scene& s) {
  std::string out;
  for (const Object& o : s.objects) {
    std::string type = o.dont_care ? "DontCare" : class_name(o.label);
    out += detail::kitti_line(type, o.truncation, o.occlusion, o.box, o.bbox2d, s.calib) + "\n";
  }
  write_file(path, out);
}

// Types outside Car/Pedestrian/Cyclist load as don't-care regions.
inline std::vector<Object> read_labels(const std::string& path, const Calibration& calib,
                                       const DifficultyThresholds& thr = {}) {
  std::istringstream in(read_file(path));
  std::vector<Object> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string where = path + ":" + std::to_string(lineno);
    std::istringstream ss(line);
    std::string type;
    ss >> type;
    auto v = detail::parse_numbers(ss, 14, where);
    std::string extra;
    if (ss >> extra) throw ParseError(where + ": unexpected field '" + extra + "'");
    if (v[1] != std::floor(v[1])) throw ParseError(where + ": occlusion must be an integer");
    Object o;
    o.label = class_from_name(type);
    o.dont_care = o.label < 0;
    o.truncation = v[0];
    o.occlusion = static_cast<int>(v[1]);
    o.bbox2d = {v[3], v[4], v[5], v[6]};
    o.box = box_from_camera({v[7], v[8], v[9], v[10], v[11], v[12], v[13]}, calib);
    o.difficulty = o.dont_care ? kIgnored
                               : assign_difficulty(v[6] - v[4], o.occlusion, o.truncation, thr);
    out.push_back(o);
  }
  return out;
}

inline Scene load_kitti_frame(const std::string& velodyne_path, const std::string& image_path,
                              const std::string& calib_path, const std::string& label_path,
                              const DifficultyThresholds& thr = {}) {
  Scene s;
  s.id = std::filesystem::path(velodyne_path).stem().string();
  s.points = read_velodyne(velodyne_path);
  Image img = read_png(image_path);
  s.image_height = img.height;
  s.image_width = img.width;
  s.image = std::move(img.chw);
  s.calib = read_calib(calib_path, static_cast<int>(img.height), static_cast<int>(img.width));
  s.calib.validate();
  if (!label_path.empty()) s.objects = read_labels(label_path, s.calib, thr);
  return s;
}

inline void save_kitti_frame(const std::string& root, const Scene& s) {
  namespace fs = std::filesystem;
  for (const char* d : {"velodyne", "image_2", "calib", "label_2"}) fs::create_directories(fs::path(root) / d);
  write_velodyne((fs::path(root) / "velodyne" / (s.id + ".bin")).string(), s.points);
  write_png((fs::path(root) / "image_2" / (s.id + ".png")).string(), s.image, s.image_height,
            s.image_width);
  write_calib((fs::path(root) / "calib" / (s.id + ".txt")).string(), s.calib);
  write_labels((fs::path(root) / "label_2" / (s.id + ".txt")).string(), s);
}

// Every velodyne/<id>.bin under `root`, in id order.
inline std::vector<Scene> load_kitti_dir(const std::string& root,
                                         const DifficultyThresholds& thr = {}) {
  namespace fs = std::filesystem;
  fs::path vel = fs::path(root) / "velodyne";
  if (!fs::is_directory(vel)) throw IoError("'" + vel.string() + "' is not a directory");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(vel)) {
    if (e.path().extension() == ".bin") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  std::vector<Scene> out;
  for (const auto& id : ids) {
    fs::path label = fs::path(root) / "label_2" / (id + ".txt");
    out.push_back(load_kitti_frame((vel / (id + ".bin")).string(),
                                   (fs::path(root) / "image_2" / (id + ".png")).string(),
                                   (fs::path(root) / "calib" / (id + ".txt")).string(),
                                   fs::exists(label) ? label.string() : std::string(), thr));
  }
  return out;
}

// One line per detection: the label fields followed by the score.
inline void emit_kitti_results(const DetectionSet& dets, const Calibration& calib,
                               const std::string& path) {
  std::string out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Box3D& b = dets.boxes[i];
    if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.z) ||
        !std::isfinite(b.w) || !std::isfinite(b.l) || !std::isfinite(b.h) ||
        !std::isfinite(b.heading) || !std::isfinite(dets.scores[i])) {
      throw ContractError("emit_kitti_results: non-finite detection " + std::to_string(i));
    }
    std::array<double, 4> bbox{0, 0, 0, 0};
    double trunc = 0;
    project_box_2d(b, calib, bbox, trunc);
    out += detail::kitti_line(class_name(dets.classes[i]), 0, 0, b, bbox, calib) + " " +
           detail::fmt(dets.scores[i]) + "\n";
  }
  write_file(path, out);
}

inline DetectionSet load_kitti_results(const std::string& path, const Calibration& calib) {
  std::istringstream in(read_file(path));
  DetectionSet d;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string where = path + ":" + std::to_string(lineno);
    std::istringstream ss(line);
    std::string type;
    ss >> type;
    auto v = detail::parse_numbers(ss, 15, where);
    int cls = class_from_name(type);
    if (cls < 0) throw ParseError(where + ": unknown class '" + type + "'");
    d.boxes.push_back(box_from_camera({v[7], v[8], v[9], v[10], v[11], v[12], v[13]}, calib));
    d.scores.push_back(v[14]);
    d.classes.push_back(cls);
    d.levels.push_back(0);
  }
  return d;
}

}  // namespace fgf
