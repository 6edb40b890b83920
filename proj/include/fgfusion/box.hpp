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

// Oriented 3D boxes in the lidar frame and their overlap measures.
//
// Convention: `l` runs along the heading direction, `w` across it, `h` along
// +z. Heading is the yaw from +x towards +y, normalised to (-pi, pi].

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace fgf {

inline double normalize_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  a = std::fmod(a, kTwoPi);
  if (a <= -std::numbers::pi) a += kTwoPi;
  if (a > std::numbers::pi) a -= kTwoPi;
  return a;
}

struct Box3D {
  double x = 0, y = 0, z = 0;  // center, meters
  double w = 1, l = 1, h = 1;  // size, meters
  double heading = 0;          // radians

  double volume() const { return w * l * h; }
  double bottom() const { return z - 0.5 * h; }
  double top() const { return z + 0.5 * h; }
};

// Head parameterisation (x, y, z, log w, log l, log h, sin, cos) -> box.
inline Box3D decode_box(const double* raw) {
  return {raw[0], raw[1], raw[2], std::exp(raw[3]), std::exp(raw[4]), std::exp(raw[5]),
          normalize_angle(std::atan2(raw[6], raw[7]))};
}

inline std::array<double, 8> encode_box(const Box3D& b) {
  return {b.x, b.y, b.z, std::log(b.w), std::log(b.l), std::log(b.h), std::sin(b.heading),
          std::cos(b.heading)};
}

struct Vec2 {
  double x, y;
};

// Counter-clockwise ground-plane footprint.
inline std::array<Vec2, 4> bev_corners(const Box3D& b) {
  double c = std::cos(b.heading), s = std::sin(b.heading);
  double hl = 0.5 * b.l, hw = 0.5 * b.w;
  std::array<Vec2, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Vec2, 4> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {b.x + c * local[i].x - s * local[i].y, b.y + s * local[i].x + c * local[i].y};
  }
  return out;
}

// All eight corners: bottom face first (CCW), then the top face.
inline std::array<std::array<double, 3>, 8> box_corners(const Box3D& b) {
  auto f = bev_corners(b);
  std::array<std::array<double, 3>, 8> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {f[i].x, f[i].y, b.bottom()};
    out[i + 4] = {f[i].x, f[i].y, b.top()};
  }
  return out;
}

// Point containment with closed faces, optionally dilated by `margin` on
// every side.
inline bool box_contains(const Box3D& b, double px, double py, double pz,
                         double margin = 0.0) {
  double dx = px - b.x, dy = py - b.y;
  double c = std::cos(b.heading), s = std::sin(b.heading);
  double lx = c * dx + s * dy;
  double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.l + margin && std::abs(ly) <= 0.5 * b.w + margin &&
         std::abs(pz - b.z) <= 0.5 * b.h + margin;
}

namespace detail {

inline double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline double polygon_area(const std::vector<Vec2>& p) {
  double a = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % p.size()];
    a += u.x * v.y - v.x * u.y;
  }
  return 0.5 * std::abs(a);
}

// Sutherland-Hodgman: clip `subject` by the convex CCW polygon `clip`.
inline std::vector<Vec2> clip_convex(std::vector<Vec2> subject,
                                     const std::array<Vec2, 4>& clip) {
  for (int e = 0; e < 4 && !subject.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % 4];
    std::vector<Vec2> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2& p = subject[i];
      const Vec2& q = subject[(i + 1) % subject.size()];
      double dp = cross(a, b, p), dq = cross(a, b, q);
      bool pin = dp >= 0, qin = dq >= 0;
      if (pin) out.push_back(p);
      if (pin != qin) {
        double t = dp / (dp - dq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline int& degenerate_iou_counter() {
  thread_local int n = 0;
  return n;
}

}  // namespace detail

// Number of zero-area boxes seen by the IoU routines on this thread.
inline int degenerate_iou_warnings() { return detail::degenerate_iou_counter(); }

inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  auto ca = bev_corners(a);
  auto cb = bev_corners(b);
  // Cheap reject on circumscribed circles.
  double ra = 0.5 * std::hypot(a.w, a.l), rb = 0.5 * std::hypot(b.w, b.l);
  if (std::hypot(a.x - b.x, a.y - b.y) > ra + rb) return 0.0;
  std::vector<Vec2> poly(ca.begin(), ca.end());
  poly = detail::clip_convex(std::move(poly), cb);
  return poly.size() < 3 ? 0.0 : detail::polygon_area(poly);
}

// Rotated-rectangle IoU in the ground plane.
inline double iou_bev(const Box3D& a, const Box3D& b) {
  double area_a = a.w * a.l, area_b = b.w * b.l;
  if (!(area_a > 0) || !(area_b > 0)) {
    ++detail::degenerate_iou_counter();
    return 0.0;
  }
  double inter = bev_intersection_area(a, b);
  double uni = area_a + area_b - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

// Ground-plane intersection times vertical overlap.
inline double iou_3d(const Box3D& a, const Box3D& b) {
  if (!(a.volume() > 0) || !(b.volume() > 0)) {
    ++detail::degenerate_iou_counter();
    return 0.0;
  }
  double zo = std::min(a.top(), b.top()) - std::max(a.bottom(), b.bottom());
  if (zo <= 0) return 0.0;
  double inter = bev_intersection_area(a, b) * zo;
  double uni = a.volume() + b.volume() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

enum class IouMode { kBev, k3d };

inline double box_iou(const Box3D& a, const Box3D& b, IouMode mode) {
  return mode == IouMode::kBev ? iou_bev(a, b) : iou_3d(a, b);
}

}  // namespace fgf
