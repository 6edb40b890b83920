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

// Bipartite matching, detection losses and the two-stage training schedule.
//
// Stage 1 trains the lidar stream, its auxiliary heads and the lidar half of
// the last fused level on lidar-only inputs. Stage 2 trains the camera stream
// and every fused level on fused inputs, with the auxiliary heads excluded.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "fgfusion/model.hpp"

namespace fgf {

// ------------------------------------------------------------------ matching

using Assignment = std::vector<std::pair<std::size_t, std::size_t>>;

// Minimum-cost assignment on a row-major (rows, cols) matrix; returns
// min(rows, cols) (row, col) pairs sorted by row. Shortest augmenting paths
// with potentials, O(n^2 m).
inline Assignment linear_sum_assignment(const std::vector<double>& cost, std::size_t rows,
                                        std::size_t cols) {
  if (cost.size() != rows * cols) throw ShapeError("linear_sum_assignment: size mismatch");
  for (double c : cost) {
    if (!std::isfinite(c)) throw ContractError("linear_sum_assignment: non-finite cost");
  }
  if (rows == 0 || cols == 0) return {};
  const bool tr = rows > cols;
  const std::size_t n = tr ? cols : rows, m = tr ? rows : cols;
  auto a = [&](std::size_t i, std::size_t j) {
    return tr ? cost[j * cols + i] : cost[i * cols + j];
  };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = p[j0], j1 = 0;
      double delta = kInf;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment out;
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    if (tr) {
      out.push_back({j - 1, p[j] - 1});
    } else {
      out.push_back({p[j] - 1, j - 1});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct GtBox {
  Box3D box;
  int label = 0;
};

// Objects a detector with `num_classes` classes is trained on.
inline std::vector<GtBox> training_targets(const Scene& s, std::size_t num_classes) {
  std::vector<GtBox> out;
  for (const Object& o : s.objects) {
    if (o.dont_care || o.label < 0 || o.label >= static_cast<int>(num_classes)) continue;
    out.push_back({o.box, o.label});
  }
  return out;
}

struct MatchWeights {
  double cls = 1, box = 1, iou = 1;
  bool symmetric_heading = true;
};

// Encoded gt box; with `symmetric` the heading target is whichever of theta
// and theta + pi lies nearer the predicted (sin, cos).
inline std::array<double, 8> box_target(const Box3D& gt, double pred_sin, double pred_cos,
                                        bool symmetric) {
  auto enc = encode_box(gt);
  if (symmetric) {
    double keep = std::abs(pred_sin - enc[6]) + std::abs(pred_cos - enc[7]);
    double flip = std::abs(pred_sin + enc[6]) + std::abs(pred_cos + enc[7]);
    if (flip < keep) {
      enc[6] = -enc[6];
      enc[7] = -enc[7];
    }
  }
  return enc;
}

struct MatchResult {
  Assignment pairs;  // (query, gt)
  std::vector<int> query_gt;  // gt index per query, -1 for background
};

// (Q, G) cost: cls * (1 - p_class) + box * L1(box params) + iou * (1 - iou_bev).
template <class T>
std::vector<double> match_cost(const HeadOutput<T>& head, const std::vector<GtBox>& gts,
                               const MatchWeights& w = {}) {
  std::size_t q = head.boxes.dim(0), k = head.class_logits.dim(1);
  std::vector<double> cost(q * gts.size());
  std::vector<Box3D> boxes = decode_boxes(head.boxes);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gts[g].label < 0 || static_cast<std::size_t>(gts[g].label) >= k) {
      throw ContractError("match: gt label " + std::to_string(gts[g].label) + " outside " +
                          std::to_string(k) + " classes");
    }
    for (std::size_t i = 0; i < q; ++i) {
      auto enc = box_target(gts[g].box, static_cast<double>(head.boxes[i * 8 + 6]),
                            static_cast<double>(head.boxes[i * 8 + 7]), w.symmetric_heading);
      double logit = static_cast<double>(head.class_logits[i * k + gts[g].label]);
      double p = 1.0 / (1.0 + std::exp(-logit));
      double l1 = 0;
      for (std::size_t j = 0; j < 8; ++j) {
        l1 += std::abs(static_cast<double>(head.boxes[i * 8 + j]) - enc[j]);
      }
      cost[i * gts.size() + g] =
          w.cls * (1 - p) + w.box * l1 + w.iou * (1 - iou_bev(boxes[i], gts[g].box));
    }
  }
  return cost;
}

template <class T>
MatchResult match(const HeadOutput<T>& head, const std::vector<GtBox>& gts,
                  const MatchWeights& w = {}) {
  std::size_t q = head.boxes.dim(0);
  MatchResult r;
  r.query_gt.assign(q, -1);
  if (gts.empty()) return r;
  r.pairs = linear_sum_assignment(match_cost(head, gts, w), q, gts.size());
  for (auto [qi, g] : r.pairs) r.query_gt[qi] = static_cast<int>(g);
  return r;
}

// --------------------------------------------------------------------- losses

struct LossWeights {
  double cls = 1, box = 1, heatmap = 1, aux = 1;
  double focal_alpha = 0.25, focal_gamma = 2;
  double smooth_l1_beta = 1.0 / 9.0;
  bool symmetric_heading = true;
};

// Focal loss over all (query, class) logits plus smooth-L1 on matched box
// parameters, both normalised by max(1, matches).
template <class T>
Tensor<T> detection_loss(const HeadOutput<T>& head, const std::vector<GtBox>& gts,
                         const MatchResult& m, const LossWeights& w = {}) {
  std::size_t q = head.boxes.dim(0), k = head.class_logits.dim(1);
  if (m.query_gt.size() != q) throw ContractError("detection_loss: match size mismatch");
  std::vector<T> pos(q * k, T(0)), neg(q * k, static_cast<T>(1 - w.focal_alpha));
  std::vector<T> target(q * 8, T(0)), weight(q * 8, T(0));
  std::size_t matched = 0;
  for (std::size_t i = 0; i < q; ++i) {
    int g = m.query_gt[i];
    if (g < 0) continue;
    ++matched;
    std::size_t c = static_cast<std::size_t>(gts.at(g).label);
    pos[i * k + c] = static_cast<T>(w.focal_alpha);
    neg[i * k + c] = T(0);
    auto enc = box_target(gts[g].box, static_cast<double>(head.boxes[i * 8 + 6]),
                          static_cast<double>(head.boxes[i * 8 + 7]), w.symmetric_heading);
    for (std::size_t j = 0; j < 8; ++j) {
      target[i * 8 + j] = static_cast<T>(enc[j]);
      weight[i * 8 + j] = T(1);
    }
  }
  T norm = static_cast<T>(std::max<std::size_t>(1, matched));
  Tensor<T> cls = focal_terms(head.class_logits, pos, neg, static_cast<T>(w.focal_gamma));
  Tensor<T> box = smooth_l1(head.boxes, target, weight, static_cast<T>(w.smooth_l1_beta));
  return add(scale(cls, static_cast<T>(w.cls) / norm), scale(box, static_cast<T>(w.box) / norm));
}

// Radius (in cells) at which a shifted box of size (a, b) still overlaps its
// original by `min_overlap`.
inline double gaussian_radius(double a, double b, double min_overlap = 0.1) {
  double b1 = a + b, c1 = a * b * (1 - min_overlap) / (1 + min_overlap);
  double r1 = (b1 + std::sqrt(b1 * b1 - 4 * c1)) / 2;
  double b2 = 2 * (a + b), c2 = (1 - min_overlap) * a * b;
  double r2 = (b2 + std::sqrt(b2 * b2 - 16 * c2)) / 2;
  double a3 = 4 * min_overlap, b3 = -2 * min_overlap * (a + b), c3 = (min_overlap - 1) * a * b;
  double r3 = (b3 + std::sqrt(b3 * b3 - 4 * a3 * c3)) / 2;
  return std::min({r1, r2, r3});
}

// Class-agnostic Gaussian center target on a BEV grid; the cell holding a box
// center is exactly 1.
template <class T>
std::vector<double> heatmap_target(const BEVFeatureMap<T>& bev, const std::vector<GtBox>& gts) {
  std::size_t h = bev.height(), w = bev.width();
  std::vector<double> out(h * w, 0.0);
  for (const GtBox& g : gts) {
    long r = std::lround(bev.row_of(g.box.x)), c = std::lround(bev.col_of(g.box.y));
    if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w)) continue;
    double rad = gaussian_radius(g.box.l / bev.cell_x, g.box.w / bev.cell_y);
    long ri = std::max<long>(1, static_cast<long>(rad));
    double sigma = (2.0 * ri + 1) / 6.0;
    for (long dr = -ri; dr <= ri; ++dr)
      for (long dc = -ri; dc <= ri; ++dc) {
        long rr = r + dr, cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
        double v = std::exp(-static_cast<double>(dr * dr + dc * dc) / (2 * sigma * sigma));
        double& o = out[rr * w + cc];
        o = std::max(o, v);
      }
  }
  return out;
}

// Penalty-reduced focal loss on the center heatmap, normalised by the number
// of peaks.
template <class T>
Tensor<T> heatmap_loss(const Tensor<T>& logits, const std::vector<double>& target,
                       double gamma = 2) {
  std::size_t n = logits.numel();
  if (target.size() != n) throw ShapeError("heatmap_loss: target size mismatch");
  std::vector<T> pos(n), neg(n);
  std::size_t peaks = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool peak = target[i] >= 1.0;
    peaks += peak;
    pos[i] = peak ? T(1) : T(0);
    neg[i] = peak ? T(0) : static_cast<T>(std::pow(1 - target[i], 4));
  }
  T norm = static_cast<T>(std::max<std::size_t>(1, peaks));
  return scale(focal_terms(logits, pos, neg, static_cast<T>(gamma)), T(1) / norm);
}

// ----------------------------------------------------------------- optimizer

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double clip_norm = 10;  // global gradient norm; 0 disables
};

inline double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  return 0.5 * base * (1 + std::cos(std::numbers::pi * static_cast<double>(step) / total));
}

template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Updates the named parameters from their accumulated gradients; returns
  // the pre-clip global gradient norm.
  double step(const std::vector<std::pair<std::string, Tensor<T>>>& params, double lr) {
    double sq = 0;
    for (const auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      for (T g : t.grad()) sq += static_cast<double>(g) * g;
    }
    double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("adam: non-finite gradient norm");
    double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    double bc1 = 1 - std::pow(cfg_.beta1, t_), bc2 = 1 - std::pow(cfg_.beta2, t_);
    for (const auto& [name, param] : params) {
      if (!param.has_grad()) continue;
      auto& st = state_[name];
      Tensor<T> p = param;
      auto val = p.mutable_data();
      auto grad = param.grad();
      if (st.m.empty()) {
        st.m.assign(val.size(), 0.0);
        st.v.assign(val.size(), 0.0);
      }
      for (std::size_t i = 0; i < val.size(); ++i) {
        double g = clip * static_cast<double>(grad[i]);
        st.m[i] = cfg_.beta1 * st.m[i] + (1 - cfg_.beta1) * g;
        st.v[i] = cfg_.beta2 * st.v[i] + (1 - cfg_.beta2) * g * g;
        double upd = lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + cfg_.eps);
        val[i] = static_cast<T>(static_cast<double>(val[i]) - upd);
      }
    }
    return norm;
  }

 private:
  struct State {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, State> state_;
};

// -------------------------------------------------------------- augmentation

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;                  // mirror y
  double max_rotation = std::numbers::pi / 4;  // global yaw, uniform in +-
  double scale_min = 0.95, scale_max = 1.05;
};

// Flip, rotate and scale points and boxes about the lidar origin; boxes whose
// center leaves the detection range are dropped. The image is untouched.
inline Scene augment_scene(const Scene& s, const AugmentConfig& cfg, const DetectionRange& range,
                           Rng& rng) {
  bool flip = rng.bernoulli(cfg.flip_prob);
  double rot = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
  double sc = rng.uniform(cfg.scale_min, cfg.scale_max);
  double c = std::cos(rot), sn = std::sin(rot);
  auto xf = [&](double& x, double& y, double& z) {
    if (flip) y = -y;
    double nx = c * x - sn * y, ny = sn * x + c * y;
    x = nx * sc;
    y = ny * sc;
    z *= sc;
  };
  Scene out = s;
  for (Point& p : out.points) {
    double x = p.x, y = p.y, z = p.z;
    xf(x, y, z);
    p.x = static_cast<float>(x);
    p.y = static_cast<float>(y);
    p.z = static_cast<float>(z);
  }
  out.objects.clear();
  for (Object o : s.objects) {
    xf(o.box.x, o.box.y, o.box.z);
    o.box.w *= sc;
    o.box.l *= sc;
    o.box.h *= sc;
    o.box.heading = normalize_angle((flip ? -o.box.heading : o.box.heading) + rot);
    if (range.contains(o.box.x, o.box.y, o.box.z)) out.objects.push_back(o);
  }
  return out;
}

// ------------------------------------------------------------------ training

struct TrainConfig {
  std::size_t stage1_epochs = 20;
  std::size_t stage2_epochs = 6;
  // Desk-scale overrides: when positive, replace epochs * scenes.
  std::size_t stage1_steps = 200;
  std::size_t stage2_steps = 100;
  double stage1_lr = 1e-3;
  double stage2_lr = 1e-4;
  AdamConfig adam;
  LossWeights loss;
  MatchWeights match;
  AugmentConfig augment;
  bool freeze_lidar = false;  // stage 2: keep stage-1 lidar weights fixed
  bool warm_start = true;     // stage 2: seed finer levels from the stage-1 level
  std::size_t batch_size = 1;  // scenes per optimizer step
  std::size_t aux_max_points = 1024;
  std::uint64_t seed = 0;
};

// Optimizer steps for a stage: zero when its epoch count is zero, else the
// step override when positive, else one pass over the data per epoch.
inline std::size_t effective_steps(std::size_t epochs, std::size_t steps, std::size_t scenes,
                                   std::size_t batch = 1) {
  if (epochs == 0 || scenes == 0) return 0;
  if (steps > 0) return steps;
  batch = std::max<std::size_t>(1, batch);
  return epochs * ((scenes + batch - 1) / batch);
}

struct StepLog {
  int stage = 1;
  std::size_t step = 0, total = 0;
  std::string scene;
  double lr = 0;
  double grad_norm = 0;
  double loss = 0;
  std::map<std::string, double> parts;
};
using StepCallback = std::function<void(const StepLog&)>;

struct TrainResult {
  std::size_t steps = 0;
  std::vector<double> losses;
};

// Raised when a step produces a non-finite loss or gradient; the model holds
// the parameters from before that step.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(int stage, std::size_t step, const std::string& what)
      : NumericError("training diverged at stage " + std::to_string(stage) + " step " +
                     std::to_string(step) + ": " + what),
        stage_(stage),
        step_(step) {}
  int stage() const { return stage_; }
  std::size_t step() const { return step_; }

 private:
  int stage_;
  std::size_t step_;
};

inline bool has_prefix(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

// Parameter names optimised in each stage.
template <class T>
std::vector<std::string> stage_parameters(const Model<T>& model, int stage,
                                          bool freeze_lidar = false) {
  std::vector<std::string> out;
  std::size_t last = model.config().lidar.stages - 1;
  std::string lvl = fusion_level_prefix(last) + ".";
  for (const auto& [name, t] : model.params().all()) {
    bool take = false;
    if (stage == 1) {
      take = has_prefix(name, "lidar.") || has_prefix(name, "aux.") ||
             (has_prefix(name, lvl) && !has_prefix(name, lvl + "image_init") &&
              !has_prefix(name, lvl + "decoder_image") && !has_prefix(name, lvl + "head_image"));
    } else {
      take = has_prefix(name, "cam.") || has_prefix(name, "fusion.") ||
             (!freeze_lidar && has_prefix(name, "lidar."));
    }
    if (take) out.push_back(name);
  }
  return out;
}

// Copies every parameter of the last fused level into the other fused levels
// where the name suffix and shape agree.
template <class T>
std::size_t warm_start_levels(Model<T>& model) {
  std::size_t stages = model.config().lidar.stages;
  std::string src = fusion_level_prefix(stages - 1) + ".";
  std::size_t copied = 0;
  auto& ps = model.params();
  for (std::size_t s = stages - model.fused_levels(); s + 1 < stages; ++s) {
    std::string dst = fusion_level_prefix(s) + ".";
    for (const auto& [name, t] : ps.all()) {
      if (!has_prefix(name, src)) continue;
      std::string target = dst + name.substr(src.size());
      if (!ps.contains(target)) continue;
      Tensor<T> d = ps.get(target);
      if (d.shape() != t.shape()) continue;
      auto out = d.mutable_data();
      std::copy(t.values().begin(), t.values().end(), out.begin());
      ++copied;
    }
  }
  return copied;
}

namespace detail {

inline PointCloud aux_points(const PointCloud& pc, const DetectionRange& range,
                             std::size_t max_points, Rng& rng) {
  PointCloud in;
  for (const Point& p : pc)
    if (range.contains(p.x, p.y, p.z)) in.push_back(p);
  if (max_points == 0 || in.size() <= max_points) return in;
  // Partial Fisher-Yates, then restore input order.
  std::vector<std::size_t> idx(in.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < max_points; ++i) {
    std::size_t j = i + rng.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_points);
  std::sort(idx.begin(), idx.end());
  PointCloud out;
  for (std::size_t i : idx) out.push_back(in[i]);
  return out;
}

template <class T>
Tensor<T> level_loss(const LevelPrediction<T>& lp, const BEVFeatureMap<T>& bev,
                     const std::vector<GtBox>& gts, const TrainConfig& cfg,
                     std::map<std::string, double>& parts, const std::string& tag) {
  Tensor<T> hm = scale(heatmap_loss(lp.heatmap_logits, heatmap_target(bev, gts)),
                       static_cast<T>(cfg.loss.heatmap));
  Tensor<T> init = detection_loss(lp.initial, gts, match(lp.initial, gts, cfg.match), cfg.loss);
  parts[tag + "heatmap"] += hm.item();
  parts[tag + "initial"] += init.item();
  Tensor<T> total = add(hm, init);
  if (lp.fused.defined()) {
    Tensor<T> fz = detection_loss(lp.fused, gts, match(lp.fused, gts, cfg.match), cfg.loss);
    parts[tag + "fused"] += fz.item();
    total = add(total, fz);
  }
  return total;
}

template <class T>
Tensor<T> scene_loss(const Model<T>& model, const Scene& scene, const TrainConfig& cfg,
                     int stage, Rng& rng, std::map<std::string, double>& parts) {
  const ModelConfig& mc = model.config();
  std::vector<GtBox> gts = training_targets(scene, mc.fusion.num_classes);
  auto fw = model.forward(scene, stage == 1 ? Mode::kLidarOnly : Mode::kFused);
  Tensor<T> loss;
  for (const auto& lp : fw.levels) {
    Tensor<T> l = level_loss(lp, fw.lidar.bev[lp.level], gts, cfg, parts,
                             "level" + std::to_string(lp.level + 1) + ".");
    loss = loss.defined() ? add(loss, l) : l;
  }
  if (stage == 1 && mc.lidar.aux && cfg.loss.aux > 0) {
    PointCloud pts = aux_points(scene.points, mc.lidar.range, cfg.aux_max_points, rng);
    if (!pts.empty()) {
      std::vector<Box3D> boxes;
      for (const auto& g : gts) boxes.push_back(g.box);
      auto ao = model.lidar().aux_forward(fw.lidar, pts);
      Tensor<T> al = scale(aux_loss(ao.fg_logits, ao.offsets, aux_targets(pts, boxes)),
                           static_cast<T>(cfg.loss.aux));
      parts["aux"] += al.item();
      loss = add(loss, al);
    }
  }
  return loss;
}

template <class T>
TrainResult run_stage(Model<T>& model, const std::vector<Scene>& data, const TrainConfig& cfg,
                      int stage, const StepCallback& log) {
  TrainResult res;
  std::size_t total = stage == 1 ? effective_steps(cfg.stage1_epochs, cfg.stage1_steps,
                                                   data.size(), cfg.batch_size)
                                 : effective_steps(cfg.stage2_epochs, cfg.stage2_steps,
                                                   data.size(), cfg.batch_size);
  res.steps = total;
  if (total == 0) return res;
  if (cfg.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  const ModelConfig& mc = model.config();
  std::vector<std::pair<std::string, Tensor<T>>> params;
  for (const auto& n : stage_parameters(model, stage, cfg.freeze_lidar)) {
    params.push_back({n, model.params().get(n)});
  }
  Adam<T> opt(cfg.adam);
  Rng rng(mix_seed(cfg.seed, 0x5354414745ULL + stage));
  double base_lr = stage == 1 ? cfg.stage1_lr : cfg.stage2_lr;
  // Scenes are drawn from a fresh seeded permutation per pass over the data.
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  auto next_scene = [&]() -> const Scene& {
    if (cursor == order.size()) {
      order.resize(data.size());
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      cursor = 0;
    }
    return data[order[cursor++]];
  };
  std::vector<std::vector<T>> good(params.size());
  const T inv_batch = T(1) / static_cast<T>(cfg.batch_size);
  for (std::size_t step = 0; step < total; ++step) {
    for (std::size_t i = 0; i < params.size(); ++i) good[i] = params[i].second.values();
    StepLog rec;
    rec.stage = stage;
    rec.step = step;
    rec.total = total;
    rec.lr = cosine_lr(base_lr, step, total);
    try {
      model.params().zero_grad();
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const Scene& raw = next_scene();
        Scene scene = stage == 1 && cfg.augment.enabled
                          ? augment_scene(raw, cfg.augment, mc.lidar.range, rng)
                          : raw;
        rec.scene += (b ? "," : "") + scene.id;
        Tensor<T> loss = scale(scene_loss(model, scene, cfg, stage, rng, rec.parts), inv_batch);
        double v = static_cast<double>(loss.item());
        if (!std::isfinite(v)) throw NumericError("non-finite loss");
        rec.loss += v;
        loss.backward();
      }
      for (auto& [k, v] : rec.parts) v /= static_cast<double>(cfg.batch_size);
      rec.grad_norm = opt.step(params, rec.lr);
      for (const auto& [n, t] : params)
        for (T v : t.values())
          if (!std::isfinite(v)) throw NumericError("non-finite parameter '" + n + "'");
    } catch (const NumericError& e) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T> t = params[i].second;
        auto d = t.mutable_data();
        std::copy(good[i].begin(), good[i].end(), d.begin());
      }
      model.params().zero_grad();
      throw TrainingDiverged(stage, step, e.what());
    }
    res.losses.push_back(rec.loss);
    if (log) log(rec);
  }
  model.params().zero_grad();
  return res;
}

}  // namespace detail

template <class T>
TrainResult train_stage1(Model<T>& model, const std::vector<Scene>& data, const TrainConfig& cfg,
                         const StepCallback& log = {}) {
  return detail::run_stage(model, data, cfg, 1, log);
}

template <class T>
TrainResult train_stage2(Model<T>& model, const std::vector<Scene>& data, const TrainConfig& cfg,
                         const StepCallback& log = {}) {
  if (cfg.warm_start &&
      effective_steps(cfg.stage2_epochs, cfg.stage2_steps, data.size(), cfg.batch_size) > 0) {
    warm_start_levels(model);
  }
  return detail::run_stage(model, data, cfg, 2, log);
}

}  // namespace fgf
