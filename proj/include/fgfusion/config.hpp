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

// Run configuration as a JSON document with sections data, model, fusion,
// train, postprocess and eval. Absent keys keep their defaults; unknown keys
// and mistyped values are configuration errors.

#include <cstdlib>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgfusion/datasets.hpp"
#include "fgfusion/metrics.hpp"
#include "fgfusion/model.hpp"
#include "fgfusion/postprocess.hpp"
#include "fgfusion/training.hpp"

namespace fgf {

using nlohmann::json;

struct RunConfig {
  std::uint64_t seed = 0;  // model initialisation and training order
  SyntheticConfig data;
  ModelConfig model;
  TrainConfig train;
  PostprocessConfig postprocess;
  EvalConfig eval;

  RunConfig() {
    // Range, voxel size and image size are shared between data and model.
    data.range = model.lidar.range;
    data.image_height = model.camera.height;
    data.image_width = model.camera.width;
    data.focal = 0.5 * static_cast<double>(model.camera.width);
  }
};

namespace detail {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, join(key));
  }

  template <class V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) type_error(key, "boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer()) type_error(key, "integer");
      if (std::is_unsigned_v<V> && v.get<long long>() < 0) type_error(key, "non-negative integer");
      out = v.get<V>();
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) type_error(key, "number");
      out = v.get<V>();
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) type_error(key, "string");
      out = v.get<std::string>();
    } else {
      static_assert(sizeof(V) == 0, "unsupported config type");
    }
  }

  template <class V, std::size_t N>
  void get_array(const std::string& key, std::array<V, N>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != N) type_error(key, "array of " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) {
      if (!v[i].is_number()) type_error(key, "array of " + std::to_string(N) + " numbers");
      out[i] = v[i].get<V>();
    }
  }

  template <class V>
  void get_vector(const std::string& key, std::vector<V>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) type_error(key, "array");
    out.clear();
    for (const auto& e : v) {
      if constexpr (std::is_same_v<V, std::string>) {
        if (!e.is_string()) type_error(key, "array of strings");
      } else {
        if (!e.is_number_integer() || e.get<long long>() < 0) {
          type_error(key, "array of non-negative integers");
        }
      }
      out.push_back(e.get<V>());
    }
  }

  // Rejects keys that were never asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key '" + join(it.key()) + "'");
    }
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  [[noreturn]] void type_error(const std::string& key, const std::string& want) const {
    throw ConfigError("config: '" + join(key) + "' must be " + want);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_range(Section s, DetectionRange& r) {
  std::array<double, 2> x{r.x_min, r.x_max}, y{r.y_min, r.y_max}, z{r.z_min, r.z_max};
  s.get_array("x", x);
  s.get_array("y", y);
  s.get_array("z", z);
  s.finish();
  r = {x[0], x[1], y[0], y[1], z[0], z[1]};
}

inline BevMode bev_mode_from(const std::string& s) {
  if (s == "concat") return BevMode::kConcat;
  if (s == "sum") return BevMode::kSum;
  throw ConfigError("config: 'model.bev_mode' must be \"concat\" or \"sum\"");
}

inline IouMode iou_mode_from(const std::string& key, const std::string& s) {
  if (s == "bev") return IouMode::kBev;
  if (s == "3d") return IouMode::k3d;
  throw ConfigError("config: '" + key + "' must be \"bev\" or \"3d\"");
}

}  // namespace detail

inline RunConfig config_from_json(const json& doc) {
  RunConfig c;
  detail::Section root(doc, "");
  root.get("seed", c.seed);

  {
    auto d = root.child("data");
    std::array<double, 3> voxel{c.model.lidar.voxel.dx, c.model.lidar.voxel.dy, c.model.lidar.voxel.dz};
    d.get_array("voxel_size", voxel);
    c.model.lidar.voxel = {voxel[0], voxel[1], voxel[2]};
    detail::read_range(d.child("range"), c.model.lidar.range);
    c.data.range = c.model.lidar.range;
    std::array<std::size_t, 2> image{c.model.camera.height, c.model.camera.width};
    d.get_array("image_size", image);
    c.model.camera.height = image[0];
    c.model.camera.width = image[1];
    c.data.image_height = image[0];
    c.data.image_width = image[1];
    c.data.focal = 0.5 * static_cast<double>(image[1]);
    {
      auto s = d.child("synthetic");
      s.get("num_scenes", c.data.num_scenes);
      s.get("boxes_min", c.data.boxes_min);
      s.get("boxes_max", c.data.boxes_max);
      s.get("surface_density", c.data.surface_density);
      s.get("ground_density", c.data.ground_density);
      s.get("noise_sigma", c.data.noise_sigma);
      s.get("car_fraction", c.data.car_fraction);
      s.get("ambiguous", c.data.ambiguous);
      s.get("seed", c.data.seed);
      s.get("focal", c.data.focal);
      s.get("ground_z", c.data.ground_z);
      s.get("min_distance", c.data.min_distance);
      s.get("edge_margin", c.data.edge_margin);
      s.get("fov_fraction", c.data.fov_fraction);
      s.finish();
    }
    {
      auto s = d.child("difficulty");
      s.get_array("min_height", c.data.difficulty.min_height);
      s.get_array("max_occlusion", c.data.difficulty.max_occlusion);
      s.get_array("max_truncation", c.data.difficulty.max_truncation);
      s.finish();
    }
    d.finish();
  }
  {
    auto m = root.child("model");
    m.get("fused_levels", c.model.fused_levels);
    m.get("lidar_stages", c.model.lidar.stages);
    m.get_vector("lidar_channels", c.model.lidar.channels);
    std::string bev = c.model.lidar.bev_mode == BevMode::kConcat ? "concat" : "sum";
    m.get("bev_mode", bev);
    c.model.lidar.bev_mode = detail::bev_mode_from(bev);
    m.get("aux", c.model.lidar.aux);
    m.get("aux_hidden", c.model.lidar.aux_hidden);
    m.get("lateral_channels", c.model.camera.lateral_channels);
    m.get("reduction", c.model.camera.reduction);
    m.get("attention", c.model.camera.attention);
    m.finish();
  }
  {
    auto f = root.child("fusion");
    auto& fc = c.model.fusion;
    f.get("queries", fc.queries);
    f.get("dim", fc.dim);
    f.get("ffn_hidden", fc.ffn_hidden);
    f.get("heatmap_hidden", fc.heatmap_hidden);
    f.get("num_classes", fc.num_classes);
    f.get("z_anchor", fc.z_anchor);
    f.get_array("size_anchor", fc.size_anchor);
    f.get("window_dilation", fc.window_dilation);
    f.get("full_image_attention", fc.full_image_attention);
    f.finish();
  }
  {
    auto t = root.child("train");
    auto& tc = c.train;
    t.get("stage1_epochs", tc.stage1_epochs);
    t.get("stage2_epochs", tc.stage2_epochs);
    t.get("stage1_steps", tc.stage1_steps);
    t.get("stage2_steps", tc.stage2_steps);
    t.get("stage1_lr", tc.stage1_lr);
    t.get("stage2_lr", tc.stage2_lr);
    t.get("clip_norm", tc.adam.clip_norm);
    t.get("freeze_lidar", tc.freeze_lidar);
    t.get("warm_start", tc.warm_start);
    t.get("aux_max_points", tc.aux_max_points);
    t.get("batch_size", tc.batch_size);
    {
      auto a = t.child("augment");
      a.get("enabled", tc.augment.enabled);
      a.get("flip_prob", tc.augment.flip_prob);
      a.get("max_rotation", tc.augment.max_rotation);
      a.get("scale_min", tc.augment.scale_min);
      a.get("scale_max", tc.augment.scale_max);
      a.finish();
    }
    {
      auto l = t.child("loss");
      l.get("cls", tc.loss.cls);
      l.get("box", tc.loss.box);
      l.get("heatmap", tc.loss.heatmap);
      l.get("aux", tc.loss.aux);
      l.get("focal_alpha", tc.loss.focal_alpha);
      l.get("focal_gamma", tc.loss.focal_gamma);
      l.get("smooth_l1_beta", tc.loss.smooth_l1_beta);
      l.get("symmetric_heading", tc.loss.symmetric_heading);
      l.finish();
    }
    t.finish();
  }
  {
    auto p = root.child("postprocess");
    p.get("nms_threshold", c.postprocess.nms_threshold);
    p.get("score_threshold", c.postprocess.score_threshold);
    std::string mode = c.postprocess.nms_iou == IouMode::kBev ? "bev" : "3d";
    p.get("nms_iou", mode);
    c.postprocess.nms_iou = detail::iou_mode_from("postprocess.nms_iou", mode);
    p.finish();
  }
  {
    auto e = root.child("eval");
    std::string mode = c.eval.mode == IouMode::kBev ? "bev" : "3d";
    e.get("iou_mode", mode);
    c.eval.mode = detail::iou_mode_from("eval.iou_mode", mode);
    e.get("car_iou", c.eval.iou_threshold[kCar]);
    e.get("pedestrian_iou", c.eval.iou_threshold[kPedestrian]);
    e.get("cyclist_iou", c.eval.iou_threshold[kCyclist]);
    e.get("fold_flip", c.eval.fold_flip);
    std::vector<std::string> classes;
    for (int k : c.eval.classes) classes.push_back(class_name(k));
    e.get_vector("classes", classes);
    c.eval.classes.clear();
    for (const auto& n : classes) {
      int k = class_from_name(n);
      if (k < 0) throw ConfigError("config: 'eval.classes' has unknown class '" + n + "'");
      c.eval.classes.push_back(k);
    }
    e.finish();
  }
  root.finish();
  c.train.seed = c.seed;
  c.train.match.symmetric_heading = c.train.loss.symmetric_heading;
  if (c.train.batch_size < 1) throw ConfigError("config: 'train.batch_size' must be at least 1");
  if (c.model.fused_levels < 1 || c.model.fused_levels > kCameraBlocks) {
    throw ConfigError("config: 'model.fused_levels' must lie in [1, 4]");
  }
  if (c.postprocess.nms_threshold <= 0 || c.postprocess.nms_threshold >= 1) {
    throw ConfigError("config: 'postprocess.nms_threshold' must lie in (0, 1)");
  }
  return c;
}

inline json config_to_json(const RunConfig& c) {
  const auto& r = c.model.lidar.range;
  const auto& v = c.model.lidar.voxel;
  const auto& d = c.data;
  const auto& f = c.model.fusion;
  const auto& t = c.train;
  std::vector<std::string> classes;
  for (int k : c.eval.classes) classes.push_back(class_name(k));
  return {
      {"seed", c.seed},
      {"data",
       {{"voxel_size", {v.dx, v.dy, v.dz}},
        {"range", {{"x", {r.x_min, r.x_max}}, {"y", {r.y_min, r.y_max}}, {"z", {r.z_min, r.z_max}}}},
        {"image_size", {c.model.camera.height, c.model.camera.width}},
        {"synthetic",
         {{"num_scenes", d.num_scenes},
          {"boxes_min", d.boxes_min},
          {"boxes_max", d.boxes_max},
          {"surface_density", d.surface_density},
          {"ground_density", d.ground_density},
          {"noise_sigma", d.noise_sigma},
          {"car_fraction", d.car_fraction},
          {"ambiguous", d.ambiguous},
          {"seed", d.seed},
          {"focal", d.focal},
          {"ground_z", d.ground_z},
          {"min_distance", d.min_distance},
          {"edge_margin", d.edge_margin},
          {"fov_fraction", d.fov_fraction}}},
        {"difficulty",
         {{"min_height", d.difficulty.min_height},
          {"max_occlusion", d.difficulty.max_occlusion},
          {"max_truncation", d.difficulty.max_truncation}}}}},
      {"model",
       {{"fused_levels", c.model.fused_levels},
        {"lidar_stages", c.model.lidar.stages},
        {"lidar_channels", c.model.lidar.channels},
        {"bev_mode", c.model.lidar.bev_mode == BevMode::kConcat ? "concat" : "sum"},
        {"aux", c.model.lidar.aux},
        {"aux_hidden", c.model.lidar.aux_hidden},
        {"lateral_channels", c.model.camera.lateral_channels},
        {"reduction", c.model.camera.reduction},
        {"attention", c.model.camera.attention}}},
      {"fusion",
       {{"queries", f.queries},
        {"dim", f.dim},
        {"ffn_hidden", f.ffn_hidden},
        {"heatmap_hidden", f.heatmap_hidden},
        {"num_classes", f.num_classes},
        {"z_anchor", f.z_anchor},
        {"size_anchor", f.size_anchor},
        {"window_dilation", f.window_dilation},
        {"full_image_attention", f.full_image_attention}}},
      {"train",
       {{"stage1_epochs", t.stage1_epochs},
        {"stage2_epochs", t.stage2_epochs},
        {"stage1_steps", t.stage1_steps},
        {"stage2_steps", t.stage2_steps},
        {"stage1_lr", t.stage1_lr},
        {"stage2_lr", t.stage2_lr},
        {"clip_norm", t.adam.clip_norm},
        {"freeze_lidar", t.freeze_lidar},
        {"warm_start", t.warm_start},
        {"aux_max_points", t.aux_max_points},
        {"batch_size", t.batch_size},
        {"augment",
         {{"enabled", t.augment.enabled},
          {"flip_prob", t.augment.flip_prob},
          {"max_rotation", t.augment.max_rotation},
          {"scale_min", t.augment.scale_min},
          {"scale_max", t.augment.scale_max}}},
        {"loss",
         {{"cls", t.loss.cls},
          {"box", t.loss.box},
          {"heatmap", t.loss.heatmap},
          {"aux", t.loss.aux},
          {"focal_alpha", t.loss.focal_alpha},
          {"focal_gamma", t.loss.focal_gamma},
          {"smooth_l1_beta", t.loss.smooth_l1_beta},
          {"symmetric_heading", t.loss.symmetric_heading}}}}},
      {"postprocess",
       {{"nms_threshold", c.postprocess.nms_threshold},
        {"score_threshold", c.postprocess.score_threshold},
        {"nms_iou", c.postprocess.nms_iou == IouMode::kBev ? "bev" : "3d"}}},
      {"eval",
       {{"iou_mode", c.eval.mode == IouMode::kBev ? "bev" : "3d"},
        {"car_iou", c.eval.iou_threshold.at(kCar)},
        {"pedestrian_iou", c.eval.iou_threshold.at(kPedestrian)},
        {"cyclist_iou", c.eval.iou_threshold.at(kCyclist)},
        {"fold_flip", c.eval.fold_flip},
        {"classes", classes}}}};
}

inline RunConfig parse_config(const std::string& text, const std::string& where) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return RunConfig{};
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return config_from_json(doc);
}

inline RunConfig load_config(const std::string& path) {
  return parse_config(read_file(path), path);
}

// FGF_SEED, when set, replaces the configured seed.
inline void apply_seed_override(RunConfig& c) {
  const char* s = std::getenv("FGF_SEED");
  if (!s || !*s) return;
  char* end = nullptr;
  unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("FGF_SEED is not an integer: '") + s + "'");
  c.seed = v;
  c.train.seed = v;
}

}  // namespace fgf
