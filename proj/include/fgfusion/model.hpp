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

// The full detector: lidar stream, camera stream and multi-scale fusion over
// one parameter store.

#include <memory>
#include <vector>

#include "fgfusion/camera_stream.hpp"
#include "fgfusion/fusion.hpp"
#include "fgfusion/lidar_stream.hpp"
#include "fgfusion/scene.hpp"

namespace fgf {

struct ModelConfig {
  LidarConfig lidar;
  CameraConfig camera;
  FusionConfig fusion;
  std::size_t fused_levels = 3;  // N
};

enum class Mode { kLidarOnly, kFused };

template <class T>
struct ForwardResult {
  LidarOutput<T> lidar;
  std::vector<LevelPrediction<T>> levels;
};

template <class T>
Tensor<T> image_tensor(const Scene& s, const CameraConfig& cfg) {
  if (s.image_height != cfg.height || s.image_width != cfg.width ||
      s.image.size() != 3 * cfg.height * cfg.width) {
    throw ShapeError("scene '" + s.id + "': image " + std::to_string(s.image_height) + "x" +
                     std::to_string(s.image_width) + " vs model " + std::to_string(cfg.height) +
                     "x" + std::to_string(cfg.width));
  }
  std::vector<T> v(s.image.begin(), s.image.end());
  return Tensor<T>::from_vector({3, cfg.height, cfg.width}, std::move(v));
}

template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed), ps_(seed) {
    if (cfg_.fused_levels < 1 || cfg_.fused_levels > cfg_.lidar.stages) {
      throw ConfigError("model: N = " + std::to_string(cfg_.fused_levels) +
                        " fused levels needs 1 <= N <= lidar stages (" +
                        std::to_string(cfg_.lidar.stages) + ")");
    }
    cfg_.camera.fused_levels = cfg_.fused_levels;
    build();
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }
  const LidarStream<T>& lidar() const { return lidar_; }
  const CameraStream<T>& camera() const { return camera_; }
  const MultiScaleFusion<T>& fusion() const { return fusion_; }
  std::size_t fused_levels() const { return fusion_.fused_levels(); }

  ForwardResult<T> forward(const Scene& s, Mode mode) const {
    Tensor<T> volume = voxel_input<T>(lidar_.voxelize(s.points));
    if (mode == Mode::kLidarOnly) return forward_inputs(volume, Tensor<T>(), s.calib, mode);
    return forward_inputs(volume, image_tensor<T>(s, cfg_.camera), s.calib, mode);
  }

  // From a dense voxel input volume and a (3, H, W) image tensor; the image
  // is ignored in lidar-only mode.
  ForwardResult<T> forward_inputs(const Tensor<T>& volume, const Tensor<T>& image,
                                  const Calibration& calib, Mode mode) const {
    ForwardResult<T> r;
    r.lidar = lidar_.forward_volume(volume);
    if (mode == Mode::kLidarOnly) {
      r.levels.push_back(fusion_.forward_lidar(r.lidar.bev));
      return r;
    }
    calib.validate();
    auto cam = camera_.forward(image);
    r.levels = fusion_.forward(r.lidar.bev, cam.fused, cam.strides, calib);
    return r;
  }

  // Same configuration and weights, no auxiliary heads.
  Model detach_aux() const {
    ModelConfig c = cfg_;
    c.lidar.aux = false;
    Model m(c, seed_);
    m.ps_.copy_values_from(ps_, true);
    return m;
  }

  Model clone() const {
    Model m(cfg_, seed_);
    m.ps_.copy_values_from(ps_);
    return m;
  }

 private:
  void build() {
    lidar_ = LidarStream<T>(ps_, cfg_.lidar);
    camera_ = CameraStream<T>(ps_, cfg_.camera);
    std::vector<std::size_t> bev;
    for (std::size_t k = 0; k < cfg_.lidar.stages; ++k) bev.push_back(lidar_.bev_channels(k));
    fusion_ = MultiScaleFusion<T>(ps_, cfg_.fusion, bev, cfg_.camera.lateral_channels,
                                  cfg_.camera.fused_levels);
  }

  ModelConfig cfg_;
  std::uint64_t seed_;
  ParamStore<T> ps_;
  LidarStream<T> lidar_;
  CameraStream<T> camera_;
  MultiScaleFusion<T> fusion_;
};

}  // namespace fgf
