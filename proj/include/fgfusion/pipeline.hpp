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

// Model construction, inference and evaluation over a run configuration.

#include <algorithm>
#include <vector>

#include "fgfusion/config.hpp"
#include "fgfusion/metrics.hpp"
#include "fgfusion/model.hpp"
#include "fgfusion/postprocess.hpp"
#include "fgfusion/training.hpp"

namespace fgf {

// A scene without lidar returns inside the detection range yields no
// detections.
template <class T>
DetectionSet predict(const Model<T>& model, const Scene& s, Mode mode,
                     const PostprocessConfig& pp) {
  const DetectionRange& range = model.config().lidar.range;
  if (std::none_of(s.points.begin(), s.points.end(),
                   [&](const Point& p) { return range.contains(p.x, p.y, p.z); })) {
    return {};
  }
  NoGradGuard ng;
  auto r = model.forward(s, mode);
  return merge_levels(r.levels, pp);
}

template <class T>
EvalReport evaluate_model(const Model<T>& model, const std::vector<Scene>& scenes, Mode mode,
                          const PostprocessConfig& pp, const EvalConfig& ec) {
  if (scenes.empty()) throw ContractError("evaluate: empty dataset");
  std::vector<DetectionSet> dets;
  for (const auto& s : scenes) dets.push_back(predict(model, s, mode, pp));
  return evaluate_detections(dets, scenes, ec);
}

struct TwoStageResult {
  TrainResult stage1, stage2;
};

template <class T>
TwoStageResult train_two_stage(Model<T>& model, const std::vector<Scene>& data,
                               const TrainConfig& cfg, const StepCallback& log = {}) {
  TwoStageResult r;
  r.stage1 = train_stage1(model, data, cfg, log);
  r.stage2 = train_stage2(model, data, cfg, log);
  return r;
}

}  // namespace fgf
