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
// Library tour: generate a small synthetic set, train both stages briefly,
// then evaluate and print the KITTI result lines of the first frame.
//
//   quickstart [config.json]

#include <cstdio>
#include <iostream>

#include "fgfusion/config.hpp"
#include "fgfusion/datasets.hpp"
#include "fgfusion/pipeline.hpp"

int main(int argc, char** argv) try {
  fgf::RunConfig c = argc > 1 ? fgf::load_config(argv[1]) : fgf::RunConfig{};
  if (argc <= 1) {
    // A 32 m square at 0.8 m voxels and a 128x256 camera trains in seconds.
    c = fgf::parse_config(R"({
      "data": {"voxel_size": [0.8, 0.8, 0.5],
               "range": {"x": [0, 32], "y": [-16, 16], "z": [-3, 1]},
               "image_size": [128, 256],
               "synthetic": {"num_scenes": 4, "focal": 128},
               "difficulty": {"min_height": [24, 12, 0]}},
      "train": {"stage1_steps": 20, "stage2_steps": 10, "batch_size": 2}})",
                          "quickstart");
  }
  fgf::apply_seed_override(c);

  auto scenes = fgf::generate_dataset(c.data);
  fgf::Model<float> model(c.model, c.seed);
  fgf::train_two_stage(model, scenes, c.train, [](const fgf::StepLog& s) {
    if (s.step + 1 == s.total) std::printf("stage %d: %zu steps, loss %.4f\n", s.stage, s.total, s.loss);
  });

  // The auxiliary network only shapes training; inference runs without it.
  fgf::Model<float> deployed = model.detach_aux();
  auto report = fgf::evaluate_model(deployed, scenes, fgf::Mode::kFused, c.postprocess, c.eval);
  for (const auto& cell : report.cells) {
    if (!cell.evaluable) continue;
    std::printf("%-10s %-8s AP %.3f APH %.3f\n", fgf::class_name(cell.cls),
                fgf::difficulty_name(cell.difficulty), cell.ap, cell.aph);
  }
  std::printf("training-set mAP %.3f\n", report.map);

  auto dets = fgf::predict(deployed, scenes.front(), fgf::Mode::kFused, c.postprocess);
  fgf::emit_kitti_results(dets, scenes.front().calib, "quickstart_000000.txt");
  std::printf("%zu detections written to quickstart_000000.txt\n", dets.size());
  return 0;
} catch (const fgf::Error& e) {
  std::cerr << "quickstart: " << e.what() << "\n";
  return e.exit_code();
}
