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

#include <string>
#include <vector>

#include "fgfusion/box.hpp"
#include "fgfusion/geometry.hpp"

namespace fgf {

enum ObjectClass : int { kCar = 0, kPedestrian = 1, kCyclist = 2 };

inline const char* class_name(int c) {
  switch (c) {
    case kCar: return "Car";
    case kPedestrian: return "Pedestrian";
    case kCyclist: return "Cyclist";
    default: return "DontCare";
  }
}

inline int class_from_name(const std::string& s) {
  if (s == "Car") return kCar;
  if (s == "Pedestrian") return kPedestrian;
  if (s == "Cyclist") return kCyclist;
  return -1;
}

enum Difficulty : int { kEasy = 0, kModerate = 1, kHard = 2, kIgnored = 3 };

struct Object {
  Box3D box;  // lidar frame
  int label = kCar;
  int difficulty = kEasy;
  bool dont_care = false;
  double truncation = 0;
  int occlusion = 0;
  std::array<double, 4> bbox2d{0, 0, 0, 0};  // left, top, right, bottom pixels
};

struct Scene {
  std::string id;
  PointCloud points;
  Calibration calib;
  std::size_t image_height = 0, image_width = 0;
  std::vector<float> image;  // (3, H, W), values in [0, 1]
  std::vector<Object> objects;
};

}  // namespace fgf
