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

// Detection decoding, class-wise NMS and cross-level merging.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fgfusion/box.hpp"
#include "fgfusion/errors.hpp"
#include "fgfusion/fusion.hpp"

namespace fgf {

struct DetectionSet {
  std::vector<Box3D> boxes;
  std::vector<double> scores;
  std::vector<int> classes;
  std::vector<int> levels;  // level of origin, -1 if unknown

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }
  void push(const Box3D& b, double s, int c, int level = -1) {
    boxes.push_back(b);
    scores.push_back(s);
    classes.push_back(c);
    levels.push_back(level);
  }
  DetectionSet subset(const std::vector<std::size_t>& idx) const {
    DetectionSet d;
    for (auto i : idx) d.push(boxes[i], scores[i], classes[i], levels[i]);
    return d;
  }
};

struct PostprocessConfig {
  double nms_threshold = 0.55;
  double score_threshold = 0.0;
  IouMode nms_iou = IouMode::kBev;
};

// One detection per query: the arg-max class and its sigmoid score.
template <class T>
DetectionSet decode_head(const HeadOutput<T>& head, int level, double score_threshold = 0.0) {
  DetectionSet d;
  std::vector<Box3D> boxes = decode_boxes(head.boxes);
  std::size_t k = head.class_logits.dim(1);
  for (std::size_t q = 0; q < boxes.size(); ++q) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (head.class_logits[q * k + c] > head.class_logits[q * k + best]) best = c;
    double s = 1.0 / (1.0 + std::exp(-static_cast<double>(head.class_logits[q * k + best])));
    if (s >= score_threshold) d.push(boxes[q], s, static_cast<int>(best), level);
  }
  return d;
}

// Indices ordered by descending score, ties by insertion order.
inline std::vector<std::size_t> score_order(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

// Greedy suppression within each class: a box is dropped when its IoU with an
// already kept box of the same class exceeds the threshold.
inline DetectionSet nms(const DetectionSet& dets, double iou_threshold,
                        IouMode mode = IouMode::kBev) {
  if (!(iou_threshold > 0 && iou_threshold < 1)) {
    throw ContractError("nms: threshold must lie in (0, 1)");
  }
  std::vector<std::size_t> keep;
  for (std::size_t i : score_order(dets.scores)) {
    bool suppressed = false;
    for (std::size_t j : keep) {
      if (dets.classes[j] == dets.classes[i] &&
          box_iou(dets.boxes[i], dets.boxes[j], mode) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(i);
  }
  return dets.subset(keep);
}

template <class T>
DetectionSet merge_levels(const std::vector<LevelPrediction<T>>& preds,
                          const PostprocessConfig& cfg = {}) {
  if (preds.empty()) throw ContractError("merge_levels: no levels");
  DetectionSet all;
  for (const auto& p : preds) {
    DetectionSet d = decode_head(p.final(), static_cast<int>(p.level), cfg.score_threshold);
    for (std::size_t i = 0; i < d.size(); ++i) all.push(d.boxes[i], d.scores[i], d.classes[i], d.levels[i]);
  }
  return nms(all, cfg.nms_threshold, cfg.nms_iou);
}

}  // namespace fgf
