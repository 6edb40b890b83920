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

// Average precision at 40 recall positions, heading-weighted APH, and
// per-class, per-difficulty evaluation reports.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgfusion/box.hpp"
#include "fgfusion/errors.hpp"
#include "fgfusion/postprocess.hpp"
#include "fgfusion/scene.hpp"

namespace fgf {

inline constexpr std::size_t kRecallPositions = 40;

enum class DetLabel : int { kFalsePositive = 0, kTruePositive = 1, kIgnored = 2 };

struct MatchOutcome {
  std::vector<DetLabel> labels;       // per detection, input order
  std::vector<double> heading_error;  // radians in [0, pi], TPs only
  std::size_t num_gt = 0;             // non-ignored gts
};

// Absolute heading difference in [0, pi]; with `fold_flip` a box pointing
// backwards counts as aligned.
inline double heading_error(double a, double b, bool fold_flip = false) {
  double d = std::abs(normalize_angle(a - b));
  if (fold_flip) d = std::min(d, std::numbers::pi - d);
  return d;
}

// Detections in descending score, ties by input order, claim the unclaimed
// gt of highest IoU at or above the threshold. A detection whose claim lands
// on an ignored gt is itself ignored.
inline MatchOutcome match_dets_to_gts(const std::vector<Box3D>& dets,
                                      const std::vector<double>& scores,
                                      const std::vector<Box3D>& gts,
                                      const std::vector<bool>& gt_ignored, double iou_threshold,
                                      IouMode mode = IouMode::k3d, bool fold_flip = false) {
  if (dets.size() != scores.size() || gts.size() != gt_ignored.size()) {
    throw ContractError("match_dets_to_gts: size mismatch");
  }
  MatchOutcome out;
  out.labels.assign(dets.size(), DetLabel::kFalsePositive);
  out.heading_error.assign(dets.size(), 0.0);
  for (bool ig : gt_ignored) out.num_gt += !ig;
  std::vector<bool> claimed(gts.size(), false);
  for (std::size_t i : score_order(scores)) {
    double best = -1;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g]) continue;
      double iou = box_iou(dets[i], gts[g], mode);
      if (iou >= iou_threshold && iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best_g == gts.size()) continue;
    claimed[best_g] = true;
    if (gt_ignored[best_g]) {
      out.labels[i] = DetLabel::kIgnored;
    } else {
      out.labels[i] = DetLabel::kTruePositive;
      out.heading_error[i] = heading_error(dets[i].heading, gts[best_g].heading, fold_flip);
    }
  }
  return out;
}

struct PrCurve {
  std::vector<double> recall, precision;  // one point per distinct score threshold
};

namespace detail {

// PR points at every distinct score, highest first; `weight` scales each TP's
// contribution to precision only.
inline PrCurve pr_points(const std::vector<bool>& tp, const std::vector<double>& scores,
                         const std::vector<double>& weight, std::size_t num_gt) {
  PrCurve c;
  auto order = score_order(scores);
  double wtp = 0;
  std::size_t ntp = 0, n = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    std::size_t i = order[k];
    ++n;
    if (tp[i]) {
      ++ntp;
      wtp += weight[i];
    }
    bool group_end = k + 1 == order.size() || scores[order[k + 1]] != scores[i];
    if (!group_end) continue;
    c.recall.push_back(static_cast<double>(ntp) / static_cast<double>(num_gt));
    c.precision.push_back(wtp / static_cast<double>(n));
  }
  return c;
}

inline std::vector<double> sample_40(const PrCurve& c) {
  std::vector<double> out(kRecallPositions, 0.0);
  // Running maximum from the right.
  std::vector<double> best(c.precision.size());
  double m = 0;
  for (std::size_t k = c.precision.size(); k-- > 0;) {
    m = std::max(m, c.precision[k]);
    best[k] = m;
  }
  std::size_t k = 0;
  for (std::size_t r = 0; r < kRecallPositions; ++r) {
    double want = static_cast<double>(r + 1) / kRecallPositions;
    while (k < c.recall.size() && c.recall[k] < want - 1e-12) ++k;
    out[r] = k < c.recall.size() ? best[k] : 0.0;
  }
  return out;
}

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

// Interpolated precision sampled at recall k/40, k = 1..40. Undefined (nullopt)
// when there are no ground truths.
inline std::optional<double> ap40(const std::vector<bool>& tp, const std::vector<double>& scores,
                                  std::size_t num_gt) {
  if (tp.size() != scores.size()) throw ContractError("ap40: size mismatch");
  if (num_gt == 0) return std::nullopt;
  std::vector<double> w(tp.size(), 1.0);
  return detail::mean(detail::sample_40(detail::pr_points(tp, scores, w, num_gt)));
}

inline double heading_weight(double err) {
  return std::max(0.0, 1.0 - std::abs(err) / std::numbers::pi);
}

// As ap40, with each TP contributing max(0, 1 - |err|/pi) to precision;
// recall counts TPs unweighted.
inline std::optional<double> aph(const std::vector<bool>& tp, const std::vector<double>& scores,
                                 const std::vector<double>& heading_errors, std::size_t num_gt) {
  if (tp.size() != scores.size() || tp.size() != heading_errors.size()) {
    throw ContractError("aph: size mismatch");
  }
  if (num_gt == 0) return std::nullopt;
  std::vector<double> w(tp.size());
  for (std::size_t i = 0; i < tp.size(); ++i) w[i] = heading_weight(heading_errors[i]);
  return detail::mean(detail::sample_40(detail::pr_points(tp, scores, w, num_gt)));
}

// ----------------------------------------------------------------- reports

struct EvalConfig {
  std::vector<int> classes{kCar, kPedestrian};
  std::map<int, double> iou_threshold{{kCar, 0.7}, {kPedestrian, 0.5}, {kCyclist, 0.5}};
  std::vector<int> difficulties{kEasy, kModerate, kHard};
  IouMode mode = IouMode::k3d;
  bool fold_flip = false;
};

struct EvalCell {
  int cls = 0;
  int difficulty = 0;
  double iou_threshold = 0;
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
  bool evaluable = false;
  double ap = 0, aph = 0;
  std::vector<double> precision;  // the 40 sampled points, empty when not evaluable
};

struct EvalReport {
  std::vector<EvalCell> cells;
  double map = 0;   // mean AP over evaluable cells
  double maph = 0;  // mean APH over evaluable cells
  std::size_t scenes = 0;

  const EvalCell* find(int cls, int difficulty) const {
    for (const auto& c : cells)
      if (c.cls == cls && c.difficulty == difficulty) return &c;
    return nullptr;
  }
};

inline const char* difficulty_name(int d) {
  switch (d) {
    case kEasy: return "easy";
    case kModerate: return "moderate";
    case kHard: return "hard";
    default: return "ignored";
  }
}

// Detections per scene against the scene objects. A gt counts for
// difficulty d when its own difficulty is at most d; harder gts and
// don't-care regions are ignored.
inline EvalReport evaluate_detections(const std::vector<DetectionSet>& dets,
                                      const std::vector<Scene>& scenes, const EvalConfig& cfg) {
  if (scenes.empty()) throw ContractError("evaluate: empty dataset");
  if (dets.size() != scenes.size()) throw ContractError("evaluate: detections per scene mismatch");
  EvalReport rep;
  rep.scenes = scenes.size();
  double sum_ap = 0, sum_aph = 0;
  std::size_t n_eval = 0;
  for (int cls : cfg.classes) {
    auto thr_it = cfg.iou_threshold.find(cls);
    if (thr_it == cfg.iou_threshold.end()) {
      throw ConfigError(std::string("evaluate: no IoU threshold for class ") + class_name(cls));
    }
    for (int diff : cfg.difficulties) {
      std::vector<bool> tp;
      std::vector<double> scores, herr;
      std::size_t num_gt = 0, num_det = 0;
      for (std::size_t s = 0; s < scenes.size(); ++s) {
        std::vector<Box3D> db, gb;
        std::vector<double> ds;
        std::vector<bool> ig;
        for (std::size_t i = 0; i < dets[s].size(); ++i) {
          if (dets[s].classes[i] != cls) continue;
          db.push_back(dets[s].boxes[i]);
          ds.push_back(dets[s].scores[i]);
        }
        for (const Object& o : scenes[s].objects) {
          if (o.dont_care) {
            gb.push_back(o.box);
            ig.push_back(true);
          } else if (o.label == cls) {
            gb.push_back(o.box);
            ig.push_back(o.difficulty > diff);
          }
        }
        auto m = match_dets_to_gts(db, ds, gb, ig, thr_it->second, cfg.mode, cfg.fold_flip);
        num_gt += m.num_gt;
        for (std::size_t i = 0; i < db.size(); ++i) {
          if (m.labels[i] == DetLabel::kIgnored) continue;
          tp.push_back(m.labels[i] == DetLabel::kTruePositive);
          scores.push_back(ds[i]);
          herr.push_back(m.heading_error[i]);
          ++num_det;
        }
      }
      EvalCell cell;
      cell.cls = cls;
      cell.difficulty = diff;
      cell.iou_threshold = thr_it->second;
      cell.num_gt = num_gt;
      cell.num_det = num_det;
      auto a = ap40(tp, scores, num_gt);
      if (a) {
        cell.evaluable = true;
        cell.ap = *a;
        cell.aph = *aph(tp, scores, herr, num_gt);
        std::vector<double> w(tp.size(), 1.0);
        cell.precision = detail::sample_40(detail::pr_points(tp, scores, w, num_gt));
        sum_ap += cell.ap;
        sum_aph += cell.aph;
        ++n_eval;
      }
      rep.cells.push_back(cell);
    }
  }
  if (n_eval > 0) {
    rep.map = sum_ap / static_cast<double>(n_eval);
    rep.maph = sum_aph / static_cast<double>(n_eval);
  }
  return rep;
}

// Ground-truth boxes as score-1 detections.
inline DetectionSet gt_as_detections(const Scene& s) {
  DetectionSet d;
  for (const Object& o : s.objects) {
    if (!o.dont_care) d.push(o.box, 1.0, o.label, -1);
  }
  return d;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"class", class_name(c.cls)},
                     {"difficulty", difficulty_name(c.difficulty)},
                     {"iou_threshold", c.iou_threshold},
                     {"num_gt", c.num_gt},
                     {"num_det", c.num_det},
                     {"evaluable", c.evaluable},
                     {"ap", c.ap},
                     {"aph", c.aph},
                     {"precision", c.precision}});
  }
  return {{"scenes", r.scenes}, {"map", r.map}, {"maph", r.maph}, {"cells", cells}};
}

inline EvalReport report_from_json(const nlohmann::json& j, const std::string& where) {
  try {
    EvalReport r;
    r.scenes = j.at("scenes").get<std::size_t>();
    r.map = j.at("map").get<double>();
    r.maph = j.at("maph").get<double>();
    for (const auto& c : j.at("cells")) {
      EvalCell cell;
      cell.cls = class_from_name(c.at("class").get<std::string>());
      if (cell.cls < 0) throw ParseError(where + ": unknown class in report");
      std::string d = c.at("difficulty").get<std::string>();
      cell.difficulty = d == "easy" ? kEasy : d == "moderate" ? kModerate : d == "hard" ? kHard : -1;
      if (cell.difficulty < 0) throw ParseError(where + ": unknown difficulty '" + d + "'");
      cell.iou_threshold = c.at("iou_threshold").get<double>();
      cell.num_gt = c.at("num_gt").get<std::size_t>();
      cell.num_det = c.at("num_det").get<std::size_t>();
      cell.evaluable = c.at("evaluable").get<bool>();
      cell.ap = c.at("ap").get<double>();
      cell.aph = c.at("aph").get<double>();
      cell.precision = c.at("precision").get<std::vector<double>>();
      r.cells.push_back(cell);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": malformed report (" + e.what() + ")");
  }
}

inline std::string report_to_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "class,difficulty,iou_threshold,num_gt,num_det,evaluable,ap,aph\n";
  for (const auto& c : r.cells) {
    os << class_name(c.cls) << ',' << difficulty_name(c.difficulty) << ',' << c.iou_threshold
       << ',' << c.num_gt << ',' << c.num_det << ',' << (c.evaluable ? 1 : 0) << ',' << c.ap
       << ',' << c.aph << '\n';
  }
  return os.str();
}

}  // namespace fgf
