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

// Component and depth sweeps. Every cell trains both stages from the same
// seed on the same synthetic set and reports training-set mAP.
//
// Axes: MSF (multi-scale fusion; off means N = 1), AP (camera attention
// pyramid), AN (auxiliary network) and N (fusion depth 1..4). The full model
// is the first row unless N is the only axis; component rows follow in axis
// order, then depth rows in ascending N. No axes gives the full row alone.

#include <chrono>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fgfusion/pipeline.hpp"

namespace fgf {

inline const std::vector<std::string>& ablation_axis_names() {
  static const std::vector<std::string> kAxes{"MSF", "AP", "AN", "N"};
  return kAxes;
}

// Comma-separated axis list; empty means baseline only.
inline std::vector<std::string> parse_axes(const std::string& spec) {
  std::vector<std::string> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    auto b = tok.find_first_not_of(" \t"), e = tok.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    tok = tok.substr(b, e - b + 1);
    const auto& known = ablation_axis_names();
    if (std::find(known.begin(), known.end(), tok) == known.end()) {
      throw ConfigError("ablate: unknown axis '" + tok + "' (expected MSF, AP, AN or N)");
    }
    if (std::find(out.begin(), out.end(), tok) == out.end()) out.push_back(tok);
  }
  return out;
}

struct AblationCell {
  std::string name;
  RunConfig config;
};

inline std::vector<AblationCell> ablation_cells(const RunConfig& base,
                                                const std::vector<std::string>& axes) {
  auto has = [&](const char* a) { return std::find(axes.begin(), axes.end(), a) != axes.end(); };
  std::vector<AblationCell> cells;
  if (!(axes.size() == 1 && has("N"))) cells.push_back({"full", base});
  if (has("MSF")) {
    RunConfig c = base;
    c.model.fused_levels = 1;
    cells.push_back({"w/o MSF", c});
  }
  if (has("AP")) {
    RunConfig c = base;
    c.model.camera.attention = false;
    cells.push_back({"w/o AP", c});
  }
  if (has("AN")) {
    RunConfig c = base;
    c.model.lidar.aux = false;
    cells.push_back({"w/o AN", c});
  }
  if (has("N")) {
    if (base.model.lidar.stages < 4) {
      throw ConfigError("ablate: axis N sweeps N = 1..4 and needs model.lidar_stages >= 4, got " +
                        std::to_string(base.model.lidar.stages));
    }
    for (std::size_t n = 1; n <= 4; ++n) {
      RunConfig c = base;
      c.model.fused_levels = n;
      cells.push_back({"N=" + std::to_string(n), c});
    }
  }
  return cells;
}

struct AblationRow {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t fused_levels = 0;
  bool attention = true, aux = true;
  double map = 0, maph = 0;
  double seconds = 0;
};

using AblationCallback = std::function<void(const AblationRow&)>;

inline AblationRow run_ablation_cell(const AblationCell& cell, std::uint64_t seed) {
  RunConfig c = cell.config;
  c.seed = seed;
  c.train.seed = seed;
  auto t0 = std::chrono::steady_clock::now();
  auto data = generate_dataset(c.data);
  Model<float> model(c.model, c.seed);
  train_two_stage(model, data, c.train);
  auto rep = evaluate_model(model.detach_aux(), data, Mode::kFused, c.postprocess, c.eval);
  AblationRow row;
  row.name = cell.name;
  row.seed = seed;
  row.fused_levels = c.model.fused_levels;
  row.attention = c.model.camera.attention;
  row.aux = c.model.lidar.aux;
  row.map = rep.map;
  row.maph = rep.maph;
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

// Rows are ordered seed-major whatever `jobs` is; cells are independent, so
// running them concurrently does not change any result.
inline std::vector<AblationRow> run_ablation(const RunConfig& base,
                                             const std::vector<std::string>& axes,
                                             const std::vector<std::uint64_t>& seeds,
                                             const AblationCallback& on_row = {},
                                             std::size_t jobs = 1) {
  auto cells = ablation_cells(base, axes);
  std::size_t n = cells.size() * seeds.size();
  std::vector<AblationRow> rows(n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      rows[i] = run_ablation_cell(cells[i % cells.size()], seeds[i / cells.size()]);
      if (on_row) on_row(rows[i]);
    }
    return rows;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        rows[i] = run_ablation_cell(cells[i % cells.size()], seeds[i / cells.size()]);
        std::lock_guard<std::mutex> lock(mu);
        if (on_row) on_row(rows[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return rows;
}

inline nlohmann::json ablation_to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"name", r.name},
                   {"seed", r.seed},
                   {"fused_levels", r.fused_levels},
                   {"attention", r.attention},
                   {"aux", r.aux},
                   {"map", r.map},
                   {"maph", r.maph},
                   {"seconds", r.seconds}});
  }
  return {{"ablation", out}};
}

inline std::vector<AblationRow> ablation_from_json(const nlohmann::json& j, const std::string& where) {
  std::vector<AblationRow> rows;
  try {
    for (const auto& e : j.at("ablation")) {
      AblationRow r;
      r.name = e.at("name").get<std::string>();
      r.seed = e.at("seed").get<std::uint64_t>();
      r.fused_levels = e.at("fused_levels").get<std::size_t>();
      r.attention = e.at("attention").get<bool>();
      r.aux = e.at("aux").get<bool>();
      r.map = e.at("map").get<double>();
      r.maph = e.at("maph").get<double>();
      r.seconds = e.at("seconds").get<double>();
      rows.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": malformed ablation table: " + e.what());
  }
  return rows;
}

inline std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "name,seed,fused_levels,attention,aux,map,maph,seconds\n";
  for (const auto& r : rows) {
    os << r.name << ',' << r.seed << ',' << r.fused_levels << ',' << r.attention << ',' << r.aux
       << ',' << r.map << ',' << r.maph << ',' << r.seconds << '\n';
  }
  return os.str();
}

inline std::string ablation_to_markdown(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "| cell | seed | N | AP | AN | mAP | mAPH |\n|---|---|---|---|---|---|---|\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.4f | %.4f", r.map, r.maph);
    os << "| " << r.name << " | " << r.seed << " | " << r.fused_levels << " | "
       << (r.attention ? "on" : "off") << " | " << (r.aux ? "on" : "off") << " | " << buf << " |\n";
  }
  return os.str();
}

// True when the N=1..4 rows of `seed` have non-decreasing mAP.
inline bool depth_trend_nondecreasing(const std::vector<AblationRow>& rows, std::uint64_t seed) {
  std::vector<double> m;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (const auto& r : rows) {
      if (r.seed == seed && r.name == "N=" + std::to_string(n)) m.push_back(r.map);
    }
  }
  if (m.size() != 4) return false;
  for (std::size_t i = 1; i < m.size(); ++i)
    if (m[i] < m[i - 1]) return false;
  return true;
}

}  // namespace fgf
