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

// Batch commands behind the fgfusion executable. Relative paths resolve
// against the work directory; every output file is overwritten, never
// appended to.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fgfusion/ablation.hpp"
#include "fgfusion/datasets.hpp"
#include "fgfusion/pipeline.hpp"
#include "fgfusion/plot.hpp"

namespace fgf::cli {

namespace fs = std::filesystem;

// Checkpoint argument that evaluates ground truth as score-1 detections.
inline constexpr const char* kOracleCheckpoint = "oracle:gt";

struct Context {
  fs::path workdir = ".";
  std::ostream* log = &std::cout;

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : workdir / path;
  }
  std::ostream& out() const { return *log; }
};

namespace detail {

inline void write_json(const fs::path& p, const nlohmann::json& j) {
  write_file(p.string(), j.dump(2) + "\n");
}

inline nlohmann::json read_json(const fs::path& p) {
  std::string text = read_file(p.string());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory '" + p.string() + "'");
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// Config file (defaults when empty) with the FGF_SEED override applied.
inline RunConfig load_run_config(const Context& ctx, const std::string& path) {
  RunConfig c = path.empty() ? RunConfig{} : load_config(ctx.resolve(path).string());
  apply_seed_override(c);
  return c;
}

// KITTI-layout directory when given, else the configured synthetic set.
inline std::vector<Scene> load_scenes(const Context& ctx, const RunConfig& c,
                                      const std::string& data) {
  if (data.empty()) return generate_dataset(c.data);
  return load_kitti_dir(ctx.resolve(data).string(), c.data.difficulty);
}

// ------------------------------------------------------------------- gen

inline std::size_t cmd_gen(const Context& ctx, const std::string& config, const std::string& out,
                           std::optional<std::size_t> count) {
  RunConfig c = load_run_config(ctx, config);
  SyntheticConfig sc = c.data;
  if (count) sc.num_scenes = *count;
  fs::path root = ctx.resolve(out);
  for (const char* d : {"velodyne", "image_2", "calib", "label_2"}) detail::ensure_dir(root / d);
  if (sc.num_scenes > 0) sc.validate();
  for (std::size_t i = 0; i < sc.num_scenes; ++i) {
    save_kitti_frame(root.string(), generate_scene(sc, i).scene);
  }
  ctx.out() << "gen: wrote " << sc.num_scenes << " frames to " << root.string() << "\n";
  return sc.num_scenes;
}

// ----------------------------------------------------------------- train

inline nlohmann::json step_record(const StepLog& r) {
  return {{"stage", r.stage}, {"step", r.step},          {"total", r.total},
          {"lr", r.lr},       {"loss", r.loss},          {"grad_norm", r.grad_norm},
          {"scene", r.scene}, {"losses", r.parts}};
}

inline nlohmann::json checkpoint_entry(const fs::path& p) {
  return {{"path", p.filename().string()}, {"fnv1a64", detail::hex64(fnv1a64(read_file(p.string())))}};
}

// Trains stage 1 then stage 2 and writes stage1.fgf, stage2.fgf, config.json,
// train_log.jsonl and manifest.json under `out`. On divergence the last good
// weights of the failing stage are saved before the error propagates.
inline nlohmann::json cmd_train(const Context& ctx, const std::string& config,
                                const std::string& data, const std::string& out) {
  auto t0 = std::chrono::steady_clock::now();
  RunConfig c = load_run_config(ctx, config);
  fs::path dir = ctx.resolve(out);
  detail::ensure_dir(dir);
  auto scenes = load_scenes(ctx, c, data);
  if (scenes.empty()) throw ConfigError("train: the dataset has no scenes");

  nlohmann::json manifest;
  manifest["config"] = config_to_json(c);
  manifest["seed"] = c.seed;
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& s : scenes) ids.push_back(s.id);
  manifest["data"] = {{"source", data.empty() ? "synthetic" : data}, {"scenes", ids}};
  detail::write_json(dir / "config.json", config_to_json(c));

  std::string log_text;
  auto log = [&](const StepLog& r) {
    log_text += step_record(r).dump() + "\n";
    if (r.step % 20 == 0 || r.step + 1 == r.total) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "train: stage %d step %zu/%zu loss %.4f lr %.2e\n", r.stage,
                    r.step + 1, r.total, r.loss, r.lr);
      ctx.out() << buf << std::flush;
    }
  };
  Model<float> model(c.model, c.seed);
  nlohmann::json timings;
  int stage = 1;
  try {
    auto t1 = std::chrono::steady_clock::now();
    auto r1 = train_stage1(model, scenes, c.train, log);
    timings["stage1_s"] = detail::seconds_since(t1);
    save_checkpoint(model.params(), (dir / "stage1.fgf").string());
    manifest["checkpoints"]["stage1"] = checkpoint_entry(dir / "stage1.fgf");
    manifest["steps"]["stage1"] = r1.steps;

    stage = 2;
    auto t2 = std::chrono::steady_clock::now();
    auto r2 = train_stage2(model, scenes, c.train, log);
    timings["stage2_s"] = detail::seconds_since(t2);
    save_checkpoint(model.params(), (dir / "stage2.fgf").string());
    manifest["checkpoints"]["stage2"] = checkpoint_entry(dir / "stage2.fgf");
    manifest["steps"]["stage2"] = r2.steps;
  } catch (const TrainingDiverged& e) {
    fs::path p = dir / ("stage" + std::to_string(stage) + "_last_good.fgf");
    save_checkpoint(model.params(), p.string());
    write_file((dir / "train_log.jsonl").string(), log_text);
    manifest["error"] = e.what();
    manifest["checkpoints"]["last_good"] = checkpoint_entry(p);
    detail::write_json(dir / "manifest.json", manifest);
    throw;
  }
  write_file((dir / "train_log.jsonl").string(), log_text);

  auto t3 = std::chrono::steady_clock::now();
  Model<float> deployed = model.detach_aux();
  EvalReport lidar = evaluate_model(deployed, scenes, Mode::kLidarOnly, c.postprocess, c.eval);
  EvalReport fused = evaluate_model(deployed, scenes, Mode::kFused, c.postprocess, c.eval);
  timings["eval_s"] = detail::seconds_since(t3);
  timings["total_s"] = detail::seconds_since(t0);
  manifest["reports"] = {{"train_lidar_only", report_to_json(lidar)},
                         {"train_fused", report_to_json(fused)}};
  manifest["timings"] = timings;
  detail::write_json(dir / "manifest.json", manifest);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "train: done in %.1f s, training-set mAP %.4f (lidar-only %.4f)\n",
                timings["total_s"].get<double>(), fused.map, lidar.map);
  ctx.out() << buf;
  return manifest;
}

// ------------------------------------------------------------ eval / infer

// Model config from --config, else the config.json written next to the
// checkpoint, else defaults.
inline RunConfig checkpoint_config(const Context& ctx, const std::string& checkpoint,
                                   const std::string& config) {
  if (!config.empty() || checkpoint == kOracleCheckpoint) return load_run_config(ctx, config);
  fs::path sibling = ctx.resolve(checkpoint).parent_path() / "config.json";
  if (fs::exists(sibling)) {
    RunConfig c = config_from_json(detail::read_json(sibling));
    apply_seed_override(c);
    return c;
  }
  return load_run_config(ctx, "");
}

// Auxiliary heads are not built; their checkpoint records are skipped.
inline Model<float> load_model(const Context& ctx, const RunConfig& c, const std::string& checkpoint) {
  ModelConfig mc = c.model;
  mc.lidar.aux = false;
  Model<float> m(mc, c.seed);
  load_checkpoint_into(m.params(), read_checkpoint(ctx.resolve(checkpoint).string()), true);
  return m;
}

inline Mode parse_mode(const std::string& s) {
  if (s == "fused") return Mode::kFused;
  if (s == "lidar") return Mode::kLidarOnly;
  throw ConfigError("--mode must be 'fused' or 'lidar', got '" + s + "'");
}

// Writes `out` (JSON) and the same path with a .csv extension.
inline EvalReport cmd_eval(const Context& ctx, const std::string& checkpoint,
                           const std::string& data, const std::string& config,
                           const std::string& out, const std::string& mode = "fused") {
  RunConfig c = checkpoint_config(ctx, checkpoint, config);
  Mode m = parse_mode(mode);
  auto scenes = load_scenes(ctx, c, data);
  if (scenes.empty()) throw ConfigError("eval: the dataset has no scenes");
  EvalReport rep;
  if (checkpoint == kOracleCheckpoint) {
    std::vector<DetectionSet> dets;
    for (const auto& s : scenes) dets.push_back(gt_as_detections(s));
    rep = evaluate_detections(dets, scenes, c.eval);
  } else {
    rep = evaluate_model(load_model(ctx, c, checkpoint), scenes, m, c.postprocess, c.eval);
  }
  fs::path p = ctx.resolve(out);
  if (p.has_parent_path()) detail::ensure_dir(p.parent_path());
  detail::write_json(p, report_to_json(rep));
  fs::path csv = p;
  csv.replace_extension(".csv");
  write_file(csv.string(), report_to_csv(rep));
  char buf[160];
  for (const auto& cell : rep.cells) {
    std::snprintf(buf, sizeof(buf), "eval: %-10s %-8s IoU %.2f  AP %.4f  APH %.4f  (%zu gt)%s\n",
                  class_name(cell.cls), difficulty_name(cell.difficulty), cell.iou_threshold,
                  cell.ap, cell.aph, cell.num_gt, cell.evaluable ? "" : "  skipped");
    ctx.out() << buf;
  }
  std::snprintf(buf, sizeof(buf), "eval: mAP %.4f  mAPH %.4f over %zu scenes\n", rep.map, rep.maph,
                rep.scenes);
  ctx.out() << buf;
  return rep;
}

// `frame` is <root>/velodyne/<id>.bin; image, calib and (for the oracle)
// labels come from the sibling KITTI directories.
inline DetectionSet cmd_infer(const Context& ctx, const std::string& checkpoint,
                              const std::string& frame, const std::string& config,
                              const std::string& out, const std::string& mode = "fused") {
  RunConfig c = checkpoint_config(ctx, checkpoint, config);
  Mode m = parse_mode(mode);
  fs::path vel = ctx.resolve(frame);
  fs::path root = vel.parent_path().parent_path();
  std::string id = vel.stem().string();
  fs::path label = root / "label_2" / (id + ".txt");
  bool oracle = checkpoint == kOracleCheckpoint;
  Scene s = load_kitti_frame(vel.string(), (root / "image_2" / (id + ".png")).string(),
                             (root / "calib" / (id + ".txt")).string(),
                             oracle && fs::exists(label) ? label.string() : std::string(),
                             c.data.difficulty);
  DetectionSet dets = oracle ? gt_as_detections(s)
                             : predict(load_model(ctx, c, checkpoint), s, m, c.postprocess);
  fs::path p = ctx.resolve(out.empty() ? id + ".txt" : out);
  if (p.has_parent_path()) detail::ensure_dir(p.parent_path());
  emit_kitti_results(dets, s.calib, p.string());
  ctx.out() << "infer: " << dets.size() << " detections for frame " << id << " -> " << p.string()
            << "\n";
  return dets;
}

// ---------------------------------------------------------------- ablate

inline std::vector<AblationRow> cmd_ablate(const Context& ctx, const std::string& config,
                                           const std::string& axes, const std::string& out,
                                           std::vector<std::uint64_t> seeds = {},
                                           std::size_t jobs = 1) {
  RunConfig c = load_run_config(ctx, config);
  auto ax = parse_axes(axes);
  auto cells = ablation_cells(c, ax);  // validates before any training
  if (seeds.empty()) seeds.push_back(c.seed);
  ctx.out() << "ablate: " << cells.size() << " cells x " << seeds.size() << " seeds\n";
  auto rows = run_ablation(c, ax, seeds, [&](const AblationRow& r) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "ablate: %-8s seed %llu  mAP %.4f  (%.1f s)\n", r.name.c_str(),
                  static_cast<unsigned long long>(r.seed), r.map, r.seconds);
    ctx.out() << buf << std::flush;
  }, jobs);
  fs::path dir = ctx.resolve(out);
  detail::ensure_dir(dir);
  nlohmann::json j = ablation_to_json(rows);
  j["config"] = config_to_json(c);
  j["axes"] = ax;
  detail::write_json(dir / "ablation.json", j);
  write_file((dir / "ablation.csv").string(), ablation_to_csv(rows));
  std::string md = ablation_to_markdown(rows);
  write_file((dir / "ablation.md").string(), md);
  ctx.out() << md;
  return rows;
}

// ------------------------------------------------------------------ plot

// An evaluation report gives one pr_<class>.svg per evaluable class; an
// ablation table gives ablation_map.svg. Returns the files written.
inline std::vector<fs::path> cmd_plot(const Context& ctx, const std::string& report,
                                      const std::string& out) {
  fs::path src = ctx.resolve(report);
  nlohmann::json j = detail::read_json(src);
  std::vector<std::pair<std::string, std::string>> files;
  if (j.is_object() && j.contains("ablation")) {
    auto rows = ablation_from_json(j, src.string());
    if (!rows.empty()) {
      std::vector<Bar> bars;
      for (const auto& r : rows) bars.push_back({r.name + " s" + std::to_string(r.seed), r.map});
      files.emplace_back("ablation_map.svg", bar_chart_svg("Ablation: training-set mAP", "mAP", bars));
    }
  } else {
    for (auto& [cls, svg] : pr_curve_svgs(report_from_json(j, src.string()))) {
      files.emplace_back("pr_" + cls + ".svg", std::move(svg));
    }
  }
  std::vector<fs::path> written;
  if (files.empty()) {
    ctx.out() << "plot: nothing to plot in " << src.string() << "\n";
    return written;
  }
  fs::path dir = ctx.resolve(out);
  detail::ensure_dir(dir);
  for (const auto& [name, svg] : files) {
    write_file((dir / name).string(), svg);
    written.push_back(dir / name);
    ctx.out() << "plot: wrote " << (dir / name).string() << "\n";
  }
  return written;
}

}  // namespace fgf::cli
