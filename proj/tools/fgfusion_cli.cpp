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
// fgfusion command-line entry point. Exit codes: 0 success, 1 other failure,
// 2 configuration error, 3 I/O or parse error, 4 numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fgfusion/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"fgfusion: camera and lidar fusion 3D detection toolkit"};
  app.require_subcommand(1);
  std::string workdir = ".";
  app.add_option("--workdir", workdir, "Root for every relative path")->check(CLI::ExistingDirectory);

  std::string config, out, data, checkpoint, frame, mode = "fused", axes, report;
  std::optional<std::size_t> count;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;

  auto* gen = app.add_subcommand("gen", "Write a synthetic dataset in KITTI layout");
  gen->add_option("--config", config, "Run config (JSON); defaults when omitted");
  gen->add_option("--out", out, "Dataset directory")->required();
  gen->add_option("--count", count, "Number of scenes (overrides data.synthetic.num_scenes)");

  auto* train = app.add_subcommand("train", "Run both training stages");
  train->add_option("--config", config, "Run config (JSON)");
  train->add_option("--data", data, "KITTI-layout directory; the configured synthetic set when omitted");
  train->add_option("--out", out, "Run directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file, or oracle:gt")->required();
  eval->add_option("--data", data, "KITTI-layout directory; the configured synthetic set when omitted");
  eval->add_option("--config", config, "Run config; the checkpoint's config.json when omitted");
  eval->add_option("--mode", mode, "fused or lidar")->check(CLI::IsMember({"fused", "lidar"}));
  eval->add_option("--out", out, "Report path (JSON; a CSV is written alongside)")
      ->default_val("report.json");

  auto* infer = app.add_subcommand("infer", "Detect objects in one KITTI frame");
  infer->add_option("--checkpoint", checkpoint, "Checkpoint file, or oracle:gt")->required();
  infer->add_option("--frame", frame, "Path to velodyne/<id>.bin")->required();
  infer->add_option("--config", config, "Run config; the checkpoint's config.json when omitted");
  infer->add_option("--mode", mode, "fused or lidar")->check(CLI::IsMember({"fused", "lidar"}));
  infer->add_option("--out", out, "Result file; <id>.txt when omitted");

  auto* ablate = app.add_subcommand("ablate", "Sweep components and fusion depth");
  ablate->add_option("--config", config, "Base run config (JSON)");
  ablate->add_option("--axes", axes, "Comma list of MSF, AP, AN, N; empty for the baseline row");
  ablate->add_option("--seeds", seeds, "Seeds to repeat every cell with; the config seed when omitted")
      ->delimiter(',');
  ablate->add_option("--jobs", jobs, "Cells to run concurrently")->check(CLI::PositiveNumber);
  ablate->add_option("--out", out, "Output directory")->default_val("ablation");

  auto* plot = app.add_subcommand("plot", "Render an evaluation report or ablation table as SVG");
  plot->add_option("--report", report, "report.json or ablation.json")->required();
  plot->add_option("--out", out, "Output directory")->default_val("plots");

  CLI11_PARSE(app, argc, argv);

  fgf::cli::Context ctx;
  ctx.workdir = workdir;
  try {
    if (*gen) {
      fgf::cli::cmd_gen(ctx, config, out, count);
    } else if (*train) {
      fgf::cli::cmd_train(ctx, config, data, out);
    } else if (*eval) {
      fgf::cli::cmd_eval(ctx, checkpoint, data, config, out, mode);
    } else if (*infer) {
      fgf::cli::cmd_infer(ctx, checkpoint, frame, config, out, mode);
    } else if (*ablate) {
      fgf::cli::cmd_ablate(ctx, config, axes, out, seeds, jobs);
    } else if (*plot) {
      fgf::cli::cmd_plot(ctx, report, out);
    }
  } catch (const fgf::Error& e) {
    std::cerr << "fgfusion: error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "fgfusion: error: " << e.what() << "\n";
    return fgf::kExitFailure;
  }
  return 0;
}
