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
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "fgfusion/datasets.hpp"
#include "test_util.hpp"

namespace fgf {
namespace {

namespace fs = std::filesystem;

const std::string kFixtures = FGF_FIXTURE_DIR;
using testing::TempDir;

Calibration testing_calib() { return synthetic_calibration(SyntheticConfig{}); }

void write_text(const std::string& path, const std::string& s) { std::ofstream(path) << s; }

void expect_box_near(const Box3D& a, const Box3D& b, double tol) {
  EXPECT_NEAR(a.x, b.x, tol);
  EXPECT_NEAR(a.y, b.y, tol);
  EXPECT_NEAR(a.z, b.z, tol);
  EXPECT_NEAR(a.w, b.w, tol);
  EXPECT_NEAR(a.l, b.l, tol);
  EXPECT_NEAR(a.h, b.h, tol);
  EXPECT_NEAR(std::abs(normalize_angle(a.heading - b.heading)), 0.0, tol);
}

// ----------------------------------------------------------------- difficulty

TEST(Difficulty, ThresholdsPickEasiestLevel) {
  DifficultyThresholds t;
  EXPECT_EQ(assign_difficulty(45, 0, 0.1, t), kEasy);
  EXPECT_EQ(assign_difficulty(30, 0, 0.1, t), kModerate);
  EXPECT_EQ(assign_difficulty(45, 1, 0.1, t), kModerate);
  EXPECT_EQ(assign_difficulty(45, 0, 0.4, t), kHard);
  EXPECT_EQ(assign_difficulty(20, 0, 0.0, t), kIgnored);
  EXPECT_EQ(assign_difficulty(45, 3, 0.0, t), kIgnored);
}

// ------------------------------------------------------------------ synthetic

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticConfig c;
  c.seed = 12;
  auto a = generate_scene(c, 3).scene, b = generate_scene(c, 3).scene;
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i].x, b.points[i].x);
  EXPECT_EQ(a.image, b.image);
  c.seed = 13;
  EXPECT_NE(generate_scene(c, 3).scene.image, a.image);
}

TEST(Synthetic, SurfacePointsWithinNoiseBand) {
  SyntheticConfig c;
  c.seed = 4;
  for (std::size_t i = 0; i < 10; ++i) {
    auto g = generate_scene(c, i);
    ASSERT_EQ(g.surface_begin.size(), g.scene.objects.size());
    for (std::size_t k = 0; k < g.scene.objects.size(); ++k) {
      const Box3D& b = g.scene.objects[k].box;
      EXPECT_GT(g.surface_count[k], 0u);
      std::size_t strictly_inside = 0;
      for (std::size_t j = 0; j < g.surface_count[k]; ++j) {
        const Point& p = g.scene.points[g.surface_begin[k] + j];
        EXPECT_TRUE(box_contains(b, p.x, p.y, p.z, 3 * c.noise_sigma + 1e-5));
        strictly_inside += box_contains(b, p.x, p.y, p.z);
      }
      EXPECT_GT(strictly_inside, 0u);
    }
  }
}

TEST(Synthetic, BoxesInRangeVisibleAndSeparated) {
  SyntheticConfig c;
  c.seed = 9;
  c.boxes_min = 4;
  c.boxes_max = 4;
  for (std::size_t i = 0; i < 10; ++i) {
    auto g = generate_scene(c, i);
    EXPECT_EQ(g.scene.objects.size() + g.unplaced, 4u);
    const auto& objs = g.scene.objects;
    for (std::size_t a = 0; a < objs.size(); ++a) {
      const Box3D& b = objs[a].box;
      EXPECT_TRUE(c.range.contains(b.x, b.y, b.z));
      EXPECT_NEAR(b.bottom(), c.ground_z, 1e-12);
      std::array<double, 4> bbox;
      double trunc;
      EXPECT_TRUE(project_box_2d(b, g.scene.calib, bbox, trunc));
      EXPECT_LT(trunc, 1e-9);
      for (std::size_t k = a + 1; k < objs.size(); ++k) {
        EXPECT_DOUBLE_EQ(bev_intersection_area(b, objs[k].box), 0.0);
      }
    }
  }
}

TEST(Synthetic, SilhouetteCarriesClassColor) {
  SyntheticConfig c;
  c.seed = 2;
  c.boxes_min = c.boxes_max = 1;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    auto s = generate_scene(c, i).scene;
    if (s.objects.empty()) continue;
    const Object& o = s.objects[0];
    auto p = project_point(s.calib.projection(), s.calib.height, s.calib.width, o.box.x, o.box.y,
                           o.box.z);
    auto r = static_cast<std::size_t>(p.v), col = static_cast<std::size_t>(p.u);
    std::size_t h = s.image_height, w = s.image_width;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      EXPECT_NEAR(s.image[(ch * h + r) * w + col], kClassColors[o.label][ch], 0.051);
    }
    ++checked;
  }
  EXPECT_GT(checked, 0u);
}

TEST(Synthetic, AmbiguousModeSharesShapes) {
  SyntheticConfig c;
  c.seed = 6;
  c.ambiguous = true;
  c.num_scenes = 20;
  double sum[2][3] = {}, n[2] = {};
  for (const auto& s : generate_dataset(c)) {
    for (const auto& o : s.objects) {
      sum[o.label][0] += o.box.w, sum[o.label][1] += o.box.l, sum[o.label][2] += o.box.h;
      n[o.label] += 1;
    }
  }
  ASSERT_GT(n[0], 0);
  ASSERT_GT(n[1], 0);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(sum[0][k] / n[0], sum[1][k] / n[1], 0.1);
}

TEST(Synthetic, InvalidConfigRejected) {
  SyntheticConfig c;
  c.boxes_min = 5;
  c.boxes_max = 2;
  EXPECT_THROW(generate_scene(c, 0), ConfigError);
}

// ---------------------------------------------------------------- file round trips

TEST(Velodyne, RoundTripAndTruncatedFile) {
  TempDir d;
  SyntheticConfig c;
  auto s = generate_scene(c, 0).scene;
  write_velodyne(d.file("a.bin"), s.points);
  auto back = read_velodyne(d.file("a.bin"));
  ASSERT_EQ(back.size(), s.points.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].x, s.points[i].x);
    EXPECT_EQ(back[i].intensity, s.points[i].intensity);
  }
  write_text(d.file("bad.bin"), "0123456789");
  EXPECT_THROW(read_velodyne(d.file("bad.bin")), ParseError);
  EXPECT_THROW(read_velodyne(d.file("missing.bin")), IoError);
}

TEST(Png, RoundTripWithinQuantisation) {
  TempDir d;
  SyntheticConfig c;
  auto s = generate_scene(c, 1).scene;
  write_png(d.file("a.png"), s.image, s.image_height, s.image_width);
  auto img = read_png(d.file("a.png"));
  ASSERT_EQ(img.height, s.image_height);
  ASSERT_EQ(img.width, s.image_width);
  for (std::size_t i = 0; i < img.chw.size(); ++i) EXPECT_NEAR(img.chw[i], s.image[i], 0.5 / 255 + 1e-6);
  write_text(d.file("b.png"), "not an image");
  EXPECT_THROW(read_png(d.file("b.png")), ParseError);
}

TEST(Calib, FixtureLoadsAndRoundTrips) {
  TempDir d;
  Calibration c = read_calib(kFixtures + "/calib.txt", 375, 1242);
  c.validate();
  EXPECT_DOUBLE_EQ(c.intrinsics(0, 0), 721.5377);
  EXPECT_DOUBLE_EQ(c.lidar_to_cam(2, 3), -0.2717806);
  EXPECT_DOUBLE_EQ(c.rectification(1, 1), 0.9999421);
  write_calib(d.file("c.txt"), c);
  Calibration b = read_calib(d.file("c.txt"), 375, 1242);
  EXPECT_LT((b.intrinsics - c.intrinsics).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((b.lidar_to_cam - c.lidar_to_cam).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((b.rectification - c.rectification).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Calib, MissingKeyAndMalformedLine) {
  TempDir d;
  write_text(d.file("a.txt"), "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\n");
  EXPECT_THROW(read_calib(d.file("a.txt"), 10, 10), SchemaError);
  write_text(d.file("b.txt"), "P2 1 2 3\n");
  EXPECT_THROW(read_calib(d.file("b.txt"), 10, 10), ParseError);
  write_text(d.file("c.txt"), "P2: 1 0 0 x 0 1 0 0 0 0 1 0\n");
  EXPECT_THROW(read_calib(d.file("c.txt"), 10, 10), ParseError);
}

TEST(Labels, FixtureTypesAndDifficulty) {
  Calibration c = read_calib(kFixtures + "/calib.txt", 375, 1242);
  auto objs = read_labels(kFixtures + "/label.txt", c);
  ASSERT_EQ(objs.size(), 5u);
  EXPECT_EQ(objs[0].label, kPedestrian);
  EXPECT_EQ(objs[0].difficulty, kEasy);
  EXPECT_EQ(objs[1].label, kCar);
  EXPECT_EQ(objs[1].difficulty, kIgnored);  // 21.6 px tall
  EXPECT_EQ(objs[2].difficulty, kHard);     // truncation 0.47
  EXPECT_TRUE(objs[3].dont_care);           // Van
  EXPECT_TRUE(objs[4].dont_care);
  // The pedestrian stands ~8.4 m ahead of the camera.
  EXPECT_NEAR(objs[0].box.x, 8.41 + 0.27, 0.1);
  EXPECT_NEAR(objs[0].box.h, 1.89, 1e-12);
}

TEST(Labels, RoundTripWithinTolerance) {
  TempDir d;
  SyntheticConfig sc;
  sc.num_scenes = 5;
  Calibration fixture = read_calib(kFixtures + "/calib.txt", 375, 1242);
  for (auto s : generate_dataset(sc)) {
    for (const Calibration& c : {s.calib, fixture}) {
      s.calib = c;
      write_labels(d.file("l.txt"), s);
      auto back = read_labels(d.file("l.txt"), c, sc.difficulty);
      ASSERT_EQ(back.size(), s.objects.size());
      for (std::size_t i = 0; i < back.size(); ++i) {
        expect_box_near(back[i].box, s.objects[i].box, 1e-4);
        EXPECT_EQ(back[i].label, s.objects[i].label);
      }
    }
  }
}

TEST(Labels, MalformedLinesNameFileAndLine) {
  TempDir d;
  write_text(d.file("l.txt"), "Car 0 0 0 1 2 3 4 1.5 1.6 3.9 1 1 10 0\nCar 0 0 0 1 2 3\n");
  try {
    read_labels(d.file("l.txt"), testing_calib());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("l.txt:2"), std::string::npos) << e.what();
  }
  write_text(d.file("m.txt"), "Car 0 0.5 0 1 2 3 4 1.5 1.6 3.9 1 1 10 0\n");
  EXPECT_THROW(read_labels(d.file("m.txt"), testing_calib()), ParseError);
}

TEST(Results, FixtureLoadsWithScores) {
  Calibration c = read_calib(kFixtures + "/calib.txt", 375, 1242);
  auto dets = load_kitti_results(kFixtures + "/result.txt", c);
  ASSERT_EQ(dets.size(), 3u);
  EXPECT_EQ(dets.classes, (std::vector<int>{kCar, kPedestrian, kCyclist}));
  EXPECT_DOUBLE_EQ(dets.scores[0], 0.93);
  EXPECT_DOUBLE_EQ(dets.scores[2], 0.25);
}

TEST(Results, FuzzedSetsRoundTrip) {
  TempDir d;
  Rng rng(77);
  SyntheticConfig sc;
  Calibration fixture = read_calib(kFixtures + "/calib.txt", 375, 1242);
  Calibration synth = synthetic_calibration(sc);
  for (int trial = 0; trial < 1000; ++trial) {
    const Calibration& c = trial % 2 ? fixture : synth;
    DetectionSet dets;
    std::size_t n = rng.below(6);
    for (std::size_t i = 0; i < n; ++i) {
      Box3D b{rng.uniform(0, 70), rng.uniform(-40, 40), rng.uniform(-3, 1), rng.uniform(0.3, 3),
              rng.uniform(0.3, 6), rng.uniform(0.5, 3), rng.uniform(-std::numbers::pi, std::numbers::pi)};
      dets.push(b, rng.uniform(), static_cast<int>(rng.below(3)));
    }
    emit_kitti_results(dets, c, d.file("r.txt"));
    auto back = load_kitti_results(d.file("r.txt"), c);
    ASSERT_EQ(back.size(), n);
    for (std::size_t i = 0; i < n; ++i) {
      expect_box_near(back.boxes[i], dets.boxes[i], 1e-4);
      EXPECT_NEAR(back.scores[i], dets.scores[i], 1e-4);
      EXPECT_EQ(back.classes[i], dets.classes[i]);
    }
  }
}

TEST(Results, EmptySetGivesEmptyFileAndBadClassRejected) {
  TempDir d;
  emit_kitti_results({}, testing_calib(), d.file("r.txt"));
  EXPECT_EQ(fs::file_size(d.file("r.txt")), 0u);
  EXPECT_TRUE(load_kitti_results(d.file("r.txt"), testing_calib()).empty());
  write_text(d.file("s.txt"), "Truck -1 -1 0 0 0 1 1 1 1 1 0 0 10 0 0.5\n");
  EXPECT_THROW(load_kitti_results(d.file("s.txt"), testing_calib()), ParseError);
}

TEST(KittiDir, SaveAndLoadFrames) {
  TempDir d;
  SyntheticConfig sc;
  sc.num_scenes = 3;
  auto scenes = generate_dataset(sc);
  for (const auto& s : scenes) save_kitti_frame(d.path().string(), s);
  auto back = load_kitti_dir(d.path().string(), sc.difficulty);
  ASSERT_EQ(back.size(), scenes.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, scenes[i].id);
    EXPECT_EQ(back[i].points.size(), scenes[i].points.size());
    ASSERT_EQ(back[i].objects.size(), scenes[i].objects.size());
    for (std::size_t k = 0; k < back[i].objects.size(); ++k) {
      expect_box_near(back[i].objects[k].box, scenes[i].objects[k].box, 1e-4);
      EXPECT_EQ(back[i].objects[k].difficulty, scenes[i].objects[k].difficulty);
    }
  }
  EXPECT_THROW(load_kitti_dir((d.path() / "nope").string()), IoError);
}

}  // namespace
}  // namespace fgf
