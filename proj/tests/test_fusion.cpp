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

#include <set>

#include "fgfusion/grad_check.hpp"
#include "fgfusion/model.hpp"
#include "test_util.hpp"

namespace fgf {
namespace {

using testing::random_tensor;
using testing::toy_calib;

TEST(SelectQueries, OneHotFirst) {
  std::vector<double> h(12, 0.0);
  h[7] = 1.0;
  auto q = select_queries(h, 3, 4, 3);
  EXPECT_EQ(q[0], 7u);
}

TEST(SelectQueries, UniformRowMajor) {
  std::vector<double> h(12, 0.3);
  EXPECT_EQ(select_queries(h, 3, 4, 5), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(SelectQueries, ExhaustiveSelectsEveryCellOnce) {
  Rng rng(1);
  std::vector<double> h(20);
  for (auto& v : h) v = rng.uniform();
  auto q = select_queries(h, 4, 5, 20);
  EXPECT_EQ(std::set<std::size_t>(q.begin(), q.end()).size(), 20u);
  EXPECT_THROW(select_queries(h, 4, 5, 21), ContractError);
}

TEST(SelectQueries, LocalMaxSuppressesShoulders) {
  // A peak at 5 with a high shoulder at 6 and a lower isolated peak at 15.
  std::vector<double> h(16, 0.0);
  h[5] = 0.9, h[6] = 0.8, h[15] = 0.5;
  auto q = select_queries(h, 4, 4, 2);
  EXPECT_EQ(q, (std::vector<std::size_t>{5, 15}));
  auto raw = select_queries(h, 4, 4, 2, false);
  EXPECT_EQ(raw, (std::vector<std::size_t>{5, 6}));
}

TEST(Attention, RowsSumToOneAndSingleKeyReturnsValueProjection) {
  ParamStore<double> ps(3);
  nn::Attention<double> att(ps, "a", 8, 6, 8);
  Rng rng(4);
  auto q = random_tensor<double>({5, 8}, rng);
  auto kv = random_tensor<double>({16, 6}, rng);
  auto r = att(q, kv, kv);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 16; ++j) s += r.weights[i * 16 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  auto one = random_tensor<double>({1, 6}, rng);
  auto r1 = att(q, one, one);
  auto expect = att.o(att.v(one));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(r1.out[i * 8 + c], expect[c], 1e-12);
}

TEST(DecoderLayer, GradientWith16CellsAnd4Queries) {
  ParamStore<double> ps(5);
  DecoderLayer<double> layer(ps, "dec", 8, 8, 16);
  Rng rng(6);
  auto q = random_tensor<double>({4, 8}, rng);
  auto qpos = random_tensor<double>({4, 8}, rng);
  auto cells = random_tensor<double>({16, 8}, rng);
  auto f = [&] {
    auto o = layer(q, qpos, cells, cells, {});
    return sum(mul(o.queries, o.queries));
  };
  std::vector<Tensor<double>> leaves{q, cells};
  for (const auto& [n, p] : ps.all()) leaves.push_back(p);
  auto rep = grad_check_report<double>(f, leaves, 1e-4, 1e-4);
  EXPECT_LT(rep.max_error, 1e-4);
  EXPECT_LT(rep.skipped_fraction(), 0.05);
}

TEST(DecoderLayer, ZeroValuesLeaveResidualOnly) {
  ParamStore<double> ps(7);
  DecoderLayer<double> layer(ps, "dec", 8, 6, 16);
  Rng rng(8);
  auto q = random_tensor<double>({3, 8}, rng);
  auto qpos = random_tensor<double>({3, 8}, rng);
  auto keys = random_tensor<double>({10, 6}, rng);
  auto o = layer(q, qpos, keys, Tensor<double>::zeros({10, 6}), {});
  auto qp = add(q, qpos);
  auto x = layer.norm1(add(q, layer.self_attn(qp, qp, q).out));
  auto expect = layer.norm2(x);
  for (std::size_t i = 0; i < expect.numel(); ++i) EXPECT_NEAR(o.after_cross[i], expect[i], 1e-12);
}

ModelConfig tiny_model(std::size_t n) {
  ModelConfig m;
  m.lidar.range = {0, 12.8, -6.4, 6.4, -3, 1};
  m.lidar.voxel = {0.8, 0.8, 1.0};
  m.lidar.stages = 3;
  m.lidar.channels = {4, 6, 8};
  m.lidar.aux = false;
  m.camera.height = 32;
  m.camera.width = 64;
  m.camera.lateral_channels = 8;
  m.camera.reduction = 2;
  m.fusion.dim = 8;
  m.fusion.ffn_hidden = 16;
  m.fusion.heatmap_hidden = 4;
  m.fusion.queries = 4;
  m.fused_levels = n;
  return m;
}

Scene tiny_scene(Rng& rng, const ModelConfig& m) {
  Scene s;
  s.calib = toy_calib(static_cast<int>(m.camera.height), static_cast<int>(m.camera.width), 30);
  s.image_height = m.camera.height;
  s.image_width = m.camera.width;
  s.image.resize(3 * m.camera.height * m.camera.width);
  for (auto& v : s.image) v = static_cast<float>(rng.uniform());
  for (int i = 0; i < 300; ++i) {
    s.points.push_back({static_cast<float>(rng.uniform(0, 12.8)), static_cast<float>(rng.uniform(-6.4, 6.4)),
                        static_cast<float>(rng.uniform(-3, 1)), static_cast<float>(rng.uniform())});
  }
  return s;
}

TEST(Msf, LevelCounts) {
  Rng rng(9);
  for (std::size_t n : {1u, 3u}) {
    Model<float> m(tiny_model(n), 1);
    auto r = m.forward(tiny_scene(rng, m.config()), Mode::kFused);
    ASSERT_EQ(r.levels.size(), n);
    for (const auto& l : r.levels) {
      EXPECT_EQ(l.fused.boxes.shape(), (Shape{4, 8}));
      EXPECT_EQ(l.fused.class_logits.shape(), (Shape{4, 2}));
    }
    EXPECT_EQ(r.levels.back().level, 2u);
  }
  EXPECT_THROW(Model<float>(tiny_model(4), 1), ConfigError);
}

TEST(Msf, AttentionRowsAreDistributions) {
  Rng rng(10);
  Model<double> m(tiny_model(3), 2);
  auto r = m.forward(tiny_scene(rng, m.config()), Mode::kFused);
  for (const auto& l : r.levels) {
    for (const Tensor<double>* w : {&l.lidar_weights, &l.image_weights}) {
      std::size_t rows = w->dim(0), cols = w->dim(1);
      for (std::size_t i = 0; i < rows; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < cols; ++j) {
          ASSERT_GE((*w)[i * cols + j], 0.0);
          s += (*w)[i * cols + j];
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(Msf, LevelsAreIndependent) {
  Rng rng(11);
  Model<double> m(tiny_model(3), 3);
  Scene s = tiny_scene(rng, m.config());
  auto lid = m.lidar().forward(m.lidar().voxelize(s.points));
  auto cam = m.camera().forward(image_tensor<double>(s, m.config().camera));
  auto base = m.fusion().forward(lid.bev, cam.fused, cam.strides, s.calib);
  // Scramble every level but the middle one.
  auto bev = lid.bev;
  auto img = cam.fused;
  for (std::size_t k : {0u, 2u}) {
    bev[k].features = random_tensor<double>(bev[k].features.shape(), rng);
    img[k] = random_tensor<double>(img[k].shape(), rng);
  }
  auto other = m.fusion().forward(bev, img, cam.strides, s.calib);
  EXPECT_EQ(base[1].fused.boxes.values(), other[1].fused.boxes.values());
  EXPECT_EQ(base[1].fused.class_logits.values(), other[1].fused.class_logits.values());
  EXPECT_NE(base[0].fused.boxes.values(), other[0].fused.boxes.values());
}

TEST(Msf, LevelCountMismatchIsConfigError) {
  Rng rng(12);
  Model<float> m(tiny_model(2), 4);
  Scene s = tiny_scene(rng, m.config());
  auto lid = m.lidar().forward(m.lidar().voxelize(s.points));
  auto cam = m.camera().forward(image_tensor<float>(s, m.config().camera));
  auto img = cam.fused;
  img.pop_back();
  EXPECT_THROW(m.fusion().forward(lid.bev, img, {8}, s.calib), ConfigError);
}

TEST(ImageWindow, FootprintAndGlobalFallback) {
  Calibration c = toy_calib(64, 128, 60);
  Box3D ahead{10, 0, -1, 1.6, 3.9, 1.5, 0};
  Box3D behind{-10, 0, -1, 1.6, 3.9, 1.5, 0};
  Box3D beside{5, 60, -1, 1.6, 3.9, 1.5, 0};
  auto mask = image_window_mask({ahead, behind, beside}, c, 8, 8, 16, 2);
  std::size_t m = 8 * 16 + 1;
  std::size_t inside = 0;
  for (std::size_t j = 0; j + 1 < m; ++j) inside += mask[j];
  EXPECT_GT(inside, 0u);
  EXPECT_EQ(mask[m - 1], 0);
  // the center pixel (64, 32) lands in cell (4, 8)
  EXPECT_EQ(mask[4 * 16 + 8], 1);
  for (std::size_t q : {1u, 2u}) {
    for (std::size_t j = 0; j + 1 < m; ++j) EXPECT_EQ(mask[q * m + j], 0);
    EXPECT_EQ(mask[q * m + m - 1], 1);
  }
}

TEST(ImageWindow, AttentionMassInsideFootprint) {
  // A bright blob at the image center and a box in front of the camera whose
  // projection covers it: all image attention of every query with a window
  // falls inside that window.
  Rng rng(13);
  ModelConfig cfg = tiny_model(1);
  Model<double> m(cfg, 5);
  Scene s = tiny_scene(rng, cfg);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 12; y < 20; ++y)
      for (std::size_t x = 24; x < 40; ++x) s.image[(c * 32 + y) * 64 + x] = 1.0f;
  auto r = m.forward(s, Mode::kFused);
  const auto& l = r.levels[0];
  std::size_t cols = l.image_weights.dim(1);
  for (std::size_t q = 0; q < l.image_weights.dim(0); ++q) {
    double mass = 0;
    for (std::size_t j = 0; j < cols; ++j)
      if (l.image_mask[q * cols + j]) mass += l.image_weights[q * cols + j];
    EXPECT_GE(mass, 0.9);
  }
}

TEST(Model, DetachedAuxGivesIdenticalOutputs) {
  ModelConfig cfg = tiny_model(3);
  cfg.lidar.aux = true;
  Model<double> m(cfg, 15);
  Model<double> d = m.detach_aux();
  EXPECT_LT(d.params().all().size(), m.params().all().size());
  Rng rng(16);
  for (int i = 0; i < 3; ++i) {
    Scene s = tiny_scene(rng, cfg);
    auto a = m.forward(s, Mode::kFused), b = d.forward(s, Mode::kFused);
    ASSERT_EQ(a.levels.size(), b.levels.size());
    for (std::size_t k = 0; k < a.levels.size(); ++k) {
      EXPECT_EQ(a.levels[k].fused.boxes.values(), b.levels[k].fused.boxes.values());
      EXPECT_EQ(a.levels[k].fused.class_logits.values(), b.levels[k].fused.class_logits.values());
      EXPECT_EQ(a.levels[k].heatmap_logits.values(), b.levels[k].heatmap_logits.values());
    }
  }
}

TEST(Msf, EndToEndGradientFromPixelsAndVoxels) {
  ModelConfig cfg = tiny_model(2);
  cfg.camera.height = 32;
  cfg.camera.width = 32;
  cfg.lidar.range = {0, 6.4, -3.2, 3.2, -3, 1};
  cfg.lidar.voxel = {0.8, 0.8, 2.0};
  Model<double> m(cfg, 6);
  Rng rng(14);
  Scene s = tiny_scene(rng, cfg);
  s.image.resize(3 * 32 * 32);
  s.image_width = 32;
  s.calib = toy_calib(32, 32, 16);
  auto volume = voxel_input<double>(m.lidar().voxelize(s.points));
  auto image = image_tensor<double>(s, cfg.camera);
  std::vector<double> target(4 * 8);
  for (auto& t : target) t = rng.uniform(-1, 1);
  std::vector<double> ones(target.size(), 1.0);
  auto f = [&] {
    auto r = m.forward_inputs(volume, image, s.calib, Mode::kFused);
    Tensor<double> loss;
    for (const auto& l : r.levels) {
      auto li = smooth_l1(l.fused.boxes, target, ones, 1.0 / 9.0);
      loss = loss.defined() ? add(loss, li) : li;
    }
    return loss;
  };
  auto rep = grad_check_report<double>(f, {image, volume}, 1e-4, 1e-4);
  EXPECT_LT(rep.max_error, 1e-4);
  EXPECT_LT(rep.skipped_fraction(), 0.05) << rep.skipped << " of " << rep.checked + rep.skipped;
  EXPECT_GT(rep.checked, 0u);
}

}  // namespace
}  // namespace fgf
