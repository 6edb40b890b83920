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

#include "fgfusion/camera_stream.hpp"
#include "fgfusion/grad_check.hpp"
#include "test_util.hpp"

namespace fgf {
namespace {

using testing::random_tensor;

template <class T>
void fill(Tensor<T> t, T v) {
  for (auto& x : t.mutable_data()) x = v;
}

template <class T>
void fill_prefix(ParamStore<T>& ps, const std::string& prefix, T v) {
  for (auto& t : ps.with_prefix(prefix)) fill(t, v);
}

CameraConfig toy(std::size_t n = 3) {
  CameraConfig c;
  c.height = 32;
  c.width = 64;
  c.fused_levels = n;
  return c;
}

TEST(CameraBackbone, KittiImageSizeGivesCoarsestBlock14x25) {
  ParamStore<float> ps(1);
  CameraConfig cfg;
  CameraStream<float> cam(ps, cfg);
  Rng rng(2);
  auto img = random_tensor<float>({3, 448, 800}, rng, 0.5);
  NoGradGuard ng;
  auto blocks = cam.backbone(add_scalar(img, 0.5f));
  ASSERT_EQ(blocks.size(), 4u);
  EXPECT_EQ(blocks[3].shape(), (Shape{128, 14, 25}));
  EXPECT_EQ(blocks[0].shape(), (Shape{16, 112, 200}));
}

TEST(CameraBackbone, ZeroImageZeroBiasIsFinite) {
  ParamStore<float> ps(1);
  CameraStream<float> cam(ps, toy());
  for (auto& [name, t] : ps.all())
    if (name.ends_with(".bias")) fill(t, 0.f);
  auto out = cam.forward(Tensor<float>::zeros({3, 32, 64}));
  for (const auto& f : out.fused)
    for (float v : f.values()) ASSERT_TRUE(std::isfinite(v));
}

TEST(CameraBackbone, DeterministicAndShapeChecked) {
  ParamStore<float> ps(1);
  CameraStream<float> cam(ps, toy());
  Rng rng(3);
  auto img = random_tensor<float>({3, 32, 64}, rng);
  auto a = cam.forward(img), b = cam.forward(img);
  for (std::size_t k = 0; k < a.fused.size(); ++k) EXPECT_EQ(a.fused[k].values(), b.fused[k].values());
  EXPECT_THROW(cam.forward(Tensor<float>::zeros({3, 32, 32})), ShapeError);
}

TEST(TopDown, SingleLevelIsProjectedTopBlock) {
  ParamStore<float> ps(1);
  CameraStream<float> cam(ps, toy(1));
  Rng rng(4);
  auto img = random_tensor<float>({3, 32, 64}, rng);
  auto blocks = cam.backbone(img);
  auto lat = cam.top_down(blocks);
  ASSERT_EQ(lat.size(), 1u);
  auto ref = conv2d(blocks[3], ps.get("cam.level4.lateral.weight"),
                    ps.get("cam.level4.lateral.bias"), 1, 0);
  EXPECT_EQ(lat[0].values(), ref.values());
}

TEST(TopDown, ThreeLevelsAtStrides8To32) {
  ParamStore<float> ps(1);
  CameraStream<float> cam(ps, toy(3));
  auto out = cam.forward(Tensor<float>::zeros({3, 32, 64}));
  ASSERT_EQ(out.laterals.size(), 3u);
  EXPECT_EQ(out.strides, (std::vector<std::size_t>{8, 16, 32}));
  EXPECT_EQ(out.laterals[0].shape(), (Shape{64, 4, 8}));
  EXPECT_EQ(out.laterals[2].shape(), (Shape{64, 1, 2}));
}

TEST(TopDown, ZeroProjectionsGiveZeroLaterals) {
  ParamStore<float> ps(1);
  CameraStream<float> cam(ps, toy(4));
  for (std::size_t b = 1; b <= 4; ++b)
    fill_prefix(ps, "cam.level" + std::to_string(b) + ".lateral", 0.f);
  std::vector<Tensor<float>> blocks;
  for (std::size_t b = 0; b < 4; ++b)
    blocks.push_back(Tensor<float>::zeros({kCameraChannels[b], halve(32, b + 2), halve(64, b + 2)}));
  for (const auto& l : cam.top_down(blocks))
    for (float v : l.values()) EXPECT_EQ(v, 0.f);
}

TEST(TopDown, InvalidLevelCount) {
  ParamStore<float> ps(1);
  EXPECT_THROW(CameraStream<float>(ps, toy(0)), ContractError);
  ParamStore<float> ps2(1);
  EXPECT_THROW(CameraStream<float>(ps2, toy(5)), ContractError);
}

TEST(SpatialAttention, ZeroInputZeroKernelIsHalf) {
  ParamStore<float> ps(1);
  nn::Deconv2d<float> k(ps, "k", 4, 1, 3, 1, 1);
  fill(k.weight, 0.f);
  fill(k.bias, 0.f);
  auto a = spatial_attention(Tensor<float>::zeros({4, 5, 6}), k);
  EXPECT_EQ(a.shape(), (Shape{1, 5, 6}));
  for (float v : a.values()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(SpatialAttention, ScalarKernelOnLn3IsThreeQuarters) {
  ParamStore<double> ps(1);
  nn::Deconv2d<double> k(ps, "k", 1, 1, 1, 1, 0);
  fill(k.weight, 1.0);
  fill(k.bias, 0.0);
  auto a = spatial_attention(Tensor<double>::full({1, 1, 1}, std::log(3.0)), k);
  EXPECT_NEAR(a.item(), 0.75, 1e-6);
}

TEST(SpatialAttention, KernelChannelMismatch) {
  ParamStore<float> ps(1);
  nn::Deconv2d<float> k(ps, "k", 4, 1, 3, 1, 1);
  EXPECT_THROW(spatial_attention(Tensor<float>::zeros({3, 5, 6}), k), ShapeError);
}

TEST(ChannelAttention, ZeroWeightsGiveHalf) {
  ParamStore<float> ps(1);
  nn::Linear<float> wa(ps, "a", 8, 2), wb(ps, "b", 2, 8);
  for (auto& t : ps.with_prefix("")) fill(t, 0.f);
  auto r = channel_attention(Tensor<float>::full({8, 3, 3}, 2.5f), Tensor<float>(), wa, wb);
  EXPECT_EQ(r.attention.shape(), (Shape{8, 1, 1}));
  for (float v : r.attention.values()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(ChannelAttention, ScalarComposition) {
  ParamStore<double> ps(1);
  nn::Linear<double> wa(ps, "a", 1, 1), wb(ps, "b", 1, 1);
  fill(wa.weight, 1.0), fill(wb.weight, 1.0), fill(wa.bias, 0.0), fill(wb.bias, 0.0);
  auto r = channel_attention(Tensor<double>::full({1, 2, 2}, 1.0), Tensor<double>(), wa, wb);
  EXPECT_NEAR(r.attention.item(), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(r.attention.item(), 0.7311, 1e-4);
}

TEST(ChannelAttention, PreviousLogitsAddBeforeSigmoid) {
  ParamStore<double> ps(1);
  nn::Linear<double> wa(ps, "a", 1, 1), wb(ps, "b", 1, 1);
  fill(wa.weight, 1.0), fill(wb.weight, 1.0), fill(wa.bias, 0.0), fill(wb.bias, 0.0);
  auto prev = Tensor<double>::full({1, 1, 1}, 2.0);
  auto r = channel_attention(Tensor<double>::full({1, 2, 2}, 1.0), prev, wa, wb);
  EXPECT_NEAR(r.logits.item(), 3.0, 1e-12);
  EXPECT_NEAR(r.attention.item(), 1.0 / (1.0 + std::exp(-3.0)), 1e-12);
  EXPECT_THROW(channel_attention(Tensor<double>::full({1, 2, 2}, 1.0),
                                 Tensor<double>::zeros({2, 1, 1}), wa, wb),
               ShapeError);
}

TEST(ApplyAttention, HandCases) {
  auto f = Tensor<double>::full({1, 1, 1}, 2.0);
  auto r = apply_attention(f, Tensor<double>::full({1, 1, 1}, 0.5),
                           Tensor<double>::full({1, 1, 1}, 0.25), Tensor<double>::full({1}, 1.0));
  EXPECT_NEAR(r.item(), 1.5, 1e-12);

  Rng rng(1);
  auto g = random_tensor<double>({3, 2, 2}, rng);
  auto id = apply_attention(g, Tensor<double>::full({1, 2, 2}, 0.25),
                            Tensor<double>::full({3, 1, 1}, 0.75), Tensor<double>::full({1}, 1.0));
  EXPECT_EQ(id.values(), g.values());

  auto as = random_tensor<double>({1, 2, 2}, rng);
  auto a0 = apply_attention(g, as, Tensor<double>::full({3, 1, 1}, 0.9),
                            Tensor<double>::full({1}, 0.0));
  EXPECT_EQ(a0.values(), mul(g, as).values());
  EXPECT_THROW(apply_attention(g, Tensor<double>::zeros({1, 3, 3}), Tensor<double>::zeros({3, 1, 1}),
                               Tensor<double>::full({1}, 1.0)),
               ShapeError);
}

TEST(AttentionPyramid, RangeAndLevelAlignment) {
  for (std::size_t n = 1; n <= 4; ++n) {
    ParamStore<float> ps(n);
    CameraStream<float> cam(ps, toy(n));
    Rng rng(10 + n);
    auto out = cam.forward(random_tensor<float>({3, 32, 64}, rng, 3.0));
    ASSERT_EQ(out.laterals.size(), n);
    ASSERT_EQ(out.spatial.size(), n);
    ASSERT_EQ(out.channel.size(), n);
    ASSERT_EQ(out.fused.size(), n);
    for (std::size_t k = 0; k < n; ++k) {
      for (float v : out.spatial[k].values()) ASSERT_TRUE(v > 0 && v < 1);
      for (float v : out.channel[k].values()) ASSERT_TRUE(v > 0 && v < 1);
      EXPECT_EQ(out.fused[k].shape(), out.laterals[k].shape());
    }
  }
}

TEST(AttentionPyramid, DisabledIsIdentity) {
  ParamStore<float> ps(1);
  CameraConfig cfg = toy(2);
  cfg.attention = false;
  CameraStream<float> cam(ps, cfg);
  Rng rng(1);
  auto out = cam.forward(random_tensor<float>({3, 32, 64}, rng));
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(out.fused[k].values(), out.laterals[k].values());
  EXPECT_FALSE(ps.contains("cam.alpha"));
}

TEST(AttentionPyramid, SpatialLogitsTowardMinusInfinitySuppress) {
  Rng rng(6);
  auto f = random_tensor<double>({4, 3, 3}, rng);
  auto ac = Tensor<double>::zeros({4, 1, 1});
  double prev = 1e300;
  for (double logit : {0.0, -5.0, -10.0, -20.0, -40.0}) {
    auto as = sigmoid(Tensor<double>::full({1, 3, 3}, logit));
    auto fp = apply_attention(f, as, ac, Tensor<double>::full({1}, 1.0));
    double norm = 0;
    for (double v : fp.values()) norm += v * v;
    norm = std::sqrt(norm);
    EXPECT_LT(norm, prev);
    prev = norm;
  }
  EXPECT_LT(prev, 1e-15);
}

TEST(AttentionPyramid, CompositionGradientOnToyImage) {
  ParamStore<double> ps(21);
  CameraStream<double> cam(ps, toy(3));
  Rng rng(22);
  auto img = random_tensor<double>({3, 32, 64}, rng);
  img = add_scalar(scale(img, 0.5), 0.5);
  auto f = [&] {
    auto out = cam.forward(img);
    Tensor<double> total;
    for (const auto& fp : out.fused) total = total.defined() ? add(total, sum(fp)) : sum(fp);
    return total;
  };
  std::vector<Tensor<double>> params{ps.get("cam.alpha"), ps.get("cam.level3.spatial.weight"),
                                     ps.get("cam.level2.ca_reduce.weight"),
                                     ps.get("cam.level4.ca_expand.bias"),
                                     ps.get("cam.block2.weight"), ps.get("cam.stem.bias")};
  params.push_back(img);
  auto rep = grad_check_report<double>(f, params, 1e-4, 1e-4);
  EXPECT_LT(rep.max_error, 1e-4);
  EXPECT_LT(rep.skipped_fraction(), 0.05) << rep.skipped << " of " << rep.checked + rep.skipped;
}

}  // namespace
}  // namespace fgf
