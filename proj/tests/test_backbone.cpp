#include "occlm/backbone.hpp"

#include <gtest/gtest.h>

#include <set>

#include "testutil.hpp"

using namespace occlm;
using testutil::dot;
using testutil::expect_grad_matches;
using testutil::randomize;
using testutil::zero_grads;

static BackboneConfig tiny_config() {
  BackboneConfig c;
  c.stacks = 1;
  c.channels = 8;
  c.crop_h = c.crop_w = 16;
  c.stride = 2;
  c.seed = 3;
  return c;
}

static size_t total_params(Backbone& bb) {
  size_t n = 0;
  for (auto& p : bb.params()) n += p.value->numel();
  return n;
}

TEST(BackboneConfig, Validation) {
  BackboneConfig c = tiny_config();
  validate_backbone_config(c);
  c.stride = 3;
  EXPECT_THROW(validate_backbone_config(c), std::runtime_error);
  c = tiny_config();
  c.crop_h = 18;  // map 9, not divisible by 4
  EXPECT_THROW(validate_backbone_config(c), std::runtime_error);
  c = tiny_config();
  c.channels = 4;
  EXPECT_THROW(validate_backbone_config(c), std::runtime_error);
  c = tiny_config();
  c.stacks = 0;
  EXPECT_THROW(validate_backbone_config(c), std::runtime_error);
}

TEST(Backbone, OutputShapes) {
  BackboneConfig c;
  c.stacks = 2;
  c.channels = 8;
  c.crop_h = c.crop_w = 64;
  c.stride = 4;
  c.seed = 1;
  Backbone bb(c, 16);
  Tensor crop({3, 64, 64});
  Rng rng(5);
  testutil::randomize_positive(crop, rng, 0.0, 1.0);
  BackboneOutput out = bb.forward(crop);
  ASSERT_EQ(out.stage_heatmaps.size(), 2u);
  for (const auto& h : out.stage_heatmaps)
    EXPECT_EQ(h.shape(), (std::vector<int>{kNumPoints, 16, 16}));
  EXPECT_EQ(out.features.shape(), (std::vector<int>{8, 16, 16}));
  EXPECT_EQ(out.point_pred.shape(), (std::vector<int>{kNumPoints, 16, 16}));
  EXPECT_EQ(out.edge_pred.shape(), (std::vector<int>{16, 16, 16}));
  for (size_t i = 0; i < out.point_pred.numel(); ++i) {
    EXPECT_GT(out.point_pred[i], 0.0);
    EXPECT_LT(out.point_pred[i], 1.0);
  }
  Tensor bad({3, 32, 64});
  EXPECT_THROW(bb.forward(bad), std::runtime_error);
}

TEST(Backbone, DeterministicBySeed) {
  BackboneConfig c = tiny_config();
  Backbone a(c), b(c);
  c.seed = 99;
  Backbone d(c);
  Tensor crop({3, 16, 16});
  Rng rng(6);
  randomize(crop, rng, 0.3);
  BackboneOutput oa = a.forward(crop), ob = b.forward(crop), od = d.forward(crop);
  for (size_t i = 0; i < oa.point_pred.numel(); ++i)
    ASSERT_EQ(oa.point_pred[i], ob.point_pred[i]);
  for (size_t i = 0; i < oa.stage_heatmaps[0].numel(); ++i)
    ASSERT_EQ(oa.stage_heatmaps[0][i], ob.stage_heatmaps[0][i]);
  bool differs = false;
  for (size_t i = 0; i < oa.point_pred.numel(); ++i)
    differs |= oa.point_pred[i] != od.point_pred[i];
  EXPECT_TRUE(differs);
}

// Hand-counted for channels=8, stacks=1, stride=2:
//   stem conv 3->8:             8*3*9 + 8          = 224
//   resblock 8->8:              2*(8*8*9 + 8)      = 1168 (stem, x7 hourglass, proj)
//   hourglass: 7 resblocks      7*1168             = 8176
//   proj 1x1 8->8:              8*8 + 8            = 72
//   heads 8->100 (x2), 8->16:   900, 900, 144
TEST(Backbone, ParameterCount) {
  BackboneConfig c = tiny_config();
  Backbone bb(c);
  EXPECT_EQ(total_params(bb), 224u + 1168 + 8176 + 1168 + 72 + 900 + 900 + 144);
  c.stacks = 2;
  Backbone bb2(c);
  // one extra stage: hourglass + proj resblock + proj conv + stage head
  EXPECT_EQ(total_params(bb2) - total_params(bb), 8176u + 1168 + 72 + 900);
}

TEST(Backbone, ParamNamesUnique) {
  BackboneConfig c = tiny_config();
  c.stacks = 2;
  Backbone bb(c);
  std::set<std::string> names;
  for (auto& p : bb.params()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
}

TEST(Backbone, GradientsMatchFiniteDifferences) {
  BackboneConfig c = tiny_config();
  Backbone bb(c);
  Rng rng(7);
  Tensor crop({3, 16, 16});
  randomize(crop, rng, 0.3);

  BackboneOutput out = bb.forward(crop);
  BackboneGrads g;
  g.stage_heatmaps.emplace_back(out.stage_heatmaps[0].shape());
  randomize(g.stage_heatmaps[0], rng);
  g.features = Tensor(out.features.shape());
  randomize(g.features, rng);
  g.point_pred = Tensor(out.point_pred.shape());
  randomize(g.point_pred, rng);
  g.edge_pred = Tensor(out.edge_pred.shape());
  randomize(g.edge_pred, rng);

  auto eval = [&]() {
    BackboneOutput o = bb.forward(crop);
    return dot(o.stage_heatmaps[0], g.stage_heatmaps[0]) + dot(o.features, g.features) +
           dot(o.point_pred, g.point_pred) + dot(o.edge_pred, g.edge_pred);
  };

  auto params = bb.params();
  zero_grads(params);
  bb.forward(crop);
  Tensor gcrop = bb.backward(g);

  // spot-check a handful of crop pixels and one weight per module family
  Rng pick(8);
  for (int i = 0; i < 8; ++i) {
    size_t idx = pick.uniform_int(crop.numel());
    double num = testutil::central_diff(eval, &crop[idx]);
    EXPECT_NEAR(gcrop[idx], num, 1e-3 * std::max(std::abs(num), std::abs(gcrop[idx])) + 1e-7);
  }
  for (const char* name : {"stem.conv0.w", "stem.res.conv1.w", "stage0.hg.bottom0.conv2.w",
                           "stage0.proj_conv.w", "stage0.head.b", "point_head.w", "edge_head.w"}) {
    Tensor* value = testutil::find_param(params, name);
    Tensor* grad = testutil::find_param(params, name, true);
    ASSERT_NE(value, nullptr);
    for (int i = 0; i < 3; ++i) {
      size_t idx = pick.uniform_int(value->numel());
      double num = testutil::central_diff(eval, &(*value)[idx]);
      double ana = (*grad)[idx];
      EXPECT_NEAR(ana, num, 1e-3 * std::max(std::abs(num), std::abs(ana)) + 1e-7)
          << name << "[" << idx << "]";
    }
  }
}

TEST(Backbone, HeadGradsReachEarlierStages) {
  BackboneConfig c = tiny_config();
  c.stacks = 2;
  Backbone bb(c);
  Rng rng(9);
  Tensor crop({3, 16, 16});
  randomize(crop, rng, 0.3);
  bb.forward(crop);

  // gradient only on the first stage's heatmaps must still reach the stem
  BackboneGrads g;
  g.stage_heatmaps.emplace_back(std::vector<int>{kNumPoints, 8, 8});
  g.stage_heatmaps[0].fill(1.0);
  auto params = bb.params();
  zero_grads(params);
  Tensor gcrop = bb.backward(g);
  double mag = 0;
  for (size_t i = 0; i < gcrop.numel(); ++i) mag += std::abs(gcrop[i]);
  EXPECT_GT(mag, 0.0);
  Tensor* stem_grad = testutil::find_param(params, "stem.conv0.w", true);
  double wmag = 0;
  for (size_t i = 0; i < stem_grad->numel(); ++i) wmag += std::abs((*stem_grad)[i]);
  EXPECT_GT(wmag, 0.0);
  // and the second stage's parameters stay untouched
  Tensor* late = testutil::find_param(params, "stage1.head.w", true);
  for (size_t i = 0; i < late->numel(); ++i) EXPECT_EQ((*late)[i], 0.0);
}
