#include "occlm/visibility.hpp"

#include <gtest/gtest.h>

#include "testutil.hpp"

using namespace occlm;
using testutil::dot;
using testutil::expect_grad_matches;
using testutil::find_param;
using testutil::randomize;
using testutil::randomize_positive;
using testutil::zero_grads;

namespace {

constexpr int kF = 4, kP = 3, kE = 2, kH = 4, kW = 4;

VisibilityHeadConfig small_config() {
  VisibilityHeadConfig c;
  c.c_psi = 4;
  c.local_depth = 2;
  c.mix_width = 2;
  c.alpha0 = 0.01;
  c.seed = 5;
  return c;
}

struct Inputs {
  Tensor features{{kF, kH, kW}};
  Tensor point_pred{{kP, kH, kW}};
  Tensor edge_pred{{kE, kH, kW}};
  Tensor attention{{kP, kH, kW}};
};

Inputs random_inputs(uint64_t seed) {
  Inputs in;
  Rng rng(seed);
  randomize(in.features, rng, 0.5);
  randomize_positive(in.point_pred, rng, 0.05, 0.95);
  randomize_positive(in.edge_pred, rng, 0.05, 0.95);
  randomize_positive(in.attention, rng, 0.1, 1.0);
  for (int p = 0; p < kP; ++p) {
    double s = 0;
    for (int v = 0; v < kH; ++v)
      for (int u = 0; u < kW; ++u) s += in.attention.at(p, v, u);
    for (int v = 0; v < kH; ++v)
      for (int u = 0; u < kW; ++u) in.attention.at(p, v, u) /= s;
  }
  return in;
}

void set_uniform_attention(Tensor& att) {
  att.fill(1.0 / (kH * kW));
}

}  // namespace

TEST(VisibilityConfig, Validation) {
  VisibilityHeadConfig c = small_config();
  validate_visibility_config(c);
  c.c_psi = 3;
  EXPECT_THROW(validate_visibility_config(c), std::runtime_error);
  c = small_config();
  c.mix_width = 0;
  EXPECT_THROW(validate_visibility_config(c), std::runtime_error);
}

TEST(Visibility, FreshGateEqualsAlpha0) {
  VisibilityHead head(kF, kP, kE, small_config());
  Inputs in = random_inputs(40);
  VisibilityOutput out = head.forward(in.features, in.point_pred, in.edge_pred, in.attention);
  for (int p = 0; p < kP; ++p) EXPECT_DOUBLE_EQ(out.gate.at(p), 0.01);
}

TEST(Visibility, FusionIsLocalPlusGatedContext) {
  VisibilityHead head(kF, kP, kE, small_config());
  Inputs in = random_inputs(41);
  head.alpha().at(0) = 0.0;
  head.alpha().at(1) = 1.0;
  head.alpha().at(2) = -0.3;
  VisibilityOutput out = head.forward(in.features, in.point_pred, in.edge_pred, in.attention);
  for (int p = 0; p < kP; ++p) {
    double z = out.local_logits.at(p) + head.alpha().at(p) * out.context_logits.at(p);
    EXPECT_NEAR(out.fused_logits.at(p), z, 1e-15);
    EXPECT_NEAR(out.probabilities.at(p), 1.0 / (1.0 + std::exp(-z)), 1e-15);
  }
  EXPECT_DOUBLE_EQ(out.fused_logits.at(0), out.local_logits.at(0));  // closed gate
}

// Zero aligned features reach the local branch as zero (bias-free depthwise,
// ReLU(0)=0, zero pool), so its logits collapse to the per-landmark biases.
TEST(Visibility, ZeroFeaturesGiveLocalBiases) {
  VisibilityHead head(kF, kP, kE, small_config());
  auto params = head.params();
  find_param(params, "vis.psi.w")->zero();
  find_param(params, "vis.psi.b")->zero();
  Tensor* b_loc = find_param(params, "vis.local_linear.b");
  for (int p = 0; p < kP; ++p) b_loc->at(p) = 0.25 * (p + 1);
  Inputs in = random_inputs(42);
  VisibilityOutput out = head.forward(in.features, in.point_pred, in.edge_pred, in.attention);
  for (int p = 0; p < kP; ++p) EXPECT_DOUBLE_EQ(out.local_logits.at(p), 0.25 * (p + 1));
}

// Identical aligned features for every landmark + uniform 1/P mixing row make
// the context branch blind to landmark identity: all logits agree.
TEST(Visibility, UniformMixingEqualizesContextLogits) {
  VisibilityHead head(kF, kP, kE, small_config());
  auto params = head.params();
  Tensor* wm = find_param(params, "vis.mix.w");
  wm->fill(1.0 / kP);
  find_param(params, "vis.mix.b")->zero();
  Inputs in = random_inputs(43);
  set_uniform_attention(in.attention);  // same attention => identical G_p
  VisibilityOutput out = head.forward(in.features, in.point_pred, in.edge_pred, in.attention);
  for (int p = 1; p < kP; ++p)
    EXPECT_NEAR(out.context_logits.at(p), out.context_logits.at(0), 1e-12);
}

// Identity mixing makes context logit p depend only on landmark p's channel.
TEST(Visibility, IdentityMixingIsolatesLandmarks) {
  VisibilityHead head(kF, kP, kE, small_config());
  auto params = head.params();
  Tensor* wm = find_param(params, "vis.mix.w");
  wm->zero();
  for (int p = 0; p < kP; ++p) wm->at(p, p) = 1.0;
  find_param(params, "vis.mix.b")->zero();

  Inputs a = random_inputs(44);
  Inputs b = a;
  // perturb only landmark 2's attention channel (kept normalized)
  Rng rng(45);
  double s = 0;
  for (int v = 0; v < kH; ++v)
    for (int u = 0; u < kW; ++u) {
      b.attention.at(2, v, u) = rng.uniform(0.1, 1.0);
      s += b.attention.at(2, v, u);
    }
  for (int v = 0; v < kH; ++v)
    for (int u = 0; u < kW; ++u) b.attention.at(2, v, u) /= s;

  VisibilityOutput oa = head.forward(a.features, a.point_pred, a.edge_pred, a.attention);
  VisibilityOutput ob = head.forward(b.features, b.point_pred, b.edge_pred, b.attention);
  EXPECT_NEAR(ob.context_logits.at(0), oa.context_logits.at(0), 1e-12);
  EXPECT_NEAR(ob.context_logits.at(1), oa.context_logits.at(1), 1e-12);
  EXPECT_GT(std::abs(ob.context_logits.at(2) - oa.context_logits.at(2)), 1e-8);
}

TEST(Visibility, RejectsUnnormalizedAttention) {
  VisibilityHead head(kF, kP, kE, small_config());
  Inputs in = random_inputs(46);
  for (int v = 0; v < kH; ++v)
    for (int u = 0; u < kW; ++u) in.attention.at(1, v, u) *= 2.0;
  EXPECT_THROW(head.forward(in.features, in.point_pred, in.edge_pred, in.attention),
               std::runtime_error);
}

TEST(Visibility, DeterministicBySeed) {
  VisibilityHeadConfig c = small_config();
  VisibilityHead a(kF, kP, kE, c), b(kF, kP, kE, c);
  c.seed = 77;
  VisibilityHead d(kF, kP, kE, c);
  Inputs in = random_inputs(47);
  Tensor va = a.forward(in.features, in.point_pred, in.edge_pred, in.attention).probabilities;
  Tensor vb = b.forward(in.features, in.point_pred, in.edge_pred, in.attention).probabilities;
  Tensor vd = d.forward(in.features, in.point_pred, in.edge_pred, in.attention).probabilities;
  bool differs = false;
  for (int p = 0; p < kP; ++p) {
    ASSERT_EQ(va.at(p), vb.at(p));
    differs |= va.at(p) != vd.at(p);
  }
  EXPECT_TRUE(differs);
}

TEST(TiedDepthwise, GradMatchesFiniteDifferences) {
  Rng rng(48);
  detail::TiedDepthwise dw(3, rng);
  Tensor x({2, 3, 4, 4});
  randomize(x, rng);
  Tensor y = dw.forward(x);
  ASSERT_EQ(y.shape(), x.shape());
  Tensor r(y.shape());
  randomize(r, rng);
  auto eval = [&]() { return dot(dw.forward(x), r); };
  std::vector<ParamRef> ps;
  dw.params("dw", ps);
  ASSERT_EQ(ps.size(), 1u);  // bias-free by design
  zero_grads(ps);
  dw.forward(x);
  Tensor gx = dw.backward(r);
  expect_grad_matches(eval, x, gx, "tied depthwise input");
  expect_grad_matches(eval, *ps[0].value, *ps[0].grad, "tied depthwise weight");
}

TEST(TiedDepthwise, SharedAcrossLandmarkGroups) {
  Rng rng(49);
  detail::TiedDepthwise dw(2, rng);
  Tensor x({2, 2, 3, 3});
  randomize(x, rng);
  // copy group 0 into group 1: tied weights must produce identical outputs
  for (int c = 0; c < 2; ++c)
    for (int v = 0; v < 3; ++v)
      for (int u = 0; u < 3; ++u) x.at(1, c, v, u) = x.at(0, c, v, u);
  Tensor y = dw.forward(x);
  for (int c = 0; c < 2; ++c)
    for (int v = 0; v < 3; ++v)
      for (int u = 0; u < 3; ++u) EXPECT_DOUBLE_EQ(y.at(1, c, v, u), y.at(0, c, v, u));
}

TEST(Visibility, GradientsMatchFiniteDifferences) {
  VisibilityHead head(kF, kP, kE, small_config());
  Inputs in = random_inputs(50);
  Tensor r({kP});
  Rng rng(51);
  randomize(r, rng);

  auto eval = [&]() {
    return dot(head.forward(in.features, in.point_pred, in.edge_pred, in.attention).probabilities,
               r);
  };
  auto params = head.params();
  zero_grads(params);
  head.forward(in.features, in.point_pred, in.edge_pred, in.attention);
  VisibilityGrads g = head.backward(r);

  expect_grad_matches(eval, in.features, g.features, "vis features");
  expect_grad_matches(eval, in.point_pred, g.point_pred, "vis point_pred");
  expect_grad_matches(eval, in.edge_pred, g.edge_pred, "vis edge_pred");
  expect_grad_matches(eval, in.attention, g.attention, "vis attention");
  for (auto& p : params) expect_grad_matches(eval, *p.value, *p.grad, "vis " + p.name);

  double att_mag = 0;
  for (size_t i = 0; i < g.attention.numel(); ++i) att_mag += std::abs(g.attention[i]);
  EXPECT_GT(att_mag, 0.0);  // visibility supervision reaches the attention maps
}

TEST(FusionModes, GateClosedEqualsLocalOnlyBitwise) {
  Inputs in = random_inputs(44);
  VisibilityHead gated(kF, kP, kE, small_config());
  gated.alpha().fill(0.0);
  VisibilityHeadConfig lc = small_config();
  lc.mode = FusionMode::kLocalOnly;
  VisibilityHead local(kF, kP, kE, lc);
  auto a = gated.forward(in.features, in.point_pred, in.edge_pred, in.attention);
  auto b = local.forward(in.features, in.point_pred, in.edge_pred, in.attention);
  for (int p = 0; p < kP; ++p) {
    EXPECT_EQ(a.probabilities.at(p), b.probabilities.at(p));
    EXPECT_EQ(b.fused_logits.at(p), b.local_logits.at(p));
  }
}

TEST(FusionModes, FixedSumAndContextOnlyFusion) {
  Inputs in = random_inputs(45);
  VisibilityHeadConfig fc = small_config();
  fc.mode = FusionMode::kFixedSum;
  VisibilityHead fixed(kF, kP, kE, fc);
  auto f = fixed.forward(in.features, in.point_pred, in.edge_pred, in.attention);
  for (int p = 0; p < kP; ++p)
    EXPECT_EQ(f.fused_logits.at(p), f.local_logits.at(p) + f.context_logits.at(p));
  VisibilityHeadConfig cc = small_config();
  cc.mode = FusionMode::kContextOnly;
  VisibilityHead ctx(kF, kP, kE, cc);
  auto c = ctx.forward(in.features, in.point_pred, in.edge_pred, in.attention);
  for (int p = 0; p < kP; ++p) EXPECT_EQ(c.fused_logits.at(p), c.context_logits.at(p));
}

TEST(FusionModes, BackwardRoutesOnlyUsedBranches) {
  Inputs in = random_inputs(46);
  Tensor g_prob({kP});
  Rng rng(47);
  randomize(g_prob, rng, 1.0);

  VisibilityHeadConfig lc = small_config();
  lc.mode = FusionMode::kLocalOnly;
  VisibilityHead local(kF, kP, kE, lc);
  auto lps = local.params();
  zero_grads(lps);
  local.forward(in.features, in.point_pred, in.edge_pred, in.attention);
  local.backward(g_prob);
  for (const char* name : {"vis.reduce.w", "vis.mix.w", "vis.ctx_linear.w", "vis.alpha"}) {
    Tensor* g = find_param(lps, name, true);
    ASSERT_NE(g, nullptr);
    for (size_t i = 0; i < g->numel(); ++i) EXPECT_EQ((*g)[i], 0.0) << name;
  }

  VisibilityHeadConfig cc = small_config();
  cc.mode = FusionMode::kContextOnly;
  VisibilityHead ctx(kF, kP, kE, cc);
  auto cps = ctx.params();
  zero_grads(cps);
  ctx.forward(in.features, in.point_pred, in.edge_pred, in.attention);
  ctx.backward(g_prob);
  for (const char* name : {"vis.local0.w", "vis.local_linear.w", "vis.alpha"}) {
    Tensor* g = find_param(cps, name, true);
    ASSERT_NE(g, nullptr);
    for (size_t i = 0; i < g->numel(); ++i) EXPECT_EQ((*g)[i], 0.0) << name;
  }
}

TEST(FusionModes, GradientsMatchFiniteDifferencesInEveryMode) {
  for (FusionMode mode :
       {FusionMode::kLocalOnly, FusionMode::kContextOnly, FusionMode::kFixedSum}) {
    VisibilityHeadConfig cfg = small_config();
    cfg.mode = mode;
    VisibilityHead head(kF, kP, kE, cfg);
    Inputs in = random_inputs(48);
    Tensor g_prob({kP});
    Rng rng(49);
    randomize(g_prob, rng, 1.0);
    auto eval = [&]() {
      auto out = head.forward(in.features, in.point_pred, in.edge_pred, in.attention);
      return dot(out.probabilities, g_prob);
    };
    auto hps = head.params();
    zero_grads(hps);
    head.forward(in.features, in.point_pred, in.edge_pred, in.attention);
    VisibilityGrads g = head.backward(g_prob);
    expect_grad_matches(eval, in.features, g.features, "mode features");
    Tensor* gw = find_param(hps, "vis.psi.w", true);
    Tensor* w = find_param(hps, "vis.psi.w", false);
    ASSERT_NE(gw, nullptr);
    for (size_t i = 0; i < 3; ++i) {
      double num = testutil::central_diff(eval, &(*w)[i]);
      EXPECT_NEAR((*gw)[i], num, 1e-3 * std::max(std::abs(num), std::abs((*gw)[i])) + 1e-7);
    }
  }
}
