#include "occlm/nn.hpp"

#include <gtest/gtest.h>

#include "testutil.hpp"

using namespace occlm;
using testutil::dot;
using testutil::expect_grad_matches;
using testutil::randomize;
using testutil::zero_grads;

// Run one analytic backward pass, then sweep input and every parameter with
// central differences of the scalar loss dot(forward(x), r).
template <class Layer>
static void gradcheck_layer(Layer& layer, Tensor x, Rng& rng, const std::string& label) {
  Tensor y = layer.forward(x);
  Tensor r(y.shape());
  randomize(r, rng);
  auto eval = [&]() { return dot(layer.forward(x), r); };

  std::vector<ParamRef> params;
  if constexpr (requires { layer.params("p", params); }) layer.params("p", params);
  zero_grads(params);
  layer.forward(x);
  Tensor gx = layer.backward(r);
  expect_grad_matches(eval, x, gx, label + " input");
  for (auto& p : params) expect_grad_matches(eval, *p.value, *p.grad, label + " " + p.name);
}

TEST(Init, KaimingScaleAndDeterminism) {
  Rng a(7), b(7), c(8);
  Tensor w1({64, 64}), w2({64, 64}), w3({64, 64});
  kaiming_init(w1, 64, a);
  kaiming_init(w2, 64, b);
  kaiming_init(w3, 64, c);
  double ss = 0;
  for (size_t i = 0; i < w1.numel(); ++i) {
    EXPECT_EQ(w1[i], w2[i]);
    ss += w1[i] * w1[i];
  }
  double std_obs = std::sqrt(ss / w1.numel());
  EXPECT_NEAR(std_obs, std::sqrt(2.0 / 64), 0.2 * std::sqrt(2.0 / 64));
  bool differs = false;
  for (size_t i = 0; i < w1.numel(); ++i) differs |= w1[i] != w3[i];
  EXPECT_TRUE(differs);
}

TEST(Conv2d, GradDense) {
  Rng rng(11);
  Conv2d conv(3, 4, 3, 1, 1, rng);
  Tensor x({3, 6, 6});
  randomize(x, rng);
  gradcheck_layer(conv, x, rng, "conv3x3");
}

TEST(Conv2d, GradStrided) {
  Rng rng(12);
  Conv2d conv(3, 4, 3, 2, 1, rng);
  Tensor x({3, 6, 6});
  randomize(x, rng);
  gradcheck_layer(conv, x, rng, "conv3x3s2");
}

TEST(Conv2d, GradGroupedNoBias) {
  Rng rng(13);
  Conv2d conv(4, 4, 3, 1, 1, rng, 2, false);
  Tensor x({4, 5, 5});
  randomize(x, rng);
  gradcheck_layer(conv, x, rng, "conv-grouped");
  std::vector<ParamRef> ps;
  conv.params("g", ps);
  EXPECT_EQ(ps.size(), 1u);  // bias-free
}

TEST(Conv2d, GradPointwise) {
  Rng rng(14);
  Conv2d conv(5, 3, 1, 1, 0, rng);
  Tensor x({5, 4, 4});
  randomize(x, rng);
  gradcheck_layer(conv, x, rng, "conv1x1");
}

TEST(Conv2d, RejectsBadShapes) {
  Rng rng(15);
  EXPECT_THROW(Conv2d(3, 4, 3, 1, 1, rng, 2), std::runtime_error);
  Conv2d conv(3, 4, 3, 1, 1, rng);
  Tensor bad({2, 6, 6});
  EXPECT_THROW(conv.forward(bad), std::runtime_error);
}

TEST(Activations, GradReLU) {
  Rng rng(16);
  ReLU relu;
  Tensor x({3, 4, 4});
  randomize(x, rng);
  for (size_t i = 0; i < x.numel(); ++i)
    if (std::abs(x[i]) < 1e-3) x[i] = 0.5;  // keep clear of the kink
  gradcheck_layer(relu, x, rng, "relu");
}

TEST(Activations, GradSigmoid) {
  Rng rng(17);
  Sigmoid sig;
  Tensor x({2, 3, 3});
  randomize(x, rng);
  gradcheck_layer(sig, x, rng, "sigmoid");
}

TEST(Pooling, GradAvgPool2) {
  Rng rng(18);
  AvgPool2 pool;
  Tensor x({3, 6, 6});
  randomize(x, rng);
  gradcheck_layer(pool, x, rng, "avgpool2");
  Tensor odd({3, 5, 6});
  EXPECT_THROW(pool.forward(odd), std::runtime_error);
}

TEST(Pooling, GradUpsample) {
  Rng rng(19);
  UpsampleNearest2 up;
  Tensor x({3, 3, 3});
  randomize(x, rng);
  gradcheck_layer(up, x, rng, "upsample2");
}

TEST(Pooling, GradGlobalAvg) {
  Rng rng(20);
  GlobalAvgPool gap;
  Tensor x({4, 5, 5});
  randomize(x, rng);
  gradcheck_layer(gap, x, rng, "gap");
}

TEST(Linear, Grad) {
  Rng rng(21);
  Linear lin(6, 4, rng);
  Tensor x({6});
  randomize(x, rng);
  gradcheck_layer(lin, x, rng, "linear");
}

TEST(ResBlock, GradIdentitySkip) {
  Rng rng(22);
  ResBlock blk(4, 4, rng);
  Tensor x({4, 5, 5});
  randomize(x, rng);
  gradcheck_layer(blk, x, rng, "resblock-id");
}

TEST(ResBlock, GradProjectedSkip) {
  Rng rng(23);
  ResBlock blk(3, 5, rng);
  Tensor x({3, 4, 4});
  randomize(x, rng);
  gradcheck_layer(blk, x, rng, "resblock-proj");
  std::vector<ParamRef> ps;
  blk.params("r", ps);
  bool has_proj = false, proj_bias = false;
  for (auto& p : ps) {
    if (p.name == "r.proj.w") has_proj = true;
    if (p.name == "r.proj.b") proj_bias = true;
  }
  EXPECT_TRUE(has_proj);
  EXPECT_FALSE(proj_bias);
}
