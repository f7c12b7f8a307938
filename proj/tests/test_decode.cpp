#include "occlm/decode.hpp"

#include <gtest/gtest.h>

#include "testutil.hpp"

using namespace occlm;
using testutil::dot;
using testutil::randomize;
using testutil::randomize_positive;

// Independent reference: naive masked softmax and expectation, no max shift.
static void decode_oracle(const Tensor& hm, const Tensor& pp, const Tensor& ev, double T,
                          int stride, Tensor& coords, Tensor& att) {
  const auto& s = hm.shape();
  coords = Tensor({s[0], 2});
  att = Tensor(s);
  for (int p = 0; p < s[0]; ++p) {
    double z = 0;
    for (int v = 0; v < s[1]; ++v)
      for (int u = 0; u < s[2]; ++u) {
        double e = std::exp(hm.at(p, v, u) * pp.at(p, v, u) * ev.at(p, v, u) / T);
        att.at(p, v, u) = e;
        z += e;
      }
    double ex = 0, ey = 0;
    for (int v = 0; v < s[1]; ++v)
      for (int u = 0; u < s[2]; ++u) {
        att.at(p, v, u) /= z;
        ex += u * att.at(p, v, u);
        ey += v * att.at(p, v, u);
      }
    coords.at(p, 0) = (ex + 0.5) * stride;
    coords.at(p, 1) = (ey + 0.5) * stride;
  }
}

static LandmarkLayout tiny_layout() {
  LandmarkLayout L;
  L.num_points = 4;
  L.edges.push_back({"a", {0, 1}});
  L.edges.push_back({"b", {1, 2}});
  L.edge_membership = compute_edge_membership(L.edges, L.num_points);
  return L;
}

TEST(Evidence, SumsMemberEdgesAndBypassesLoners) {
  LandmarkLayout L = tiny_layout();
  Tensor edge_pred({2, 2, 3});
  Rng rng(31);
  randomize_positive(edge_pred, rng, 0.0, 1.0);
  Tensor ev = aggregate_edge_evidence(edge_pred, L);
  ASSERT_EQ(ev.shape(), (std::vector<int>{4, 2, 3}));
  for (int v = 0; v < 2; ++v)
    for (int u = 0; u < 3; ++u) {
      EXPECT_DOUBLE_EQ(ev.at(0, v, u), edge_pred.at(0, v, u));
      EXPECT_DOUBLE_EQ(ev.at(1, v, u), edge_pred.at(0, v, u) + edge_pred.at(1, v, u));
      EXPECT_DOUBLE_EQ(ev.at(2, v, u), edge_pred.at(1, v, u));
      EXPECT_DOUBLE_EQ(ev.at(3, v, u), 1.0);  // no incident edges
    }
  Tensor bad({3, 2, 3});
  EXPECT_THROW(aggregate_edge_evidence(bad, L), std::runtime_error);
}

TEST(Evidence, BackwardIsTransposeOfForward) {
  LandmarkLayout L = tiny_layout();
  Tensor g({4, 2, 2});
  Rng rng(32);
  randomize(g, rng);
  Tensor ge = aggregate_edge_evidence_backward(g, L);
  ASSERT_EQ(ge.shape(), (std::vector<int>{2, 2, 2}));
  for (int v = 0; v < 2; ++v)
    for (int u = 0; u < 2; ++u) {
      EXPECT_DOUBLE_EQ(ge.at(0, v, u), g.at(0, v, u) + g.at(1, v, u));
      EXPECT_DOUBLE_EQ(ge.at(1, v, u), g.at(1, v, u) + g.at(2, v, u));
    }
}

TEST(Decode, MatchesBruteForceOracle) {
  Rng rng(33);
  int P = 5, h = 6, w = 7;
  Tensor hm({P, h, w}), pp({P, h, w}), ev({P, h, w});
  randomize(hm, rng, 0.8);
  randomize_positive(pp, rng, 0.01, 0.99);
  randomize_positive(ev, rng, 0.0, 2.5);
  Tensor oc, oa;
  decode_oracle(hm, pp, ev, 0.7, 4, oc, oa);

  DecodeOp op;
  DecodeResult r = op.forward(hm, pp, ev, 0.7, 4);
  for (size_t i = 0; i < oc.numel(); ++i) EXPECT_NEAR(r.coords[i], oc[i], 1e-12);
  for (size_t i = 0; i < oa.numel(); ++i) EXPECT_NEAR(r.attention[i], oa[i], 1e-12);
  for (int p = 0; p < P; ++p)
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u)
        EXPECT_DOUBLE_EQ(r.mask.at(p, v, u), pp.at(p, v, u) * ev.at(p, v, u));
}

TEST(Decode, AttentionChannelsAreDistributions) {
  Rng rng(34);
  Tensor hm({3, 4, 4}), pp({3, 4, 4}), ev({3, 4, 4});
  randomize(hm, rng);
  randomize_positive(pp, rng, 0.0, 1.0);
  ev.fill(1.0);
  DecodeOp op;
  DecodeResult r = op.forward(hm, pp, ev, 1.0, 4);
  for (int p = 0; p < 3; ++p) {
    double sum = 0;
    for (int v = 0; v < 4; ++v)
      for (int u = 0; u < 4; ++u) {
        EXPECT_GE(r.attention.at(p, v, u), 0.0);
        sum += r.attention.at(p, v, u);
      }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Decode, CellCenterConvention) {
  // one dominant logit at (v,u)=(2,5) under a sharp temperature
  Tensor hm({1, 8, 8}), pp({1, 8, 8}), ev({1, 8, 8});
  pp.fill(1.0);
  ev.fill(1.0);
  hm.at(0, 2, 5) = 1.0;
  DecodeOp op;
  DecodeResult r = op.forward(hm, pp, ev, 0.02, 4);
  EXPECT_NEAR(r.coords.at(0, 0), (5 + 0.5) * 4, 1e-6);
  EXPECT_NEAR(r.coords.at(0, 1), (2 + 0.5) * 4, 1e-6);
}

TEST(Decode, AllOnesMaskIsPlainSoftArgmax) {
  Rng rng(35);
  Tensor hm({4, 5, 5}), ones({4, 5, 5});
  randomize(hm, rng);
  ones.fill(1.0);
  DecodeOp op;
  DecodeResult gated = op.forward(hm, ones, ones, 1.0, 2);
  // plain soft-argmax oracle on the raw heatmap
  Tensor oc, oa;
  decode_oracle(hm, ones, ones, 1.0, 2, oc, oa);
  for (size_t i = 0; i < oc.numel(); ++i) EXPECT_NEAR(gated.coords[i], oc[i], 1e-12);
  // shift invariance of the softmax under an all-ones mask
  Tensor shifted = hm;
  for (size_t i = 0; i < shifted.numel(); ++i) shifted[i] += 3.25;
  DecodeResult r2 = op.forward(shifted, ones, ones, 1.0, 2);
  for (size_t i = 0; i < gated.coords.numel(); ++i)
    EXPECT_NEAR(r2.coords[i], gated.coords[i], 1e-9);
}

TEST(Decode, SharperTemperatureConcentratesAttention) {
  Rng rng(36);
  Tensor hm({1, 6, 6}), pp({1, 6, 6}), ev({1, 6, 6});
  randomize(hm, rng);
  pp.fill(1.0);
  ev.fill(1.0);
  DecodeOp op;
  double m1 = 0, m2 = 0;
  DecodeResult a = op.forward(hm, pp, ev, 1.0, 4);
  for (size_t i = 0; i < a.attention.numel(); ++i) m1 = std::max(m1, a.attention[i]);
  DecodeResult b = op.forward(hm, pp, ev, 0.1, 4);
  for (size_t i = 0; i < b.attention.numel(); ++i) m2 = std::max(m2, b.attention[i]);
  EXPECT_GT(m2, m1);
}

TEST(Decode, RejectsBadInputs) {
  Tensor hm({1, 4, 4}), pp({1, 4, 4}), ev({1, 4, 4});
  DecodeOp op;
  EXPECT_THROW(op.forward(hm, pp, ev, 0.0, 4), std::runtime_error);
  EXPECT_THROW(op.forward(hm, pp, ev, -1.0, 4), std::runtime_error);
  Tensor wrong({1, 4, 5});
  EXPECT_THROW(op.forward(hm, pp, wrong, 1.0, 4), std::runtime_error);
  hm.at(0, 1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(op.forward(hm, pp, ev, 1.0, 4), std::runtime_error);
}

TEST(Decode, GradientsMatchFiniteDifferences) {
  Rng rng(37);
  int P = 2, h = 5, w = 6;
  Tensor hm({P, h, w}), pp({P, h, w}), ev({P, h, w});
  randomize(hm, rng, 0.6);
  randomize_positive(pp, rng, 0.05, 0.95);
  randomize_positive(ev, rng, 0.1, 2.0);
  Tensor rc({P, 2}), ra({P, h, w});
  randomize(rc, rng);
  randomize(ra, rng);

  DecodeOp op;
  auto eval = [&]() {
    DecodeResult r = op.forward(hm, pp, ev, 0.8, 4);
    return dot(r.coords, rc) + dot(r.attention, ra);
  };
  op.forward(hm, pp, ev, 0.8, 4);
  DecodeGrads g = op.backward(rc, ra);
  testutil::expect_grad_matches(eval, hm, g.heatmaps, "decode heatmaps");
  testutil::expect_grad_matches(eval, pp, g.point_pred, "decode point_pred");
  testutil::expect_grad_matches(eval, ev, g.evidence, "decode evidence");
}

TEST(Decode, CoordinateOnlyGradients) {
  Rng rng(38);
  int P = 2, h = 4, w = 4;
  Tensor hm({P, h, w}), pp({P, h, w}), ev({P, h, w});
  randomize(hm, rng, 0.6);
  randomize_positive(pp, rng, 0.05, 0.95);
  ev.fill(1.0);
  Tensor rc({P, 2});
  randomize(rc, rng);
  DecodeOp op;
  auto eval = [&]() { return dot(op.forward(hm, pp, ev, 1.0, 4).coords, rc); };
  op.forward(hm, pp, ev, 1.0, 4);
  DecodeGrads g = op.backward(rc, Tensor());
  testutil::expect_grad_matches(eval, hm, g.heatmaps, "coords-only heatmaps");
}
