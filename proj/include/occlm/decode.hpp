#pragma once

#include <cmath>

#include "occlm/layout.hpp"
#include "occlm/tensor.hpp"

namespace occlm {

struct DecodeResult {
  Tensor attention;  // (P, h', w'), each channel a distribution
  Tensor coords;     // (P, 2) crop coordinates (x, y)
  Tensor evidence;   // (P, h', w')
  Tensor mask;       // (P, h', w')
};

// A_p = sum of the edge channels containing p; all-ones when p has no edges
// so the multiplicative gate passes heatmap responses through untouched.
inline Tensor aggregate_edge_evidence(const Tensor& edge_pred, const LandmarkLayout& layout) {
  const auto& s = edge_pred.shape();
  if (s.size() != 3 || s[0] != static_cast<int>(layout.edges.size()))
    throw std::runtime_error("evidence: edge_pred shape mismatch");
  Tensor out({layout.num_points, s[1], s[2]});
  for (int p = 0; p < layout.num_points; ++p) {
    const auto& es = layout.edge_membership[static_cast<size_t>(p)];
    if (es.empty()) {
      for (int v = 0; v < s[1]; ++v)
        for (int u = 0; u < s[2]; ++u) out.at(p, v, u) = 1.0;
      continue;
    }
    for (int e : es)
      for (int v = 0; v < s[1]; ++v)
        for (int u = 0; u < s[2]; ++u) out.at(p, v, u) += edge_pred.at(e, v, u);
  }
  return out;
}

inline Tensor aggregate_edge_evidence_backward(const Tensor& g_evidence,
                                               const LandmarkLayout& layout) {
  const auto& s = g_evidence.shape();
  Tensor ge({static_cast<int>(layout.edges.size()), s[1], s[2]});
  for (int p = 0; p < layout.num_points; ++p)
    for (int e : layout.edge_membership[static_cast<size_t>(p)])
      for (int v = 0; v < s[1]; ++v)
        for (int u = 0; u < s[2]; ++u) ge.at(e, v, u) += g_evidence.at(p, v, u);
  return ge;
}

struct DecodeGrads {
  Tensor heatmaps;
  Tensor point_pred;
  Tensor evidence;
};

// M = P_hat * A, logits = H * M, attention = softmax(logits / T), coordinates
// by expectation, heatmap -> crop via cell centers.
class DecodeOp {
 public:
  DecodeResult forward(const Tensor& heatmaps, const Tensor& point_pred, const Tensor& evidence,
                       Scalar temperature, int stride) {
    if (temperature <= 0) throw std::runtime_error("decode: temperature must be positive");
    if (!heatmaps.all_finite() || !point_pred.all_finite() || !evidence.all_finite())
      throw std::runtime_error("decode: non-finite input");
    check_shape(point_pred, heatmaps.shape(), "decode point_pred");
    check_shape(evidence, heatmaps.shape(), "decode evidence");
    const auto& s = heatmaps.shape();
    int P = s[0], h = s[1], w = s[2];
    h_ = heatmaps;
    p_ = point_pred;
    a_ = evidence;
    temp_ = temperature;
    stride_ = stride;

    DecodeResult r;
    r.evidence = evidence;
    r.mask = Tensor({P, h, w});
    r.attention = Tensor({P, h, w});
    r.coords = Tensor({P, 2});
    for (int p = 0; p < P; ++p) {
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
          Scalar m = point_pred.at(p, v, u) * evidence.at(p, v, u);
          r.mask.at(p, v, u) = m;
          mx = std::max(mx, heatmaps.at(p, v, u) * m / temperature);
        }
      Scalar z = 0;
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
          Scalar e = std::exp(heatmaps.at(p, v, u) * r.mask.at(p, v, u) / temperature - mx);
          r.attention.at(p, v, u) = e;
          z += e;
        }
      Scalar ex = 0, ey = 0;
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
          Scalar t = r.attention.at(p, v, u) / z;
          r.attention.at(p, v, u) = t;
          ex += u * t;
          ey += v * t;
        }
      r.coords.at(p, 0) = (ex + 0.5) * stride;
      r.coords.at(p, 1) = (ey + 0.5) * stride;
    }
    att_ = r.attention;
    return r;
  }

  // g_coords: (P,2) in crop units; g_attention: (P,h,w) or empty.
  DecodeGrads backward(const Tensor& g_coords, const Tensor& g_attention) {
    const auto& s = h_.shape();
    int P = s[0], h = s[1], w = s[2];
    DecodeGrads g;
    g.heatmaps = Tensor({P, h, w});
    g.point_pred = Tensor({P, h, w});
    g.evidence = Tensor({P, h, w});
    bool has_att = g_attention.numel() > 0;
    for (int p = 0; p < P; ++p) {
      // dL/d attention cell, from coordinates and any direct attention use
      Scalar gx = g_coords.numel() ? g_coords.at(p, 0) * stride_ : 0;
      Scalar gy = g_coords.numel() ? g_coords.at(p, 1) * stride_ : 0;
      Scalar dot = 0;
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
          Scalar ga = gx * u + gy * v;
          if (has_att) ga += g_attention.at(p, v, u);
          dot += ga * att_.at(p, v, u);
        }
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
          Scalar ga = gx * u + gy * v;
          if (has_att) ga += g_attention.at(p, v, u);
          Scalar gl = att_.at(p, v, u) * (ga - dot) / temp_;  // softmax jacobian
          Scalar hm = h_.at(p, v, u);
          Scalar pm = p_.at(p, v, u);
          Scalar am = a_.at(p, v, u);
          g.heatmaps.at(p, v, u) = gl * pm * am;
          g.point_pred.at(p, v, u) = gl * hm * am;
          g.evidence.at(p, v, u) = gl * hm * pm;
        }
    }
    return g;
  }

 private:
  Tensor h_, p_, a_, att_;
  Scalar temp_ = 1.0;
  int stride_ = 4;
};

}  // namespace occlm
