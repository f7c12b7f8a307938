#pragma once

#include <cmath>

#include "occlm/tensor.hpp"

namespace occlm {

struct LossWeights {
  std::vector<Scalar> stage;  // lambda_k, length K
  Scalar point = 0.5;
  Scalar edge = 0.5;
  Scalar vis = 1.0;
  Scalar syn = 1.0;
};

inline void validate_loss_weights(const LossWeights& w, int stacks) {
  if (w.stage.size() != static_cast<size_t>(stacks))
    throw std::runtime_error("loss: stage weight count != stacks");
  for (Scalar s : w.stage)
    if (s < 0) throw std::runtime_error("loss: negative stage weight");
  if (w.point < 0 || w.edge < 0 || w.vis < 0 || w.syn < 0)
    throw std::runtime_error("loss: negative weight");
}

// sum_k lambda_k (1/P) sum_p ||Hhat_p - H_p||^2; grads accumulate into
// g_stage when provided.
inline Scalar heatmap_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& target,
                           const std::vector<Scalar>& lambda, std::vector<Tensor>* g_stage = nullptr) {
  if (pred.size() != target.size() || pred.size() != lambda.size())
    throw std::runtime_error("heatmap loss: stage count mismatch");
  Scalar total = 0;
  if (g_stage) g_stage->resize(pred.size());
  for (size_t k = 0; k < pred.size(); ++k) {
    check_shape(pred[k], target[k].shape(), "heatmap loss stage");
    int P = pred[k].shape()[0];
    Scalar inv_p = 1.0 / P;
    Scalar acc = 0;
    if (g_stage) (*g_stage)[k] = Tensor(pred[k].shape());
    for (size_t i = 0; i < pred[k].numel(); ++i) {
      Scalar d = pred[k][i] - target[k][i];
      acc += d * d;
      if (g_stage) (*g_stage)[k][i] = lambda[k] * inv_p * 2.0 * d;
    }
    total += lambda[k] * inv_p * acc;
  }
  return total;
}

// (1/C) ||pred - target||^2 over all cells, C = channel count.
inline Scalar map_mse(const Tensor& pred, const Tensor& target, Tensor* grad = nullptr) {
  check_shape(pred, target.shape(), "map mse");
  int C = pred.shape()[0];
  Scalar inv_c = 1.0 / C;
  Scalar acc = 0;
  if (grad) *grad = Tensor(pred.shape());
  for (size_t i = 0; i < pred.numel(); ++i) {
    Scalar d = pred[i] - target[i];
    acc += d * d;
    if (grad) (*grad)[i] = inv_c * 2.0 * d;
  }
  return inv_c * acc;
}

// (1/P) sum BCE with probability clamping at 1e-7.
inline Scalar visibility_loss(const Tensor& v_hat, const Tensor& v, Tensor* grad = nullptr) {
  if (v_hat.numel() != v.numel()) throw std::runtime_error("visibility loss: length mismatch");
  constexpr Scalar eps = 1e-7;
  int P = static_cast<int>(v_hat.numel());
  Scalar inv_p = 1.0 / P;
  Scalar acc = 0;
  if (grad) *grad = Tensor(v_hat.shape());
  for (size_t i = 0; i < v_hat.numel(); ++i) {
    Scalar q = std::min(std::max(v_hat[i], eps), 1.0 - eps);
    acc += -(v[i] * std::log(q) + (1.0 - v[i]) * std::log(1.0 - q));
    if (grad) {
      bool clamped = v_hat[i] < eps || v_hat[i] > 1.0 - eps;
      (*grad)[i] = clamped ? 0.0 : inv_p * (q - v[i]) / (q * (1.0 - q));
    }
  }
  return inv_p * acc;
}

struct LossComponents {
  Scalar hm = 0;
  Scalar point = 0;
  Scalar edge = 0;
  Scalar vis = 0;   // manual labels
  Scalar syn = 0;   // pseudo labels on masked views
};

// L = L_hm + lambda_pt L_pt + lambda_edge L_edge + lambda_vis L_vis +
// lambda_syn L_syn; warm start forces the visibility weights to zero.
inline Scalar total_loss(const LossComponents& c, const LossWeights& w, bool warm_start) {
  for (Scalar x : {c.hm, c.point, c.edge, c.vis, c.syn})
    if (!std::isfinite(x)) throw std::runtime_error("total loss: non-finite component");
  Scalar lv = warm_start ? 0.0 : w.vis;
  Scalar ls = warm_start ? 0.0 : w.syn;
  return c.hm + w.point * c.point + w.edge * c.edge + lv * c.vis + ls * c.syn;
}

}  // namespace occlm
