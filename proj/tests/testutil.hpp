#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "occlm/common.hpp"
#include "occlm/nn.hpp"
#include "occlm/tensor.hpp"

namespace testutil {

inline void randomize(occlm::Tensor& t, occlm::Rng& rng, double scale = 1.0) {
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
}

inline void randomize_positive(occlm::Tensor& t, occlm::Rng& rng, double lo, double hi) {
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
}

inline double dot(const occlm::Tensor& a, const occlm::Tensor& b) {
  EXPECT_EQ(a.numel(), b.numel());
  double acc = 0;
  for (size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

// Central difference of eval() wrt one scalar slot.
template <class Eval>
double central_diff(Eval&& eval, double* x, double eps = 1e-5) {
  double orig = *x;
  *x = orig + eps;
  double fp = eval();
  *x = orig - eps;
  double fm = eval();
  *x = orig;
  return (fp - fm) / (2 * eps);
}

// Compare an analytic gradient tensor against central differences, element by
// element. Accept |num - ana| <= rel * max(|num|, |ana|) + abs.
template <class Eval>
void expect_grad_matches(Eval&& eval, occlm::Tensor& x, const occlm::Tensor& gx,
                         const std::string& label, double rel = 1e-3, double abs = 1e-7) {
  ASSERT_EQ(x.numel(), gx.numel()) << label;
  for (size_t i = 0; i < x.numel(); ++i) {
    double num = central_diff(eval, &x[i]);
    double ana = gx[i];
    double tol = rel * std::max(std::abs(num), std::abs(ana)) + abs;
    EXPECT_NEAR(ana, num, tol) << label << " element " << i;
  }
}

inline void zero_grads(std::vector<occlm::ParamRef>& params) {
  for (auto& p : params) p.grad->zero();
}

inline occlm::Tensor* find_param(std::vector<occlm::ParamRef>& params, const std::string& name,
                                 bool grad = false) {
  for (auto& p : params)
    if (p.name == name) return grad ? p.grad : p.value;
  ADD_FAILURE() << "missing parameter " << name;
  return nullptr;
}

}  // namespace testutil
