#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "occlm/common.hpp"
#include "occlm/tensor.hpp"

namespace occlm {

// Named handle on a parameter tensor and its gradient accumulator.
struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

inline void kaiming_init(Tensor& w, int fan_in, Rng& rng) {
  Scalar std = std::sqrt(2.0 / fan_in);
  for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal() * std;
}

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_c, int out_c, int k, int stride, int pad, Rng& rng, int groups = 1,
         bool bias = true)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad), groups_(groups),
        has_bias_(bias) {
    if (in_c % groups != 0 || out_c % groups != 0)
      throw std::runtime_error("conv: channels not divisible by groups");
    int icg = in_c / groups;
    w_ = Tensor({out_c, icg, k, k});
    gw_ = Tensor({out_c, icg, k, k});
    kaiming_init(w_, icg * k * k, rng);
    b_ = Tensor({out_c});
    gb_ = Tensor({out_c});
  }

  Tensor forward(const Tensor& x) {
    const auto& s = x.shape();
    if (s.size() != 3 || s[0] != in_c_) throw std::runtime_error("conv: input shape mismatch");
    x_ = x;
    int H = s[1], W = s[2];
    int Ho = (H + 2 * pad_ - k_) / stride_ + 1;
    int Wo = (W + 2 * pad_ - k_) / stride_ + 1;
    if (Ho <= 0 || Wo <= 0) throw std::runtime_error("conv: output collapses to zero size");
    Tensor y({out_c_, Ho, Wo});
    int icg = in_c_ / groups_, ocg = out_c_ / groups_;
    for (int oc = 0; oc < out_c_; ++oc) {
      int g = oc / ocg;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          Scalar acc = has_bias_ ? b_.at(oc) : 0.0;
          for (int ic = 0; ic < icg; ++ic)
            for (int ky = 0; ky < k_; ++ky) {
              int iy = oy * stride_ + ky - pad_;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < k_; ++kx) {
                int ix = ox * stride_ + kx - pad_;
                if (ix < 0 || ix >= W) continue;
                acc += w_.at(oc, ic, ky, kx) * x.at(g * icg + ic, iy, ix);
              }
            }
          y.at(oc, oy, ox) = acc;
        }
    }
    return y;
  }

  Tensor backward(const Tensor& gy) {
    const auto& s = x_.shape();
    int H = s[1], W = s[2];
    int Ho = gy.shape()[1], Wo = gy.shape()[2];
    Tensor gx(s);
    int icg = in_c_ / groups_, ocg = out_c_ / groups_;
    for (int oc = 0; oc < out_c_; ++oc) {
      int g = oc / ocg;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          Scalar go = gy.at(oc, oy, ox);
          if (has_bias_) gb_.at(oc) += go;
          for (int ic = 0; ic < icg; ++ic)
            for (int ky = 0; ky < k_; ++ky) {
              int iy = oy * stride_ + ky - pad_;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < k_; ++kx) {
                int ix = ox * stride_ + kx - pad_;
                if (ix < 0 || ix >= W) continue;
                gw_.at(oc, ic, ky, kx) += go * x_.at(g * icg + ic, iy, ix);
                gx.at(g * icg + ic, iy, ix) += go * w_.at(oc, ic, ky, kx);
              }
            }
        }
    }
    return gx;
  }

  void params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".w", &w_, &gw_});
    if (has_bias_) out.push_back({prefix + ".b", &b_, &gb_});
  }

  int out_channels() const { return out_c_; }

 private:
  int in_c_ = 0, out_c_ = 0, k_ = 0, stride_ = 1, pad_ = 0, groups_ = 1;
  bool has_bias_ = true;
  Tensor w_, b_, gw_, gb_, x_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x) {
    x_ = x;
    Tensor y(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0 ? x[i] : 0;
    return y;
  }
  Tensor backward(const Tensor& gy) {
    Tensor gx(x_.shape());
    for (size_t i = 0; i < gy.numel(); ++i) gx[i] = x_[i] > 0 ? gy[i] : 0;
    return gx;
  }

 private:
  Tensor x_;
};

class Sigmoid {
 public:
  Tensor forward(const Tensor& x) {
    y_ = Tensor(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) y_[i] = 1.0 / (1.0 + std::exp(-x[i]));
    return y_;
  }
  Tensor backward(const Tensor& gy) {
    Tensor gx(y_.shape());
    for (size_t i = 0; i < gy.numel(); ++i) gx[i] = gy[i] * y_[i] * (1.0 - y_[i]);
    return gx;
  }

 private:
  Tensor y_;
};

// 2x2 average pooling, stride 2; spatial dims must be even so the hourglass
// stays symmetric.
class AvgPool2 {
 public:
  Tensor forward(const Tensor& x) {
    const auto& s = x.shape();
    if (s[1] % 2 || s[2] % 2) throw std::runtime_error("avgpool: odd spatial size");
    in_shape_ = s;
    Tensor y({s[0], s[1] / 2, s[2] / 2});
    for (int c = 0; c < s[0]; ++c)
      for (int y0 = 0; y0 < s[1] / 2; ++y0)
        for (int x0 = 0; x0 < s[2] / 2; ++x0)
          y.at(c, y0, x0) = 0.25 * (x.at(c, 2 * y0, 2 * x0) + x.at(c, 2 * y0, 2 * x0 + 1) +
                                    x.at(c, 2 * y0 + 1, 2 * x0) + x.at(c, 2 * y0 + 1, 2 * x0 + 1));
    return y;
  }
  Tensor backward(const Tensor& gy) {
    Tensor gx(in_shape_);
    const auto& s = gy.shape();
    for (int c = 0; c < s[0]; ++c)
      for (int y0 = 0; y0 < s[1]; ++y0)
        for (int x0 = 0; x0 < s[2]; ++x0) {
          Scalar g = 0.25 * gy.at(c, y0, x0);
          gx.at(c, 2 * y0, 2 * x0) += g;
          gx.at(c, 2 * y0, 2 * x0 + 1) += g;
          gx.at(c, 2 * y0 + 1, 2 * x0) += g;
          gx.at(c, 2 * y0 + 1, 2 * x0 + 1) += g;
        }
    return gx;
  }

 private:
  std::vector<int> in_shape_;
};

class UpsampleNearest2 {
 public:
  Tensor forward(const Tensor& x) {
    const auto& s = x.shape();
    in_shape_ = s;
    Tensor y({s[0], s[1] * 2, s[2] * 2});
    for (int c = 0; c < s[0]; ++c)
      for (int yy = 0; yy < s[1] * 2; ++yy)
        for (int xx = 0; xx < s[2] * 2; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
    return y;
  }
  Tensor backward(const Tensor& gy) {
    Tensor gx(in_shape_);
    const auto& s = gy.shape();
    for (int c = 0; c < s[0]; ++c)
      for (int yy = 0; yy < s[1]; ++yy)
        for (int xx = 0; xx < s[2]; ++xx) gx.at(c, yy / 2, xx / 2) += gy.at(c, yy, xx);
    return gx;
  }

 private:
  std::vector<int> in_shape_;
};

// (C,H,W) -> (C) spatial mean.
class GlobalAvgPool {
 public:
  Tensor forward(const Tensor& x) {
    const auto& s = x.shape();
    in_shape_ = s;
    Tensor y({s[0]});
    Scalar inv = 1.0 / (s[1] * s[2]);
    for (int c = 0; c < s[0]; ++c) {
      Scalar acc = 0;
      for (int yy = 0; yy < s[1]; ++yy)
        for (int xx = 0; xx < s[2]; ++xx) acc += x.at(c, yy, xx);
      y.at(c) = acc * inv;
    }
    return y;
  }
  Tensor backward(const Tensor& gy) {
    Tensor gx(in_shape_);
    Scalar inv = 1.0 / (in_shape_[1] * in_shape_[2]);
    for (int c = 0; c < in_shape_[0]; ++c) {
      Scalar g = gy.at(c) * inv;
      for (int yy = 0; yy < in_shape_[1]; ++yy)
        for (int xx = 0; xx < in_shape_[2]; ++xx) gx.at(c, yy, xx) = g;
    }
    return gx;
  }

 private:
  std::vector<int> in_shape_;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in_n, int out_n, Rng& rng) : in_n_(in_n), out_n_(out_n) {
    w_ = Tensor({out_n, in_n});
    gw_ = Tensor({out_n, in_n});
    kaiming_init(w_, in_n, rng);
    b_ = Tensor({out_n});
    gb_ = Tensor({out_n});
  }
  Tensor forward(const Tensor& x) {
    x_ = x;
    Tensor y({out_n_});
    for (int o = 0; o < out_n_; ++o) {
      Scalar acc = b_.at(o);
      for (int i = 0; i < in_n_; ++i) acc += w_.at(o, i) * x[static_cast<size_t>(i)];
      y.at(o) = acc;
    }
    return y;
  }
  Tensor backward(const Tensor& gy) {
    Tensor gx({in_n_});
    for (int o = 0; o < out_n_; ++o) {
      gb_.at(o) += gy.at(o);
      for (int i = 0; i < in_n_; ++i) {
        gw_.at(o, i) += gy.at(o) * x_[static_cast<size_t>(i)];
        gx.at(i) += gy.at(o) * w_.at(o, i);
      }
    }
    return gx;
  }
  void params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".w", &w_, &gw_});
    out.push_back({prefix + ".b", &b_, &gb_});
  }

 private:
  int in_n_ = 0, out_n_ = 0;
  Tensor w_, b_, gw_, gb_, x_;
};

// conv3x3 -> relu -> conv3x3 with identity (or 1x1-projected) skip, relu out.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int in_c, int out_c, Rng& rng) : project_(in_c != out_c) {
    conv1_ = Conv2d(in_c, out_c, 3, 1, 1, rng);
    conv2_ = Conv2d(out_c, out_c, 3, 1, 1, rng);
    if (project_) proj_ = Conv2d(in_c, out_c, 1, 1, 0, rng, 1, false);
    // damp the closing conv so deep unnormalized stacks keep unit-scale
    // activations at init (scaled Kaiming)
    std::vector<ParamRef> ps;
    conv2_.params("", ps);
    ps[0].value->scale_(0.1);
  }
  Tensor forward(const Tensor& x) {
    Tensor h = relu1_.forward(conv1_.forward(x));
    Tensor m = conv2_.forward(h);
    Tensor skip = project_ ? proj_.forward(x) : x;
    m.add_(skip);
    return relu2_.forward(m);
  }
  Tensor backward(const Tensor& gy) {
    Tensor g = relu2_.backward(gy);
    Tensor gx = conv1_.backward(relu1_.backward(conv2_.backward(g)));
    if (project_)
      gx.add_(proj_.backward(g));
    else
      gx.add_(g);
    return gx;
  }
  void params(const std::string& prefix, std::vector<ParamRef>& out) {
    conv1_.params(prefix + ".conv1", out);
    conv2_.params(prefix + ".conv2", out);
    if (project_) proj_.params(prefix + ".proj", out);
  }

 private:
  bool project_ = false;
  Conv2d conv1_, conv2_, proj_;
  ReLU relu1_, relu2_;
};

}  // namespace occlm
