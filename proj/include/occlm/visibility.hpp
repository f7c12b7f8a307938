#pragma once

#include <cmath>

#include "occlm/nn.hpp"
#include "occlm/tensor.hpp"

namespace occlm {

// Ablation switch for combining the two branches; kGated with alpha == 0 is
// bitwise-identical to kLocalOnly.
enum class FusionMode { kGated, kLocalOnly, kContextOnly, kFixedSum };

struct VisibilityHeadConfig {
  int c_psi = 16;
  int local_depth = 2;
  int mix_width = 4;  // channels carried through the landmark-mixing step
  Scalar alpha0 = 0.01;
  FusionMode mode = FusionMode::kGated;
  uint64_t seed = 0;
};

inline void validate_visibility_config(const VisibilityHeadConfig& c) {
  if (c.c_psi < 4) throw std::runtime_error("visibility: c_psi must be >= 4");
  if (!std::isfinite(c.alpha0)) throw std::runtime_error("visibility: alpha0 must be finite");
  if (c.local_depth < 1 || c.mix_width < 1)
    throw std::runtime_error("visibility: depth and mix width must be >= 1");
}

struct VisibilityOutput {
  Tensor local_logits;    // (P)
  Tensor context_logits;  // (P)
  Tensor gate;            // (P), a copy of alpha
  Tensor fused_logits;    // (P)
  Tensor probabilities;   // (P), sigmoid(fused)
};

struct VisibilityGrads {
  Tensor features;   // (C, h, w)
  Tensor point_pred;
  Tensor edge_pred;
  Tensor attention;  // (P, h, w)
};

namespace detail {

// 3x3 depthwise convolution on (P, c, h, w) with one (c,3,3) kernel shared by
// every landmark group; bias-free so zero input stays zero.
class TiedDepthwise {
 public:
  TiedDepthwise() = default;
  TiedDepthwise(int c, Rng& rng) : c_(c) {
    w_ = Tensor({c, 3, 3});
    gw_ = Tensor({c, 3, 3});
    kaiming_init(w_, 9, rng);
  }
  Tensor forward(const Tensor& x) {
    x_ = x;
    const auto& s = x.shape();
    Tensor y(s);
    for (int p = 0; p < s[0]; ++p)
      for (int c = 0; c < s[1]; ++c)
        for (int oy = 0; oy < s[2]; ++oy)
          for (int ox = 0; ox < s[3]; ++ox) {
            Scalar acc = 0;
            for (int ky = 0; ky < 3; ++ky) {
              int iy = oy + ky - 1;
              if (iy < 0 || iy >= s[2]) continue;
              for (int kx = 0; kx < 3; ++kx) {
                int ix = ox + kx - 1;
                if (ix < 0 || ix >= s[3]) continue;
                acc += w_.at(c, ky, kx) * x.at(p, c, iy, ix);
              }
            }
            y.at(p, c, oy, ox) = acc;
          }
    return y;
  }
  Tensor backward(const Tensor& gy) {
    const auto& s = x_.shape();
    Tensor gx(s);
    for (int p = 0; p < s[0]; ++p)
      for (int c = 0; c < s[1]; ++c)
        for (int oy = 0; oy < s[2]; ++oy)
          for (int ox = 0; ox < s[3]; ++ox) {
            Scalar go = gy.at(p, c, oy, ox);
            for (int ky = 0; ky < 3; ++ky) {
              int iy = oy + ky - 1;
              if (iy < 0 || iy >= s[2]) continue;
              for (int kx = 0; kx < 3; ++kx) {
                int ix = ox + kx - 1;
                if (ix < 0 || ix >= s[3]) continue;
                gw_.at(c, ky, kx) += go * x_.at(p, c, iy, ix);
                gx.at(p, c, iy, ix) += go * w_.at(c, ky, kx);
              }
            }
          }
    return gx;
  }
  void params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".w", &w_, &gw_});
  }

 private:
  int c_ = 0;
  Tensor w_, gw_, x_;
};

}  // namespace detail

// Gated visibility head. Pipeline:
//   U = psi([F, P_hat, E_hat])          1x1 linear projection to c_psi
//   G_p = attention_p * U               landmark-aligned features
//   local:   tied depthwise stack -> GAP -> per-landmark linear
//   context: shared 1x1 reduce -> PxP landmark mix -> GAP -> shared linear
//   z = z_loc + alpha * z_ctx, v_hat = sigmoid(z)
class VisibilityHead {
 public:
  VisibilityHead() = default;
  VisibilityHead(int feat_c, int num_points, int num_edges, const VisibilityHeadConfig& cfg)
      : cfg_(cfg), feat_c_(feat_c), P_(num_points), ne_(num_edges) {
    validate_visibility_config(cfg);
    Rng rng(mix_seed(cfg.seed, 0x715ab1eull));
    int in_c = feat_c + num_points + num_edges;
    psi_ = Conv2d(in_c, cfg.c_psi, 1, 1, 0, rng);
    for (int i = 0; i < cfg.local_depth; ++i) local_convs_.emplace_back(cfg.c_psi, rng);
    w_loc_ = Tensor({P_, cfg.c_psi});
    gw_loc_ = Tensor({P_, cfg.c_psi});
    kaiming_init(w_loc_, cfg.c_psi, rng);
    b_loc_ = Tensor({P_});
    gb_loc_ = Tensor({P_});

    w_reduce_ = Tensor({cfg.mix_width, cfg.c_psi});
    gw_reduce_ = Tensor({cfg.mix_width, cfg.c_psi});
    kaiming_init(w_reduce_, cfg.c_psi, rng);
    b_reduce_ = Tensor({cfg.mix_width});
    gb_reduce_ = Tensor({cfg.mix_width});
    w_mix_ = Tensor({P_, P_});
    gw_mix_ = Tensor({P_, P_});
    kaiming_init(w_mix_, P_, rng);
    b_mix_ = Tensor({P_});
    gb_mix_ = Tensor({P_});
    w_ctx_ = Tensor({cfg.mix_width});
    gw_ctx_ = Tensor({cfg.mix_width});
    kaiming_init(w_ctx_, cfg.mix_width, rng);
    b_ctx_ = Tensor({1});
    gb_ctx_ = Tensor({1});

    alpha_ = Tensor({P_});
    galpha_ = Tensor({P_});
    alpha_.fill(cfg.alpha0);
  }

  // Aligned features for all landmarks at once; exposed for tests.
  Tensor aligned_features(const Tensor& features, const Tensor& point_pred,
                          const Tensor& edge_pred, const Tensor& attention) {
    const auto& fs = features.shape();
    if (fs[0] != feat_c_) throw std::runtime_error("visibility: feature channels mismatch");
    int h = fs[1], w = fs[2];
    if (attention.shape() != std::vector<int>{P_, h, w})
      throw std::runtime_error("visibility: attention shape mismatch");
    for (int p = 0; p < P_; ++p) {
      Scalar sum = 0;
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) sum += attention.at(p, v, u);
      if (std::abs(sum - 1.0) > 1e-4)
        throw std::runtime_error("visibility: attention channel not normalized");
    }
    Tensor x({feat_c_ + P_ + ne_, h, w});
    for (int c = 0; c < feat_c_; ++c)
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) x.at(c, v, u) = features.at(c, v, u);
    for (int c = 0; c < P_; ++c)
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) x.at(feat_c_ + c, v, u) = point_pred.at(c, v, u);
    for (int c = 0; c < ne_; ++c)
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) x.at(feat_c_ + P_ + c, v, u) = edge_pred.at(c, v, u);
    u_ = psi_.forward(x);
    att_ = attention;
    Tensor g({P_, cfg_.c_psi, h, w});
    for (int p = 0; p < P_; ++p)
      for (int c = 0; c < cfg_.c_psi; ++c)
        for (int v = 0; v < h; ++v)
          for (int u = 0; u < w; ++u) g.at(p, c, v, u) = attention.at(p, v, u) * u_.at(c, v, u);
    g_ = g;
    return g;
  }

  VisibilityOutput forward(const Tensor& features, const Tensor& point_pred,
                           const Tensor& edge_pred, const Tensor& attention) {
    Tensor g = aligned_features(features, point_pred, edge_pred, attention);
    const auto& gs = g.shape();
    int h = gs[2], w = gs[3];
    Scalar inv_hw = 1.0 / (h * w);

    // local branch
    Tensor t = g;
    local_relu_.assign(static_cast<size_t>(cfg_.local_depth), ReLU());
    for (size_t i = 0; i < local_convs_.size(); ++i)
      t = local_relu_[i].forward(local_convs_[i].forward(t));
    local_feat_ = t;
    gap_loc_ = Tensor({P_, cfg_.c_psi});
    for (int p = 0; p < P_; ++p)
      for (int c = 0; c < cfg_.c_psi; ++c) {
        Scalar acc = 0;
        for (int v = 0; v < h; ++v)
          for (int u = 0; u < w; ++u) acc += t.at(p, c, v, u);
        gap_loc_.at(p, c) = acc * inv_hw;
      }
    Tensor z_loc({P_});
    for (int p = 0; p < P_; ++p) {
      Scalar acc = b_loc_.at(p);
      for (int c = 0; c < cfg_.c_psi; ++c) acc += w_loc_.at(p, c) * gap_loc_.at(p, c);
      z_loc.at(p) = acc;
    }

    // context branch: reduce channels, mix landmarks at every cell, pool
    int m = cfg_.mix_width;
    reduced_ = Tensor({P_, m, h, w});
    for (int p = 0; p < P_; ++p)
      for (int c = 0; c < m; ++c)
        for (int v = 0; v < h; ++v)
          for (int u = 0; u < w; ++u) {
            Scalar acc = b_reduce_.at(c);
            for (int k = 0; k < cfg_.c_psi; ++k) acc += w_reduce_.at(c, k) * g.at(p, k, v, u);
            reduced_.at(p, c, v, u) = acc;
          }
    mixed_ = Tensor({P_, m, h, w});
    for (int p = 0; p < P_; ++p)
      for (int c = 0; c < m; ++c)
        for (int v = 0; v < h; ++v)
          for (int u = 0; u < w; ++u) {
            Scalar acc = b_mix_.at(p);
            for (int q = 0; q < P_; ++q) acc += w_mix_.at(p, q) * reduced_.at(q, c, v, u);
            mixed_.at(p, c, v, u) = acc;
          }
    gap_ctx_ = Tensor({P_, m});
    for (int p = 0; p < P_; ++p)
      for (int c = 0; c < m; ++c) {
        Scalar acc = 0;
        for (int v = 0; v < h; ++v)
          for (int u = 0; u < w; ++u) acc += mixed_.at(p, c, v, u);
        gap_ctx_.at(p, c) = acc * inv_hw;
      }
    Tensor z_ctx({P_});
    for (int p = 0; p < P_; ++p) {
      Scalar acc = b_ctx_.at(0);
      for (int c = 0; c < m; ++c) acc += w_ctx_.at(c) * gap_ctx_.at(p, c);
      z_ctx.at(p) = acc;
    }

    VisibilityOutput out;
    out.local_logits = z_loc;
    out.context_logits = z_ctx;
    out.gate = alpha_;
    out.fused_logits = Tensor({P_});
    out.probabilities = Tensor({P_});
    for (int p = 0; p < P_; ++p) {
      Scalar z = 0.0;
      switch (cfg_.mode) {
        case FusionMode::kGated: z = z_loc.at(p) + alpha_.at(p) * z_ctx.at(p); break;
        case FusionMode::kLocalOnly: z = z_loc.at(p); break;
        case FusionMode::kContextOnly: z = z_ctx.at(p); break;
        case FusionMode::kFixedSum: z = z_loc.at(p) + z_ctx.at(p); break;
      }
      out.fused_logits.at(p) = z;
      out.probabilities.at(p) = 1.0 / (1.0 + std::exp(-z));
    }
    out_ = out;
    return out;
  }

  // g_prob: gradient wrt probabilities (P).
  VisibilityGrads backward(const Tensor& g_prob) {
    const auto& gs = g_.shape();
    int h = gs[2], w = gs[3];
    int m = cfg_.mix_width;
    Scalar inv_hw = 1.0 / (h * w);

    bool use_loc = cfg_.mode != FusionMode::kContextOnly;
    bool use_ctx = cfg_.mode != FusionMode::kLocalOnly;
    Tensor gz({P_}), gz_loc({P_}), gz_ctx({P_});
    for (int p = 0; p < P_; ++p) {
      Scalar v = out_.probabilities.at(p);
      gz.at(p) = g_prob.at(p) * v * (1.0 - v);
      gz_loc.at(p) = use_loc ? gz.at(p) : 0.0;
      Scalar ctx_coeff = cfg_.mode == FusionMode::kGated ? alpha_.at(p) : (use_ctx ? 1.0 : 0.0);
      gz_ctx.at(p) = gz.at(p) * ctx_coeff;
      if (cfg_.mode == FusionMode::kGated) galpha_.at(p) += gz.at(p) * out_.context_logits.at(p);
    }

    // context branch backward
    Tensor g_gap_ctx({P_, m});
    for (int p = 0; p < P_; ++p) {
      gb_ctx_.at(0) += gz_ctx.at(p);
      for (int c = 0; c < m; ++c) {
        gw_ctx_.at(c) += gz_ctx.at(p) * gap_ctx_.at(p, c);
        g_gap_ctx.at(p, c) = gz_ctx.at(p) * w_ctx_.at(c);
      }
    }
    Tensor g_reduced({P_, m, h, w});
    for (int p = 0; p < P_; ++p)
      for (int c = 0; c < m; ++c) {
        Scalar gcell = g_gap_ctx.at(p, c) * inv_hw;
        gb_mix_.at(p) += gcell * h * w;
        for (int q = 0; q < P_; ++q) {
          Scalar acc = 0;
          for (int v = 0; v < h; ++v)
            for (int u = 0; u < w; ++u) acc += reduced_.at(q, c, v, u);
          gw_mix_.at(p, q) += gcell * acc;
          for (int v = 0; v < h; ++v)
            for (int u = 0; u < w; ++u) g_reduced.at(q, c, v, u) += gcell * w_mix_.at(p, q);
        }
      }
    Tensor gg_ctx({P_, cfg_.c_psi, h, w});
    for (int p = 0; p < P_; ++p)
      for (int c = 0; c < m; ++c)
        for (int v = 0; v < h; ++v)
          for (int u = 0; u < w; ++u) {
            Scalar gr = g_reduced.at(p, c, v, u);
            gb_reduce_.at(c) += gr;
            for (int k = 0; k < cfg_.c_psi; ++k) {
              gw_reduce_.at(c, k) += gr * g_.at(p, k, v, u);
              gg_ctx.at(p, k, v, u) += gr * w_reduce_.at(c, k);
            }
          }

    // local branch backward
    Tensor g_local({P_, cfg_.c_psi, h, w});
    for (int p = 0; p < P_; ++p) {
      gb_loc_.at(p) += gz_loc.at(p);
      for (int c = 0; c < cfg_.c_psi; ++c) {
        gw_loc_.at(p, c) += gz_loc.at(p) * gap_loc_.at(p, c);
        Scalar gcell = gz_loc.at(p) * w_loc_.at(p, c) * inv_hw;
        for (int v = 0; v < h; ++v)
          for (int u = 0; u < w; ++u) g_local.at(p, c, v, u) = gcell;
      }
    }
    for (size_t i = local_convs_.size(); i-- > 0;)
      g_local = local_convs_[i].backward(local_relu_[i].backward(g_local));

    Tensor gg = gg_ctx;
    gg.add_(g_local);

    // back through G_p = attention_p * U
    VisibilityGrads out;
    out.attention = Tensor({P_, h, w});
    Tensor gu({cfg_.c_psi, h, w});
    for (int p = 0; p < P_; ++p)
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
          Scalar gatt = 0;
          for (int c = 0; c < cfg_.c_psi; ++c) {
            gatt += gg.at(p, c, v, u) * u_.at(c, v, u);
            gu.at(c, v, u) += gg.at(p, c, v, u) * att_.at(p, v, u);
          }
          out.attention.at(p, v, u) = gatt;
        }
    Tensor gx = psi_.backward(gu);
    out.features = Tensor({feat_c_, h, w});
    out.point_pred = Tensor({P_, h, w});
    out.edge_pred = Tensor({ne_, h, w});
    for (int c = 0; c < feat_c_; ++c)
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) out.features.at(c, v, u) = gx.at(c, v, u);
    for (int c = 0; c < P_; ++c)
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) out.point_pred.at(c, v, u) = gx.at(feat_c_ + c, v, u);
    for (int c = 0; c < ne_; ++c)
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) out.edge_pred.at(c, v, u) = gx.at(feat_c_ + P_ + c, v, u);
    return out;
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    psi_.params("vis.psi", out);
    for (size_t i = 0; i < local_convs_.size(); ++i)
      local_convs_[i].params("vis.local" + std::to_string(i), out);
    out.push_back({"vis.local_linear.w", &w_loc_, &gw_loc_});
    out.push_back({"vis.local_linear.b", &b_loc_, &gb_loc_});
    out.push_back({"vis.reduce.w", &w_reduce_, &gw_reduce_});
    out.push_back({"vis.reduce.b", &b_reduce_, &gb_reduce_});
    out.push_back({"vis.mix.w", &w_mix_, &gw_mix_});
    out.push_back({"vis.mix.b", &b_mix_, &gb_mix_});
    out.push_back({"vis.ctx_linear.w", &w_ctx_, &gw_ctx_});
    out.push_back({"vis.ctx_linear.b", &b_ctx_, &gb_ctx_});
    out.push_back({"vis.alpha", &alpha_, &galpha_});
    return out;
  }

  const VisibilityHeadConfig& config() const { return cfg_; }
  Tensor& alpha() { return alpha_; }

 private:
  VisibilityHeadConfig cfg_;
  int feat_c_ = 0, P_ = 0, ne_ = 0;
  Conv2d psi_;
  std::vector<detail::TiedDepthwise> local_convs_;
  std::vector<ReLU> local_relu_;
  Tensor w_loc_, gw_loc_, b_loc_, gb_loc_;
  Tensor w_reduce_, gw_reduce_, b_reduce_, gb_reduce_;
  Tensor w_mix_, gw_mix_, b_mix_, gb_mix_;
  Tensor w_ctx_, gw_ctx_, b_ctx_, gb_ctx_;
  Tensor alpha_, galpha_;
  Tensor u_, att_, g_, local_feat_, gap_loc_, reduced_, mixed_, gap_ctx_;
  VisibilityOutput out_;
};

}  // namespace occlm
