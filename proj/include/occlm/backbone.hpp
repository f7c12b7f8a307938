#pragma once

#include <string>
#include <vector>

#include "occlm/layout.hpp"
#include "occlm/nn.hpp"

namespace occlm {

struct BackboneConfig {
  int stacks = 2;
  int channels = 32;
  int crop_h = 64, crop_w = 64;
  int stride = 4;
  int res_blocks = 1;  // bottleneck blocks per hourglass stage
  uint64_t seed = 0;
};

inline void validate_backbone_config(const BackboneConfig& c) {
  if (c.stacks < 1) throw std::runtime_error("backbone: stacks must be >= 1");
  if (c.channels < 8) throw std::runtime_error("backbone: channels must be >= 8");
  if (c.stride < 1 || (c.stride & (c.stride - 1)) != 0)
    throw std::runtime_error("backbone: stride must be a power of two");
  if (c.crop_h % c.stride || c.crop_w % c.stride)
    throw std::runtime_error("backbone: crop size must be divisible by stride");
  if ((c.crop_h / c.stride) % 4 || (c.crop_w / c.stride) % 4)
    throw std::runtime_error("backbone: map size must be divisible by 4 (two hourglass scales)");
  if (c.res_blocks < 1) throw std::runtime_error("backbone: res_blocks must be >= 1");
}

struct BackboneOutput {
  std::vector<Tensor> stage_heatmaps;  // K x (P, h', w')
  Tensor features;                     // (C, h', w')
  Tensor point_pred;                   // (P, h', w')
  Tensor edge_pred;                    // (N_E, h', w')
};

struct BackboneGrads {
  std::vector<Tensor> stage_heatmaps;
  Tensor features;    // may be empty
  Tensor point_pred;  // wrt sigmoid output
  Tensor edge_pred;
};

namespace detail {

// Two-scale symmetric encoder-decoder with skip connections.
class Hourglass {
 public:
  Hourglass() = default;
  Hourglass(int C, int bottleneck, Rng& rng) {
    pre_ = ResBlock(C, C, rng);
    skip1_ = ResBlock(C, C, rng);
    enc1_ = ResBlock(C, C, rng);
    skip2_ = ResBlock(C, C, rng);
    for (int i = 0; i < bottleneck; ++i) bottom_.emplace_back(C, C, rng);
    dec2_ = ResBlock(C, C, rng);
    dec1_ = ResBlock(C, C, rng);
  }
  Tensor forward(const Tensor& x) {
    Tensor p = pre_.forward(x);
    Tensor s1 = skip1_.forward(p);
    Tensor e1 = enc1_.forward(pool1_.forward(p));
    Tensor s2 = skip2_.forward(e1);
    Tensor b = pool2_.forward(e1);
    for (auto& blk : bottom_) b = blk.forward(b);
    Tensor u2 = up2_.forward(b);
    u2.add_(s2);
    u2.scale_(0.5);  // average the merge so activations keep their scale
    Tensor d2 = dec2_.forward(u2);
    Tensor u1 = up1_.forward(d2);
    u1.add_(s1);
    u1.scale_(0.5);
    return dec1_.forward(u1);
  }
  Tensor backward(const Tensor& gy) {
    Tensor g1 = dec1_.backward(gy);
    g1.scale_(0.5);
    Tensor gs1 = skip1_.backward(g1);
    Tensor g2 = dec2_.backward(up1_.backward(g1));
    g2.scale_(0.5);
    Tensor gs2 = skip2_.backward(g2);
    Tensor gb = up2_.backward(g2);
    for (auto it = bottom_.rbegin(); it != bottom_.rend(); ++it) gb = it->backward(gb);
    Tensor ge1 = pool2_.backward(gb);
    ge1.add_(gs2);
    Tensor gp = pool1_.backward(enc1_.backward(ge1));
    gp.add_(gs1);
    return pre_.backward(gp);
  }
  void params(const std::string& prefix, std::vector<ParamRef>& out) {
    pre_.params(prefix + ".pre", out);
    skip1_.params(prefix + ".skip1", out);
    enc1_.params(prefix + ".enc1", out);
    skip2_.params(prefix + ".skip2", out);
    for (size_t i = 0; i < bottom_.size(); ++i)
      bottom_[i].params(prefix + ".bottom" + std::to_string(i), out);
    dec2_.params(prefix + ".dec2", out);
    dec1_.params(prefix + ".dec1", out);
  }

 private:
  ResBlock pre_, skip1_, enc1_, skip2_, dec2_, dec1_;
  std::vector<ResBlock> bottom_;
  AvgPool2 pool1_, pool2_;
  UpsampleNearest2 up1_, up2_;
};

struct Stage {
  Hourglass hg;
  ResBlock proj_res;
  Conv2d proj_conv;  // 1x1, gives F^k
  Conv2d head;       // 1x1 to P channels, linear
  Tensor cached_feat;
};

}  // namespace detail

class Backbone {
 public:
  explicit Backbone(const BackboneConfig& cfg, int num_edges = 16) : cfg_(cfg) {
    validate_backbone_config(cfg);
    Rng rng(mix_seed(cfg.seed, 0xbac0beull));
    int C = cfg.channels;

    // stem: one stride-2 conv per factor of two, then a residual block
    int n_down = 0;
    for (int s = cfg.stride; s > 1; s /= 2) ++n_down;
    int in_c = 3;
    for (int i = 0; i < n_down; ++i) {
      int out_c = C >> (n_down - 1 - i);
      stem_convs_.emplace_back(in_c, out_c, 3, 2, 1, rng);
      in_c = out_c;
    }
    if (n_down == 0) {
      stem_convs_.emplace_back(3, C, 3, 1, 1, rng);
      in_c = C;
    }
    stem_relu_.resize(stem_convs_.size());
    stem_res_ = ResBlock(in_c, C, rng);

    stages_.resize(static_cast<size_t>(cfg.stacks));
    for (auto& st : stages_) {
      st.hg = detail::Hourglass(C, cfg.res_blocks, rng);
      st.proj_res = ResBlock(C, C, rng);
      st.proj_conv = Conv2d(C, C, 1, 1, 0, rng);
      st.head = Conv2d(C, kNumPoints, 1, 1, 0, rng);
    }
    point_head_ = Conv2d(C, kNumPoints, 1, 1, 0, rng);
    edge_head_ = Conv2d(C, num_edges, 1, 1, 0, rng);
  }

  BackboneOutput forward(const Tensor& crop) {
    const auto& s = crop.shape();
    if (s.size() != 3 || s[0] != 3 || s[1] != cfg_.crop_h || s[2] != cfg_.crop_w)
      throw std::runtime_error("backbone: crop shape mismatch");
    Tensor f = crop;
    for (size_t i = 0; i < stem_convs_.size(); ++i)
      f = stem_relu_[i].forward(stem_convs_[i].forward(f));
    f = stem_res_.forward(f);

    BackboneOutput out;
    for (auto& st : stages_) {
      Tensor z = st.hg.forward(f);
      f = st.proj_conv.forward(st.proj_res.forward(z));
      st.cached_feat = f;
      out.stage_heatmaps.push_back(st.head.forward(f));
    }
    out.features = f;
    out.point_pred = point_sig_.forward(point_head_.forward(f));
    out.edge_pred = edge_sig_.forward(edge_head_.forward(f));
    for (const auto& h : out.stage_heatmaps)
      if (!h.all_finite()) throw std::runtime_error("backbone: non-finite heatmap output");
    return out;
  }

  // Gradients flow back from per-stage heatmaps, final features, and the two
  // sigmoid heads; returns the gradient wrt the crop.
  Tensor backward(const BackboneGrads& g) {
    Tensor gf;
    bool has = false;
    auto add_into = [&](Tensor t) {
      if (!has) {
        gf = std::move(t);
        has = true;
      } else {
        gf.add_(t);
      }
    };
    if (g.features.numel()) add_into(g.features);
    if (g.point_pred.numel()) add_into(point_head_.backward(point_sig_.backward(g.point_pred)));
    if (g.edge_pred.numel()) add_into(edge_head_.backward(edge_sig_.backward(g.edge_pred)));

    for (int k = cfg_.stacks - 1; k >= 0; --k) {
      auto& st = stages_[static_cast<size_t>(k)];
      if (static_cast<size_t>(k) < g.stage_heatmaps.size() &&
          g.stage_heatmaps[static_cast<size_t>(k)].numel())
        add_into(st.head.backward(g.stage_heatmaps[static_cast<size_t>(k)]));
      if (!has) {
        gf = Tensor(st.cached_feat.shape());
        has = true;
      }
      gf = st.hg.backward(st.proj_res.backward(st.proj_conv.backward(gf)));
    }
    Tensor gx = stem_res_.backward(gf);
    for (size_t i = stem_convs_.size(); i-- > 0;)
      gx = stem_convs_[i].backward(stem_relu_[i].backward(gx));
    return gx;
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    for (size_t i = 0; i < stem_convs_.size(); ++i)
      stem_convs_[i].params("stem.conv" + std::to_string(i), out);
    stem_res_.params("stem.res", out);
    for (size_t k = 0; k < stages_.size(); ++k) {
      std::string p = "stage" + std::to_string(k);
      stages_[k].hg.params(p + ".hg", out);
      stages_[k].proj_res.params(p + ".proj_res", out);
      stages_[k].proj_conv.params(p + ".proj_conv", out);
      stages_[k].head.params(p + ".head", out);
    }
    point_head_.params("point_head", out);
    edge_head_.params("edge_head", out);
    return out;
  }

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  std::vector<Conv2d> stem_convs_;
  std::vector<ReLU> stem_relu_;
  ResBlock stem_res_;
  std::vector<detail::Stage> stages_;
  Conv2d point_head_, edge_head_;
  Sigmoid point_sig_, edge_sig_;
};

}  // namespace occlm
