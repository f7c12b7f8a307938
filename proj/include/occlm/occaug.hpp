#pragma once

#include <array>
#include <cmath>

#include "occlm/synth.hpp"
#include "occlm/tensor.hpp"

namespace occlm {

struct OccAugParams {
  int min_occluders = 1, max_occluders = 3;
  Scalar min_area = 0.02, max_area = 0.25;  // fraction of the crop
  Scalar delta = 0.5;                       // overlap threshold
};

inline void validate_occaug_params(const OccAugParams& p) {
  if (p.min_occluders < 0 || p.max_occluders < p.min_occluders)
    throw std::runtime_error("occaug: bad occluder count range");
  if (p.min_area < 0 || p.max_area < p.min_area || p.max_area > 1)
    throw std::runtime_error("occaug: bad area range");
  if (!(p.delta > 0 && p.delta <= 1)) throw std::runtime_error("occaug: delta outside (0,1]");
}

struct MaskSpec {
  Tensor mask_crop;  // (h, w) binary, crop resolution
  Tensor mask_map;   // (h', w') binary, heatmap resolution
  bool noise_fill = false;
  std::array<Scalar, 3> color{0, 0, 0};
  uint64_t noise_seed = 0;
  Scalar delta = 0.5;
};

// Area-average over stride x stride blocks, then threshold at 0.5.
inline Tensor downsample_mask(const Tensor& mask_crop, int stride) {
  const auto& s = mask_crop.shape();
  if (s.size() != 2 || s[0] % stride || s[1] % stride)
    throw std::runtime_error("occaug: mask not divisible by stride");
  Tensor out({s[0] / stride, s[1] / stride});
  Scalar inv = 1.0 / (stride * stride);
  for (int y = 0; y < s[0] / stride; ++y)
    for (int x = 0; x < s[1] / stride; ++x) {
      Scalar acc = 0;
      for (int dy = 0; dy < stride; ++dy)
        for (int dx = 0; dx < stride; ++dx) acc += mask_crop.at(y * stride + dy, x * stride + dx);
      out.at(y, x) = acc * inv >= 0.5 ? 1.0 : 0.0;
    }
  return out;
}

// Deterministic random mask: 1-3 rectangles/ellipses, each covering a drawn
// fraction of the crop; downsampled by area average, thresholded at 0.5.
inline MaskSpec sample_mask(uint64_t seed, int crop_h, int crop_w, int stride,
                            const OccAugParams& params) {
  validate_occaug_params(params);
  if (crop_h % stride || crop_w % stride)
    throw std::runtime_error("occaug: crop size not divisible by stride");
  Rng rng(mix_seed(seed, 0x0cc1de5ull));
  MaskSpec spec;
  spec.delta = params.delta;
  spec.mask_crop = Tensor({crop_h, crop_w});
  int n = rng.uniform_int(params.min_occluders, params.max_occluders);
  for (int i = 0; i < n; ++i) {
    bool is_rect = rng.uniform() < 0.5;
    Scalar area = rng.uniform(params.min_area, params.max_area) * crop_h * crop_w;
    Scalar aspect = rng.uniform(0.5, 2.0);
    if (area <= 0) continue;
    Scalar rx = std::sqrt(area * aspect) / 2.0;
    Scalar ry = std::sqrt(area / aspect) / 2.0;
    if (!is_rect) {
      // match the requested area: ellipse pi*rx*ry vs rectangle 4*rx*ry
      Scalar k = std::sqrt(4.0 / 3.141592653589793);
      rx *= k;
      ry *= k;
    }
    Scalar cx = rng.uniform(0.0, static_cast<Scalar>(crop_w));
    Scalar cy = rng.uniform(0.0, static_cast<Scalar>(crop_h));
    for (int y = 0; y < crop_h; ++y)
      for (int x = 0; x < crop_w; ++x) {
        Scalar dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        bool inside = is_rect ? (std::abs(dx) <= 1 && std::abs(dy) <= 1)
                              : (dx * dx + dy * dy <= 1);
        if (inside) spec.mask_crop.at(y, x) = 1.0;
      }
  }
  spec.noise_fill = rng.uniform() < 0.5;
  for (auto& c : spec.color) c = rng.uniform();
  spec.noise_seed = rng.next_u64();

  spec.mask_map = downsample_mask(spec.mask_crop, stride);
  return spec;
}

// v_tilde_p = 1 iff <M, H_p / sum(H_p)> < delta.
inline std::vector<int> pseudo_visibility(const Tensor& mask_map, const Tensor& target_heatmaps,
                                          Scalar delta) {
  if (!(delta > 0 && delta <= 1)) throw std::runtime_error("pseudo vis: delta outside (0,1]");
  const auto& hs = target_heatmaps.shape();
  if (hs.size() != 3 || mask_map.shape() != std::vector<int>{hs[1], hs[2]})
    throw std::runtime_error("pseudo vis: shape mismatch");
  std::vector<int> v(static_cast<size_t>(hs[0]), 1);
  for (int p = 0; p < hs[0]; ++p) {
    Scalar norm = 0, overlap = 0;
    for (int y = 0; y < hs[1]; ++y)
      for (int x = 0; x < hs[2]; ++x) {
        norm += target_heatmaps.at(p, y, x);
        overlap += mask_map.at(y, x) * target_heatmaps.at(p, y, x);
      }
    if (norm <= 0) throw std::runtime_error("pseudo vis: degenerate heatmap channel");
    v[static_cast<size_t>(p)] = overlap / norm < delta ? 1 : 0;
  }
  return v;
}

// Paint the mask over a (3,h,w) crop; landmarks and targets are untouched.
inline Tensor masked_view(const Tensor& crop, const MaskSpec& spec) {
  const auto& s = crop.shape();
  if (s.size() != 3 || s[0] != 3 || spec.mask_crop.shape() != std::vector<int>{s[1], s[2]})
    throw std::runtime_error("masked view: shape mismatch");
  Tensor out = crop;
  for (int y = 0; y < s[1]; ++y)
    for (int x = 0; x < s[2]; ++x) {
      if (spec.mask_crop.at(y, x) == 0.0) continue;
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) =
            spec.noise_fill ? detail::hash_noise(spec.noise_seed, y, x, c) : spec.color[c];
    }
  return out;
}

}  // namespace occlm
