#pragma once

#include <cmath>
#include <vector>

#include "occlm/layout.hpp"
#include "occlm/tensor.hpp"

namespace occlm {

struct TargetMaps {
  Tensor heatmaps;   // P x h' x w'
  Tensor point_map;  // P x h' x w'
  Tensor edge_map;   // N_E x h' x w'
  Scalar sigma = 0;
};

// Unit-peak Gaussian around s=(x,y) given in heatmap coordinates; no
// truncation window.
inline Tensor gaussian_heatmap(Scalar sx, Scalar sy, Scalar sigma, int h, int w) {
  if (sigma <= 0) throw std::runtime_error("gaussian_heatmap: sigma must be positive");
  Tensor out({h, w});
  Scalar inv = 1.0 / (2.0 * sigma * sigma);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      Scalar dx = u - sx, dy = v - sy;
      out.at(v, u) = std::exp(-(dx * dx + dy * dy) * inv);
    }
  return out;
}

inline Tensor build_point_map(const std::vector<Point2>& points, Scalar sigma, int h, int w) {
  Tensor out({static_cast<int>(points.size()), h, w});
  for (size_t p = 0; p < points.size(); ++p) {
    Tensor g = gaussian_heatmap(points[p][0], points[p][1], sigma, h, w);
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) out.at(static_cast<int>(p), v, u) = g.at(v, u);
  }
  return out;
}

inline Scalar point_segment_dist(Scalar px, Scalar py, Scalar ax, Scalar ay, Scalar bx, Scalar by) {
  Scalar dx = bx - ax, dy = by - ay;
  Scalar len2 = dx * dx + dy * dy;
  if (len2 == 0) return std::hypot(px - ax, py - ay);
  Scalar t = ((px - ax) * dx + (py - ay) * dy) / len2;
  t = std::min(1.0, std::max(0.0, t));
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

// Channel e: exp(-d((u,v), polyline_e)^2 / (2 sigma^2)), d = min distance over
// the edge's segments. A fully degenerate polyline collapses to a point.
inline Tensor build_edge_map(const LandmarkLayout& layout, const std::vector<Point2>& points,
                             Scalar sigma, int h, int w) {
  if (sigma <= 0) throw std::runtime_error("build_edge_map: sigma must be positive");
  Tensor out({static_cast<int>(layout.edges.size()), h, w});
  Scalar inv = 1.0 / (2.0 * sigma * sigma);
  for (size_t e = 0; e < layout.edges.size(); ++e) {
    const auto& idx = layout.edges[e].point_indices;
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        Scalar best = std::numeric_limits<Scalar>::infinity();
        for (size_t k = 0; k + 1 < idx.size(); ++k) {
          const Point2& a = points[static_cast<size_t>(idx[k])];
          const Point2& b = points[static_cast<size_t>(idx[k + 1])];
          best = std::min(best, point_segment_dist(u, v, a[0], a[1], b[0], b[1]));
        }
        if (idx.size() == 1) {
          const Point2& a = points[static_cast<size_t>(idx[0])];
          best = std::hypot(u - a[0], v - a[1]);
        }
        out.at(static_cast<int>(e), v, u) = std::exp(-best * best * inv);
      }
  }
  return out;
}

// Crop coordinates -> heatmap coordinates, inverting the decode's
// cell-center convention crop = (heatmap + 0.5) * stride.
inline std::vector<Point2> crop_to_heatmap(const std::vector<Point2>& points_crop, int stride) {
  std::vector<Point2> out(points_crop.size());
  for (size_t p = 0; p < points_crop.size(); ++p)
    out[p] = {points_crop[p][0] / stride - 0.5, points_crop[p][1] / stride - 0.5};
  return out;
}

inline TargetMaps build_targets(const LandmarkLayout& layout,
                                const std::vector<Point2>& points_crop, int crop_h, int crop_w,
                                int stride, Scalar sigma_hm, Scalar sigma_pt, Scalar sigma_edge) {
  if (stride <= 0 || crop_h % stride != 0 || crop_w % stride != 0)
    throw std::runtime_error("build_targets: crop size must be divisible by stride");
  int h = crop_h / stride, w = crop_w / stride;
  std::vector<Point2> pts = crop_to_heatmap(points_crop, stride);
  TargetMaps t;
  t.sigma = sigma_hm;
  t.heatmaps = build_point_map(pts, sigma_hm, h, w);
  t.point_map = build_point_map(pts, sigma_pt, h, w);
  t.edge_map = build_edge_map(layout, pts, sigma_edge, h, w);
  return t;
}

}  // namespace occlm
