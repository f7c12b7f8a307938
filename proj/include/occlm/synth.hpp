#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "occlm/data.hpp"
#include "occlm/image.hpp"

namespace occlm {

// Scene description for one synthetic sample. Pose is exact; the CLI samples
// poses from configured ranges and fills these in per sample.
struct SceneParams {
  std::string style = "human";  // human | mammal-eared | robot
  Scalar yaw_deg = 0;           // >0 turns the head's right side away from camera
  Scalar pitch_deg = 0;         // >0 tilts the head up
  int occluder_min = 0;
  int occluder_max = 3;
  std::string background = "noise";  // plain | noise
  int image_size = 96;
};

struct Occluder {
  bool is_rect = true;
  Scalar cx = 0, cy = 0, rx = 0, ry = 0;  // half extents in source pixels
  bool noise_fill = false;
  Color color{0.5, 0.5, 0.5};
};

inline bool occluder_contains(const Occluder& o, Scalar x, Scalar y) {
  if (o.is_rect) return std::abs(x - o.cx) <= o.rx && std::abs(y - o.cy) <= o.ry;
  Scalar dx = (x - o.cx) / o.rx, dy = (y - o.cy) / o.ry;
  return dx * dx + dy * dy <= 1.0;
}

using Vec3 = std::array<Scalar, 3>;

// 100-point template on an ellipsoid head proxy plus the proxy's semi-axes.
struct FaceTemplate {
  std::vector<Vec3> points;  // head-local coordinates
  Vec3 axes;                 // ellipsoid semi-axes
};

namespace detail {

inline constexpr Scalar kAxisX = 0.75, kAxisY = 1.00, kAxisZ = 0.80;
inline constexpr Scalar kCameraDist = 6.0;
inline constexpr Scalar kFocal = 150.0;

inline Scalar surface_z(Scalar x, Scalar y) {
  Scalar r = 1.0 - (x / kAxisX) * (x / kAxisX) - (y / kAxisY) * (y / kAxisY);
  return r > 0 ? kAxisZ * std::sqrt(r) : 0.0;
}

inline Scalar rim_x(Scalar y) {
  Scalar r = 1.0 - (y / kAxisY) * (y / kAxisY);
  return r > 0 ? kAxisX * std::sqrt(r) : 0.0;
}

// Place a frontal-plane feature point on the ellipsoid surface, optionally
// pushed outward along z (nose, lips).
inline Vec3 on_face(Scalar x, Scalar y, Scalar z_off = 0.0) {
  return {x, y, surface_z(x, y) + z_off};
}

}  // namespace detail

inline FaceTemplate face_template(const std::string& style) {
  using detail::on_face;
  if (style != "human" && style != "mammal-eared" && style != "robot")
    throw std::runtime_error("synthesize: unknown style tag '" + style + "'");

  FaceTemplate T;
  T.axes = {detail::kAxisX, detail::kAxisY, detail::kAxisZ};
  auto& P = T.points;
  P.resize(kNumPoints);

  // 0-16 jawline, left ear base to chin to right ear base
  for (int i = 0; i <= 16; ++i) {
    Scalar t = static_cast<Scalar>(i) / 16.0;
    P[static_cast<size_t>(i)] = on_face(-0.70 * std::cos(M_PI * t), 0.12 - 1.05 * std::sin(M_PI * t));
  }
  // 17-21 left brow (outer to inner), 22-26 right brow (inner to outer)
  for (int i = 0; i < 5; ++i) {
    Scalar t = static_cast<Scalar>(i) / 4.0;
    Scalar arch = 0.10 * std::sin(M_PI * t);
    P[static_cast<size_t>(17 + i)] = on_face(-0.52 + 0.34 * t, 0.42 + arch);
    P[static_cast<size_t>(22 + i)] = on_face(0.18 + 0.34 * t, 0.42 + 0.10 * std::sin(M_PI * (1 - t)));
  }
  // 27-30 nose bridge down to tip (tip protrudes), 31-35 nose base row
  for (int i = 0; i < 4; ++i) {
    Scalar t = static_cast<Scalar>(i) / 3.0;
    P[static_cast<size_t>(27 + i)] = on_face(0.0, 0.28 - 0.42 * t, 0.06 + 0.14 * t);
  }
  for (int i = 0; i < 5; ++i) {
    Scalar x = -0.12 + 0.06 * i;
    P[static_cast<size_t>(31 + i)] = on_face(x, -0.22, 0.06 + 0.06 * (1.0 - (x / 0.12) * (x / 0.12)));
  }
  // 36-41 left eye, 42-47 right eye
  const Scalar exl = -0.32, exr = 0.32, ey = 0.18;
  P[36] = on_face(exl - 0.13, ey);
  P[37] = on_face(exl - 0.05, ey + 0.055);
  P[38] = on_face(exl + 0.05, ey + 0.055);
  P[39] = on_face(exl + 0.13, ey);
  P[40] = on_face(exl + 0.05, ey - 0.055);
  P[41] = on_face(exl - 0.05, ey - 0.055);
  P[42] = on_face(exr - 0.13, ey);
  P[43] = on_face(exr - 0.05, ey + 0.055);
  P[44] = on_face(exr + 0.05, ey + 0.055);
  P[45] = on_face(exr + 0.13, ey);
  P[46] = on_face(exr + 0.05, ey - 0.055);
  P[47] = on_face(exr - 0.05, ey - 0.055);
  // 48-59 outer lips (corner, upper arc, corner, lower arc)
  const Scalar my = -0.52;
  auto lip = [&](int idx, Scalar x, Scalar dy) { P[static_cast<size_t>(idx)] = on_face(x, my + dy, 0.03); };
  lip(48, -0.26, 0.0);
  lip(49, -0.17, 0.075);
  lip(50, -0.07, 0.095);
  lip(51, 0.0, 0.10);
  lip(52, 0.07, 0.095);
  lip(53, 0.17, 0.075);
  lip(54, 0.26, 0.0);
  lip(55, 0.17, -0.08);
  lip(56, 0.07, -0.105);
  lip(57, 0.0, -0.11);
  lip(58, -0.07, -0.105);
  lip(59, -0.17, -0.08);
  // 60-67 inner lips
  auto ilip = [&](int idx, Scalar x, Scalar dy) { P[static_cast<size_t>(idx)] = on_face(x, my + dy, 0.01); };
  ilip(60, -0.16, 0.0);
  ilip(61, -0.08, 0.033);
  ilip(62, 0.0, 0.042);
  ilip(63, 0.08, 0.033);
  ilip(64, 0.16, 0.0);
  ilip(65, 0.08, -0.033);
  ilip(66, 0.0, -0.042);
  ilip(67, -0.08, -0.033);
  // 68-69 pupils, 70-77 iris rings
  P[68] = on_face(exl, ey);
  P[69] = on_face(exr, ey);
  const Scalar ir = 0.05;
  P[70] = on_face(exl + ir, ey);
  P[71] = on_face(exl, ey + ir);
  P[72] = on_face(exl - ir, ey);
  P[73] = on_face(exl, ey - ir);
  P[74] = on_face(exr + ir, ey);
  P[75] = on_face(exr, ey + ir);
  P[76] = on_face(exr - ir, ey);
  P[77] = on_face(exr, ey - ir);
  // 78-85 inner-mouth ring
  auto imouth = [&](int idx, Scalar x, Scalar dy) { P[static_cast<size_t>(idx)] = on_face(x, my + dy, 0.005); };
  imouth(78, -0.10, 0.0);
  imouth(79, -0.05, 0.025);
  imouth(80, 0.0, 0.03);
  imouth(81, 0.05, 0.025);
  imouth(82, 0.10, 0.0);
  imouth(83, 0.05, -0.025);
  imouth(84, 0.0, -0.03);
  imouth(85, -0.05, -0.025);

  // 86-92 left ear, 93-99 right ear (7 each)
  if (style == "mammal-eared") {
    // raised ears on top of the head
    const std::array<std::array<Scalar, 2>, 7> contour = {{{-0.30, 0.78},
                                                           {-0.48, 0.95},
                                                           {-0.52, 1.12},
                                                           {-0.44, 1.27},
                                                           {-0.32, 1.22},
                                                           {-0.25, 1.04},
                                                           {-0.23, 0.86}}};
    for (int i = 0; i < 7; ++i) {
      Scalar x = contour[static_cast<size_t>(i)][0], y = contour[static_cast<size_t>(i)][1];
      Scalar z = detail::surface_z(x, y) + 0.04;
      P[static_cast<size_t>(86 + i)] = {x, y, z};
      P[static_cast<size_t>(93 + i)] = {-x, y, z};
    }
  } else {
    // side ears; robot gets a boxier, smaller sensor plate
    const bool robot = style == "robot";
    const Scalar depth = robot ? 0.10 : 0.17;
    const Scalar span = robot ? 0.14 : 0.20;
    const std::array<std::array<Scalar, 2>, 7> contour = {{{0.00, 1.00},
                                                           {0.55, 0.82},
                                                           {0.95, 0.38},
                                                           {1.00, -0.12},
                                                           {0.75, -0.62},
                                                           {0.35, -0.90},
                                                           {0.00, -1.00}}};
    for (int i = 0; i < 7; ++i) {
      Scalar out = contour[static_cast<size_t>(i)][0] * depth;
      Scalar dy = contour[static_cast<size_t>(i)][1] * span;
      Scalar y = 0.15 + dy;
      Scalar xa = detail::rim_x(y) + 0.03 + out;
      P[static_cast<size_t>(86 + i)] = {-xa, y, -0.02};
      P[static_cast<size_t>(93 + i)] = {xa, y, -0.02};
    }
  }
  return T;
}

// Everything the generator derives for one sample; kept around for tests
// that need the geometry (occluder shapes, self-occlusion flags).
struct SceneInstance {
  std::vector<Vec3> points_world;
  std::vector<Point2> points2d;
  std::vector<int> self_occluded;
  std::vector<int> ext_occluded;
  std::vector<Occluder> occluders;
  Box box;
  Scalar yaw_deg = 0, pitch_deg = 0;
  Scalar focal = 0, cx = 0, cy = 0;
  std::string style;
};

namespace detail {

struct Rotation {
  // world = R * local; columns of R
  std::array<Scalar, 9> r;
  Vec3 apply(const Vec3& v) const {
    return {r[0] * v[0] + r[1] * v[1] + r[2] * v[2], r[3] * v[0] + r[4] * v[1] + r[5] * v[2],
            r[6] * v[0] + r[7] * v[1] + r[8] * v[2]};
  }
  Vec3 apply_transposed(const Vec3& v) const {
    return {r[0] * v[0] + r[3] * v[1] + r[6] * v[2], r[1] * v[0] + r[4] * v[1] + r[7] * v[2],
            r[2] * v[0] + r[5] * v[1] + r[8] * v[2]};
  }
};

inline Rotation head_rotation(Scalar yaw_deg, Scalar pitch_deg) {
  Scalar a = yaw_deg * M_PI / 180.0, b = pitch_deg * M_PI / 180.0;
  Scalar ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b);
  // R = R_pitch(x-axis) * R_yaw(y-axis)
  return Rotation{{ca, 0, sa,                  //
                   sb * sa, cb, -sb * ca,      //
                   -cb * sa, sb, cb * ca}};
}

// Smallest positive ray parameter where o + t d crosses the unit sphere after
// scaling by the ellipsoid axes; returns false when the ray misses.
inline bool ray_ellipsoid(const Vec3& o, const Vec3& d, const Vec3& axes, Scalar& t_hit) {
  Vec3 os{o[0] / axes[0], o[1] / axes[1], o[2] / axes[2]};
  Vec3 ds{d[0] / axes[0], d[1] / axes[1], d[2] / axes[2]};
  Scalar A = ds[0] * ds[0] + ds[1] * ds[1] + ds[2] * ds[2];
  Scalar B = 2.0 * (os[0] * ds[0] + os[1] * ds[1] + os[2] * ds[2]);
  Scalar C = os[0] * os[0] + os[1] * os[1] + os[2] * os[2] - 1.0;
  Scalar disc = B * B - 4 * A * C;
  if (disc <= 0 || A == 0) return false;
  Scalar sq = std::sqrt(disc);
  Scalar t0 = (-B - sq) / (2 * A);
  Scalar t1 = (-B + sq) / (2 * A);
  if (t0 > 1e-9) {
    t_hit = t0;
    return true;
  }
  if (t1 > 1e-9) {
    t_hit = t1;
    return true;
  }
  return false;
}

inline Scalar hash_noise(uint64_t seed, int y, int x, int channel) {
  uint64_t h = splitmix64(seed ^ (static_cast<uint64_t>(y) << 40) ^
                          (static_cast<uint64_t>(x) << 16) ^ static_cast<uint64_t>(channel));
  return static_cast<Scalar>(h >> 11) * 0x1.0p-53;
}

struct StylePalette {
  Color face, feature, lip, iris, ear;
  Scalar noise_amp;
};

inline StylePalette palette(const std::string& style, Rng& rng) {
  if (style == "human") {
    Scalar tone = rng.uniform(0.55, 0.95);
    Color face{tone, tone * 0.82, tone * 0.70};
    std::array<Color, 3> irises{{{0.35, 0.55, 0.75}, {0.45, 0.32, 0.18}, {0.30, 0.55, 0.35}}};
    return {face, {0.22, 0.16, 0.12}, {0.72, 0.34, 0.32},
            irises[static_cast<size_t>(rng.uniform_int(3))],
            {face[0] * 0.92, face[1] * 0.92, face[2] * 0.92}, 0.03};
  }
  if (style == "mammal-eared") {
    Scalar tone = rng.uniform(0.40, 0.75);
    Color face{tone, tone * 0.78, tone * 0.55};
    return {face, {0.15, 0.11, 0.08}, {0.35, 0.22, 0.20}, {0.75, 0.55, 0.20},
            {face[0] * 0.80, face[1] * 0.80, face[2] * 0.80}, 0.10};
  }
  Scalar tone = rng.uniform(0.55, 0.80);
  Color face{tone, tone * 1.02, tone * 1.06};
  std::array<Color, 2> irises{{{0.85, 0.25, 0.20}, {0.20, 0.80, 0.85}}};
  return {face, {0.18, 0.20, 0.24}, {0.25, 0.27, 0.30},
          irises[static_cast<size_t>(rng.uniform_int(2))],
          {face[0] * 0.85, face[1] * 0.85, face[2] * 0.85}, 0.015};
}

}  // namespace detail

// Deterministic geometry + ground truth for one scene. Procedure: rotate the
// 100-point template, project, ray-test self-occlusion against the head
// ellipsoid, then sample external occluders and combine the visibility flags.
inline SceneInstance synthesize_scene(uint64_t seed, const SceneParams& scene) {
  FaceTemplate T = face_template(scene.style);
  Rng rng(mix_seed(seed, fnv1a64(scene.style) ^ 0x5ce9e5u));

  SceneInstance inst;
  inst.style = scene.style;
  inst.yaw_deg = scene.yaw_deg;
  inst.pitch_deg = scene.pitch_deg;

  detail::Rotation R = detail::head_rotation(scene.yaw_deg, scene.pitch_deg);
  const Vec3 cam{0, 0, detail::kCameraDist};
  const Vec3 cam_local = R.apply_transposed(cam);

  const int S = scene.image_size;
  Scalar focal = detail::kFocal * (static_cast<Scalar>(S) / 96.0) * rng.uniform(0.92, 1.08);
  Scalar cx = S * 0.5 + rng.uniform(-0.04, 0.04) * S;
  Scalar cy = S * 0.5 + rng.uniform(-0.04, 0.04) * S;
  inst.focal = focal;
  inst.cx = cx;
  inst.cy = cy;

  inst.points_world.reserve(T.points.size());
  inst.points2d.reserve(T.points.size());
  inst.self_occluded.resize(T.points.size(), 0);
  for (size_t p = 0; p < T.points.size(); ++p) {
    Vec3 w = R.apply(T.points[p]);
    inst.points_world.push_back(w);
    Scalar depth = detail::kCameraDist - w[2];
    inst.points2d.push_back({cx + focal * w[0] / depth, cy - focal * w[1] / depth});
    // ray test in head-local coordinates, where the ellipsoid is axis-aligned
    Vec3 d{T.points[p][0] - cam_local[0], T.points[p][1] - cam_local[1],
           T.points[p][2] - cam_local[2]};
    Scalar t_hit;
    if (detail::ray_ellipsoid(cam_local, d, T.axes, t_hit) && t_hit < 1.0 - 1e-6)
      inst.self_occluded[p] = 1;
  }

  Scalar x0 = inst.points2d[0][0], x1 = x0, y0 = inst.points2d[0][1], y1 = y0;
  for (const auto& q : inst.points2d) {
    x0 = std::min(x0, q[0]);
    x1 = std::max(x1, q[0]);
    y0 = std::min(y0, q[1]);
    y1 = std::max(y1, q[1]);
  }
  Scalar mx = 0.12 * (x1 - x0), my = 0.12 * (y1 - y0);
  inst.box = {x0 - mx, y0 - my, (x1 - x0) + 2 * mx, (y1 - y0) + 2 * my};

  if (scene.occluder_min < 0 || scene.occluder_max < scene.occluder_min)
    throw std::runtime_error("synthesize: invalid occluder count range");
  int n_occ = rng.uniform_int(scene.occluder_min, scene.occluder_max);
  Scalar box_area = inst.box.w * inst.box.h;
  for (int i = 0; i < n_occ; ++i) {
    Occluder o;
    o.is_rect = rng.uniform() < 0.5;
    Scalar area = rng.uniform(0.02, 0.25) * box_area;
    Scalar aspect = rng.uniform(0.5, 2.0);
    Scalar w = std::sqrt(area * aspect), h = area / w;
    if (!o.is_rect) {
      // match the requested area for an ellipse as well
      Scalar k = std::sqrt(1.0 / M_PI);
      w *= 2 * k;
      h *= 2 * k;
    }
    o.rx = w * 0.5;
    o.ry = h * 0.5;
    o.cx = inst.box.x + rng.uniform(-0.1, 1.1) * inst.box.w;
    o.cy = inst.box.y + rng.uniform(-0.1, 1.1) * inst.box.h;
    o.noise_fill = rng.uniform() < 0.5;
    o.color = quantize8(Color{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)});
    inst.occluders.push_back(o);
  }
  inst.ext_occluded.resize(inst.points2d.size(), 0);
  for (size_t p = 0; p < inst.points2d.size(); ++p)
    for (const auto& o : inst.occluders)
      if (occluder_contains(o, inst.points2d[p][0], inst.points2d[p][1])) {
        inst.ext_occluded[p] = 1;
        break;
      }
  return inst;
}

namespace detail {

// Paints the scene. Kept apart from the geometry so tests can reason about
// visibility without rendering.
inline Image render_scene(uint64_t seed, const SceneParams& scene, const SceneInstance& inst,
                          const FaceTemplate& T) {
  Rng rng(mix_seed(seed, 0xa11ce5u));
  StylePalette pal = palette(scene.style, rng);
  const int S = scene.image_size;
  Image img(S, S);
  uint64_t noise_seed = mix_seed(seed, 0xb06e5u);

  // background
  Color bg = quantize8(Color{rng.uniform(0.1, 0.85), rng.uniform(0.1, 0.85), rng.uniform(0.1, 0.85)});
  bool bg_noise = scene.background == "noise";
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      for (int c = 0; c < 3; ++c) {
        Scalar v = bg[static_cast<size_t>(c)];
        if (bg_noise) v += 0.12 * (hash_noise(noise_seed, y, x, c) - 0.5);
        img.at(y, x, c) = quantize8(v);
      }

  // head silhouette via per-pixel ray cast with simple n.z shading
  Rotation R = head_rotation(scene.yaw_deg, scene.pitch_deg);
  Vec3 cam{0, 0, kCameraDist};
  Vec3 cam_local = R.apply_transposed(cam);
  Scalar focal = inst.focal, cx = inst.cx, cy = inst.cy;

  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      Vec3 dir{(x + 0.5 - cx) / focal, -(y + 0.5 - cy) / focal, -1.0};
      Vec3 dl = R.apply_transposed(dir);
      Scalar t_hit;
      if (!ray_ellipsoid(cam_local, dl, T.axes, t_hit)) continue;
      Vec3 hit{cam_local[0] + t_hit * dl[0], cam_local[1] + t_hit * dl[1],
               cam_local[2] + t_hit * dl[2]};
      // local surface normal of the axis-scaled sphere, rotated to world
      Vec3 nl{hit[0] / (T.axes[0] * T.axes[0]), hit[1] / (T.axes[1] * T.axes[1]),
              hit[2] / (T.axes[2] * T.axes[2])};
      Scalar nn = std::sqrt(nl[0] * nl[0] + nl[1] * nl[1] + nl[2] * nl[2]);
      Vec3 nw = R.apply({nl[0] / nn, nl[1] / nn, nl[2] / nn});
      Scalar shade = 0.72 + 0.28 * std::max(0.0, nw[2]);
      for (int c = 0; c < 3; ++c) {
        Scalar v = pal.face[static_cast<size_t>(c)] * shade;
        v += pal.noise_amp * (hash_noise(noise_seed, y, x, c + 3) - 0.5);
        if (scene.style == "robot") {
          // sparse panel seams
          int band = static_cast<int>(std::floor(hit[1] * 6.0 + 100)) % 3;
          if (band == 0 && std::abs(hit[1] * 6.0 - std::round(hit[1] * 6.0)) < 0.08) v *= 0.75;
        }
        img.at(y, x, c) = quantize8(v);
      }
    }

  auto pts2d = [&](int idx) { return inst.points2d[static_cast<size_t>(idx)]; };
  auto mostly_visible = [&](int lo, int hi) {
    int vis = 0;
    for (int i = lo; i <= hi; ++i) vis += 1 - inst.self_occluded[static_cast<size_t>(i)];
    return vis * 2 > (hi - lo + 1);
  };
  auto poly_of = [&](int lo, int hi) {
    std::vector<std::array<Scalar, 2>> poly;
    for (int i = lo; i <= hi; ++i) poly.push_back({pts2d(i)[0], pts2d(i)[1]});
    return poly;
  };
  const Scalar scale = inst.box.w / 64.0;

  // ears first so the face contour overdraws their base
  if (mostly_visible(86, 92)) fill_polygon(img, poly_of(86, 92), pal.ear);
  if (mostly_visible(93, 99)) fill_polygon(img, poly_of(93, 99), pal.ear);

  if (mostly_visible(0, 16)) draw_polyline(img, poly_of(0, 16), 1.6 * scale, pal.feature);
  if (mostly_visible(17, 21)) draw_polyline(img, poly_of(17, 21), 2.4 * scale, pal.feature);
  if (mostly_visible(22, 26)) draw_polyline(img, poly_of(22, 26), 2.4 * scale, pal.feature);
  if (mostly_visible(27, 30)) draw_polyline(img, poly_of(27, 30), 1.6 * scale, pal.feature);
  if (mostly_visible(31, 35)) draw_polyline(img, poly_of(31, 35), 1.6 * scale, pal.feature);

  // eyes: white, iris, pupil, sized from the template ring
  for (int side = 0; side < 2; ++side) {
    int c0 = side == 0 ? 36 : 42;
    if (!mostly_visible(c0, c0 + 5)) continue;
    int pu = side == 0 ? 68 : 69;
    int ir0 = side == 0 ? 70 : 74;
    Point2 outer = pts2d(side == 0 ? 36 : 45), inner = pts2d(side == 0 ? 39 : 42);
    Point2 pc = pts2d(pu);
    Scalar ew = 0.5 * std::hypot(outer[0] - inner[0], outer[1] - inner[1]);
    fill_ellipse(img, (outer[0] + inner[0]) / 2, (outer[1] + inner[1]) / 2, ew * 1.1, ew * 0.55,
                 {0.93, 0.93, 0.93});
    Scalar irr = 0;
    for (int k = 0; k < 4; ++k)
      irr += 0.25 * std::hypot(pts2d(ir0 + k)[0] - pc[0], pts2d(ir0 + k)[1] - pc[1]);
    fill_ellipse(img, pc[0], pc[1], irr, irr, pal.iris);
    fill_ellipse(img, pc[0], pc[1], irr * 0.45, irr * 0.45, {0.05, 0.05, 0.05});
  }

  // mouth: outer lip polygon then darker inner-mouth ring
  if (mostly_visible(48, 59)) {
    fill_polygon(img, poly_of(48, 59), pal.lip);
    if (mostly_visible(78, 85)) fill_polygon(img, poly_of(78, 85), {0.12, 0.07, 0.07});
  }

  // external occluders on top of everything
  for (size_t i = 0; i < inst.occluders.size(); ++i) {
    const auto& o = inst.occluders[i];
    int iy0 = std::max(0, static_cast<int>(std::floor(o.cy - o.ry)));
    int iy1 = std::min(S - 1, static_cast<int>(std::ceil(o.cy + o.ry)));
    int ix0 = std::max(0, static_cast<int>(std::floor(o.cx - o.rx)));
    int ix1 = std::min(S - 1, static_cast<int>(std::ceil(o.cx + o.rx)));
    for (int y = iy0; y <= iy1; ++y)
      for (int x = ix0; x <= ix1; ++x) {
        if (!occluder_contains(o, x + 0.5, y + 0.5)) continue;
        for (int c = 0; c < 3; ++c) {
          Scalar v = o.color[static_cast<size_t>(c)];
          if (o.noise_fill)
            v += 0.25 * (hash_noise(noise_seed ^ (i + 1), y, x, c) - 0.5);
          img.at(y, x, c) = quantize8(v);
        }
      }
  }
  return img;
}

}  // namespace detail

// Full sample: geometry + painted image + combined visibility. Deterministic
// for a fixed (seed, scene); out-of-frame landmarks are labeled invisible.
inline AnnotatedSample synthesize_sample(uint64_t seed, const SceneParams& scene) {
  SceneInstance inst = synthesize_scene(seed, scene);
  FaceTemplate T = face_template(scene.style);
  AnnotatedSample s;
  s.image = detail::render_scene(seed, scene, inst, T);
  s.box = inst.box;
  s.points = inst.points2d;
  s.visibility.resize(inst.points2d.size());
  const int S = scene.image_size;
  for (size_t p = 0; p < inst.points2d.size(); ++p) {
    bool in_frame = inst.points2d[p][0] >= 0 && inst.points2d[p][0] < S &&
                    inst.points2d[p][1] >= 0 && inst.points2d[p][1] < S;
    s.visibility[p] =
        (!inst.self_occluded[p] && !inst.ext_occluded[p] && in_frame) ? 1 : 0;
  }
  s.domain_tag = "synthetic-" + scene.style;
  return s;
}

}  // namespace occlm
