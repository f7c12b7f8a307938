#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "occlm/image.hpp"
#include "occlm/tensor.hpp"

namespace occlm {


struct Box {
  Scalar x = 0, y = 0, w = 0, h = 0;
  Scalar diagonal() const { return std::sqrt(w * w + h * h); }
};

// Image + ground truth in source pixel coordinates.
struct AnnotatedSample {
  Image image;
  Box box;
  std::vector<Point2> points;    // 100 x (x,y)
  std::vector<int> visibility;   // 100 x {0,1}
  std::string domain_tag;
};

// Row-major 2x3 affine: (x,y) -> (m0 x + m1 y + m2, m3 x + m4 y + m5).
struct Affine2 {
  std::array<Scalar, 6> m{1, 0, 0, 0, 1, 0};

  Point2 apply(const Point2& p) const {
    return {m[0] * p[0] + m[1] * p[1] + m[2], m[3] * p[0] + m[4] * p[1] + m[5]};
  }

  Affine2 inverse() const {
    Scalar det = m[0] * m[4] - m[1] * m[3];
    if (det == 0) throw std::runtime_error("affine: singular transform");
    Affine2 inv;
    inv.m[0] = m[4] / det;
    inv.m[1] = -m[1] / det;
    inv.m[3] = -m[3] / det;
    inv.m[4] = m[0] / det;
    inv.m[2] = -(inv.m[0] * m[2] + inv.m[1] * m[5]);
    inv.m[5] = -(inv.m[3] * m[2] + inv.m[4] * m[5]);
    return inv;
  }
};

// Crop-space view of a sample: the learning coordinate system.
struct NormalizedCrop {
  Tensor crop;                   // 3 x h x w
  Affine2 transform;             // source -> crop
  std::vector<Point2> points_crop;
};

// Resample the box region to h x w with bilinear interpolation; the affine
// maps box corners to crop corners. Out-of-frame source pixels read as zero.
inline NormalizedCrop normalize_crop(const AnnotatedSample& sample, int h, int w) {
  if (sample.box.w <= 0 || sample.box.h <= 0)
    throw std::runtime_error("normalize_crop: non-positive box dimensions");
  if (h <= 0 || w <= 0) throw std::runtime_error("normalize_crop: non-positive crop size");
  NormalizedCrop out;
  out.transform.m = {static_cast<Scalar>(w) / sample.box.w,
                     0,
                     -sample.box.x * w / sample.box.w,
                     0,
                     static_cast<Scalar>(h) / sample.box.h,
                     -sample.box.y * h / sample.box.h};
  Affine2 inv = out.transform.inverse();
  out.crop = Tensor({3, h, w});
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) {
      // crop pixel center -> source pixel-center coordinates
      Point2 src = inv.apply({i + 0.5, j + 0.5});
      for (int c = 0; c < 3; ++c)
        out.crop.at(c, j, i) = sample.image.sample_bilinear(src[1] - 0.5, src[0] - 0.5, c);
    }
  out.points_crop.reserve(sample.points.size());
  for (const auto& p : sample.points) out.points_crop.push_back(out.transform.apply(p));
  return out;
}

inline Scalar round6(Scalar v) { return std::round(v * 1e6) / 1e6; }

// Annotation JSON next to a referenced PNG. Visibility stored as 0/1 ints.
inline void write_annotation(const AnnotatedSample& sample, const std::string& ann_path,
                             const std::string& image_rel_path) {
  if (sample.points.size() != static_cast<size_t>(kNumPoints) ||
      sample.visibility.size() != sample.points.size())
    throw std::runtime_error("annotation: sample must carry 100 points with visibility");
  namespace fs = std::filesystem;
  fs::path dir = fs::path(ann_path).parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  write_png(sample.image, (dir / image_rel_path).string());
  nlohmann::ordered_json j;
  j["image"] = image_rel_path;
  j["box"] = {round6(sample.box.x), round6(sample.box.y), round6(sample.box.w),
              round6(sample.box.h)};
  auto pts = nlohmann::ordered_json::array();
  for (const auto& p : sample.points) pts.push_back({round6(p[0]), round6(p[1])});
  j["points"] = std::move(pts);
  j["visibility"] = sample.visibility;
  j["domain"] = sample.domain_tag;
  std::ofstream f(ann_path);
  if (!f) throw std::runtime_error("annotation: cannot write " + ann_path);
  f << j.dump(2) << "\n";
}

inline AnnotatedSample read_annotation(const std::string& ann_path) {
  namespace fs = std::filesystem;
  std::ifstream f(ann_path);
  if (!f) throw std::runtime_error("annotation: cannot open " + ann_path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("annotation schema: parse failure: ") + e.what());
  }
  for (const char* key : {"image", "box", "points", "visibility", "domain"})
    if (!j.contains(key))
      throw std::runtime_error(std::string("annotation schema: missing key '") + key + "'");
  AnnotatedSample s;
  auto box = j["box"];
  if (!box.is_array() || box.size() != 4)
    throw std::runtime_error("annotation schema: box must be [x,y,w,h]");
  s.box = {box[0].get<Scalar>(), box[1].get<Scalar>(), box[2].get<Scalar>(),
           box[3].get<Scalar>()};
  if (s.box.w <= 0 || s.box.h <= 0)
    throw std::runtime_error("annotation schema: box must have positive size");
  if (j["points"].size() != static_cast<size_t>(kNumPoints))
    throw std::runtime_error("annotation schema: expected 100 points, got " +
                             std::to_string(j["points"].size()));
  for (const auto& p : j["points"]) {
    if (!p.is_array() || p.size() != 2)
      throw std::runtime_error("annotation schema: each point must be [x,y]");
    Point2 q{p[0].get<Scalar>(), p[1].get<Scalar>()};
    if (!std::isfinite(q[0]) || !std::isfinite(q[1]))
      throw std::runtime_error("annotation schema: non-finite point");
    s.points.push_back(q);
  }
  if (j["visibility"].size() != static_cast<size_t>(kNumPoints))
    throw std::runtime_error("annotation schema: expected 100 visibility flags");
  for (const auto& v : j["visibility"]) {
    int b = v.get<int>();
    if (b != 0 && b != 1)
      throw std::runtime_error("annotation schema: visibility must be 0 or 1, got " +
                               std::to_string(b));
    s.visibility.push_back(b);
  }
  s.domain_tag = j["domain"].get<std::string>();
  fs::path img_path = fs::path(ann_path).parent_path() / j["image"].get<std::string>();
  if (!fs::exists(img_path))
    throw std::runtime_error("annotation: missing image file " + img_path.string());
  s.image = read_png(img_path.string());
  return s;
}

// Dataset directory: annotations + images + manifest.json listing files and
// their split.
struct ManifestEntry {
  std::string annotation;
  std::string split;  // train | val | test
};

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& dir) {
  nlohmann::ordered_json j;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : entries)
    j["entries"].push_back({{"annotation", e.annotation}, {"split", e.split}});
  std::ofstream f(std::filesystem::path(dir) / "manifest.json");
  if (!f) throw std::runtime_error("manifest: cannot write in " + dir);
  f << j.dump(2) << "\n";
}

inline std::vector<ManifestEntry> read_manifest(const std::string& dir) {
  std::ifstream f(std::filesystem::path(dir) / "manifest.json");
  if (!f) throw std::runtime_error("manifest: cannot open manifest.json in " + dir);
  nlohmann::json j;
  f >> j;
  std::vector<ManifestEntry> out;
  for (const auto& e : j.at("entries"))
    out.push_back({e.at("annotation").get<std::string>(), e.at("split").get<std::string>()});
  return out;
}

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::string dir, const std::string& split) : dir_(std::move(dir)) {
    for (const auto& e : read_manifest(dir_))
      if (e.split == split) files_.push_back(e.annotation);
  }

  size_t size() const { return files_.size(); }
  bool empty() const { return files_.empty(); }

  AnnotatedSample load(size_t i) const {
    return read_annotation((std::filesystem::path(dir_) / files_[i]).string());
  }

  const std::string& file(size_t i) const { return files_[i]; }

 private:
  std::string dir_;
  std::vector<std::string> files_;
};

}  // namespace occlm
