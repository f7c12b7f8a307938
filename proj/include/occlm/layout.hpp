#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "occlm/common.hpp"

namespace occlm {

// Canonical 100-point schema plus the semantic edge polylines used for
// evidence aggregation. Immutable after load; safe to share across threads.
struct LandmarkLayout {
  struct Edge {
    std::string name;
    std::vector<int> point_indices;  // ordered polyline, >= 2 points
  };

  int num_points = 0;
  std::vector<std::string> point_names;
  std::vector<std::string> point_parts;
  std::vector<Edge> edges;
  // edge_membership[p] = sorted list of edge indices whose polyline contains p
  std::vector<std::vector<int>> edge_membership;

  int num_edges() const { return static_cast<int>(edges.size()); }
};

inline std::vector<std::vector<int>> compute_edge_membership(
    const std::vector<LandmarkLayout::Edge>& edges, int num_points) {
  std::vector<std::set<int>> member(static_cast<size_t>(num_points));
  for (size_t e = 0; e < edges.size(); ++e)
    for (int p : edges[e].point_indices) member[static_cast<size_t>(p)].insert(static_cast<int>(e));
  std::vector<std::vector<int>> out(static_cast<size_t>(num_points));
  for (int p = 0; p < num_points; ++p)
    out[static_cast<size_t>(p)].assign(member[static_cast<size_t>(p)].begin(),
                                       member[static_cast<size_t>(p)].end());
  return out;
}

inline void validate_layout(LandmarkLayout& layout) {
  if (layout.num_points != kNumPoints)
    throw std::runtime_error("layout validation: point count must be 100, got " +
                             std::to_string(layout.num_points));
  if (layout.point_names.size() != static_cast<size_t>(kNumPoints))
    throw std::runtime_error("layout validation: point count (names) must be 100");
  for (size_t e = 0; e < layout.edges.size(); ++e) {
    const auto& edge = layout.edges[e];
    if (edge.point_indices.size() < 2)
      throw std::runtime_error("layout validation: empty polyline in edge '" + edge.name + "'");
    for (size_t i = 0; i < edge.point_indices.size(); ++i) {
      int p = edge.point_indices[i];
      if (p < 0 || p >= layout.num_points)
        throw std::runtime_error("layout validation: dangling index " + std::to_string(p) +
                                 " in edge '" + edge.name + "'");
      if (i > 0 && edge.point_indices[i - 1] == p)
        throw std::runtime_error("layout validation: duplicate consecutive index in edge '" +
                                 edge.name + "'");
    }
  }
  auto computed = compute_edge_membership(layout.edges, layout.num_points);
  if (!layout.edge_membership.empty() && layout.edge_membership != computed)
    throw std::runtime_error("layout validation: stored edge_membership disagrees with edges");
  layout.edge_membership = std::move(computed);
}

// The bundled 100-point assignment: 0-67 standard 68-point base, 68-69
// pupils, 70-77 iris rings (4 per eye), 78-85 inner-mouth ring, 86-99 ear
// contours (7 per ear). 16 semantic edges; pupils and iris points belong to
// no edge.
inline LandmarkLayout default_layout() {
  LandmarkLayout L;
  L.num_points = kNumPoints;
  L.point_names.resize(kNumPoints);
  L.point_parts.resize(kNumPoints);
  auto name_range = [&](int lo, int hi, const std::string& base, const std::string& part) {
    for (int i = lo; i <= hi; ++i) {
      L.point_names[static_cast<size_t>(i)] = base + "_" + std::to_string(i - lo);
      L.point_parts[static_cast<size_t>(i)] = part;
    }
  };
  name_range(0, 16, "jaw", "jaw");
  name_range(17, 21, "brow_left", "brow_left");
  name_range(22, 26, "brow_right", "brow_right");
  name_range(27, 30, "nose_bridge", "nose");
  name_range(31, 35, "nose_base", "nose");
  name_range(36, 41, "eye_left", "eye_left");
  name_range(42, 47, "eye_right", "eye_right");
  name_range(48, 59, "lip_outer", "mouth");
  name_range(60, 67, "lip_inner", "mouth");
  L.point_names[68] = "pupil_left";
  L.point_parts[68] = "pupil_left";
  L.point_names[69] = "pupil_right";
  L.point_parts[69] = "pupil_right";
  name_range(70, 73, "iris_left", "iris_left");
  name_range(74, 77, "iris_right", "iris_right");
  name_range(78, 85, "mouth_inner", "inner_mouth");
  name_range(86, 92, "ear_left", "ear_left");
  name_range(93, 99, "ear_right", "ear_right");

  auto seq = [](int lo, int hi) {
    std::vector<int> v;
    for (int i = lo; i <= hi; ++i) v.push_back(i);
    return v;
  };
  L.edges = {
      {"jawline", seq(0, 16)},
      {"brow_left", seq(17, 21)},
      {"brow_right", seq(22, 26)},
      {"nose_bridge", seq(27, 30)},
      {"nose_base", seq(31, 35)},
      {"eyelid_left_upper", {36, 37, 38, 39}},
      {"eyelid_left_lower", {39, 40, 41, 36}},
      {"eyelid_right_upper", {42, 43, 44, 45}},
      {"eyelid_right_lower", {45, 46, 47, 42}},
      {"lip_outer_upper", seq(48, 54)},
      {"lip_outer_lower", {54, 55, 56, 57, 58, 59, 48}},
      {"lip_inner_upper", seq(60, 64)},
      {"lip_inner_lower", {64, 65, 66, 67, 60}},
      {"inner_mouth_ring", {78, 79, 80, 81, 82, 83, 84, 85, 78}},
      {"ear_left", seq(86, 92)},
      {"ear_right", seq(93, 99)},
  };
  validate_layout(L);
  return L;
}

inline nlohmann::ordered_json layout_to_json(const LandmarkLayout& layout) {
  nlohmann::ordered_json j;
  j["points"] = nlohmann::ordered_json::array();
  for (int p = 0; p < layout.num_points; ++p) {
    j["points"].push_back({{"index", p},
                           {"name", layout.point_names[static_cast<size_t>(p)]},
                           {"part", layout.point_parts[static_cast<size_t>(p)]}});
  }
  j["edges"] = nlohmann::ordered_json::array();
  for (int e = 0; e < layout.num_edges(); ++e) {
    j["edges"].push_back({{"index", e},
                          {"name", layout.edges[static_cast<size_t>(e)].name},
                          {"point_indices", layout.edges[static_cast<size_t>(e)].point_indices}});
  }
  return j;
}

inline void save_layout(const LandmarkLayout& layout, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("layout: cannot write " + path);
  f << layout_to_json(layout).dump(2) << "\n";
}

inline LandmarkLayout load_layout(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("layout: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("layout parse failure: ") + e.what());
  }
  LandmarkLayout L;
  if (!j.contains("points") || !j["points"].is_array())
    throw std::runtime_error("layout parse failure: missing 'points' array");
  if (!j.contains("edges") || !j["edges"].is_array())
    throw std::runtime_error("layout parse failure: missing 'edges' array");
  L.num_points = static_cast<int>(j["points"].size());
  L.point_names.resize(j["points"].size());
  L.point_parts.resize(j["points"].size());
  for (const auto& pt : j["points"]) {
    int idx = pt.at("index").get<int>();
    if (idx < 0 || idx >= static_cast<int>(j["points"].size()))
      throw std::runtime_error("layout parse failure: point index out of range");
    L.point_names[static_cast<size_t>(idx)] = pt.at("name").get<std::string>();
    L.point_parts[static_cast<size_t>(idx)] = pt.value("part", "");
  }
  for (const auto& ed : j["edges"]) {
    LandmarkLayout::Edge e;
    e.name = ed.at("name").get<std::string>();
    e.point_indices = ed.at("point_indices").get<std::vector<int>>();
    L.edges.push_back(std::move(e));
  }
  if (j.contains("edge_membership"))
    L.edge_membership = j["edge_membership"].get<std::vector<std::vector<int>>>();
  validate_layout(L);
  return L;
}

// 𝓔(p), ascending by edge index.
inline const std::vector<int>& edges_for_landmark(const LandmarkLayout& layout, int p) {
  if (p < 0 || p >= layout.num_points)
    throw std::runtime_error("edges_for_landmark: index out of range: " + std::to_string(p));
  return layout.edge_membership[static_cast<size_t>(p)];
}

// Stable content hash; checkpoints store it so eval can reject a layout swap.
inline uint64_t layout_hash(const LandmarkLayout& layout) {
  return fnv1a64(layout_to_json(layout).dump());
}

}  // namespace occlm
