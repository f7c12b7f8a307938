#pragma once

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "occlm/backbone.hpp"
#include "occlm/decode.hpp"
#include "occlm/layout.hpp"
#include "occlm/visibility.hpp"

namespace occlm {

struct ModelConfig {
  BackboneConfig backbone;
  VisibilityHeadConfig visibility;
  Scalar temperature = 1.0;
  // ablation switches: drop either factor of the evidence mask at decode time
  bool use_point_evidence = true;
  bool use_edge_evidence = true;
};

inline void validate_model_config(const ModelConfig& c) {
  validate_backbone_config(c.backbone);
  validate_visibility_config(c.visibility);
  if (!(c.temperature > 0)) throw std::runtime_error("model: temperature must be positive");
}

struct ModelOutput {
  BackboneOutput net;
  DecodeResult decode;
  VisibilityOutput visibility;  // empty unless requested
  bool has_visibility = false;
};

// Upstream gradients for one sample; empty tensors mean "no contribution".
struct ModelGradIn {
  std::vector<Tensor> stage_heatmaps;
  Tensor point_map;   // wrt sigmoid point maps
  Tensor edge_map;    // wrt sigmoid edge maps
  Tensor coords;      // wrt decoded coordinates (P, 2)
  Tensor visibility;  // wrt v_hat (P)
};

class Model {
 public:
  Model(const ModelConfig& cfg, const LandmarkLayout& layout)
      : cfg_(cfg), layout_(layout),
        backbone_(cfg.backbone, static_cast<int>(layout.edges.size())),
        vis_(cfg.backbone.channels, layout.num_points, static_cast<int>(layout.edges.size()),
             cfg.visibility) {
    validate_model_config(cfg);
  }

  ModelOutput forward(const Tensor& crop, bool with_visibility) {
    ModelOutput out;
    out.net = backbone_.forward(crop);
    Tensor point_gate = out.net.point_pred;
    if (!cfg_.use_point_evidence) {
      point_gate = Tensor(out.net.point_pred.shape());
      point_gate.fill(1.0);
    }
    Tensor evidence;
    if (cfg_.use_edge_evidence) {
      evidence = aggregate_edge_evidence(out.net.edge_pred, layout_);
    } else {
      evidence = Tensor(out.net.point_pred.shape());
      evidence.fill(1.0);
    }
    out.decode = decode_.forward(out.net.stage_heatmaps.back(), point_gate, evidence,
                                 cfg_.temperature, cfg_.backbone.stride);
    if (with_visibility) {
      out.visibility =
          vis_.forward(out.net.features, out.net.point_pred, out.net.edge_pred, out.decode.attention);
      out.has_visibility = true;
    }
    with_vis_ = with_visibility;
    return out;
  }

  Tensor backward(const ModelGradIn& g) {
    auto acc = [](Tensor& dst, const Tensor& src) {
      if (!src.numel()) return;
      if (!dst.numel())
        dst = src;
      else
        dst.add_(src);
    };

    if (g.stage_heatmaps.size() > static_cast<size_t>(cfg_.backbone.stacks))
      throw std::runtime_error("model: more stage gradients than stages");
    BackboneGrads bg;
    bg.stage_heatmaps.resize(static_cast<size_t>(cfg_.backbone.stacks));

    Tensor g_attention;
    if (g.visibility.numel()) {
      if (!with_vis_) throw std::runtime_error("model: visibility grads without visibility pass");
      VisibilityGrads vg = vis_.backward(g.visibility);
      acc(bg.features, vg.features);
      acc(bg.point_pred, vg.point_pred);
      acc(bg.edge_pred, vg.edge_pred);
      g_attention = vg.attention;
    }
    if (g.coords.numel() || g_attention.numel()) {
      DecodeGrads dg = decode_.backward(g.coords, g_attention);
      acc(bg.stage_heatmaps.back(), dg.heatmaps);
      // disabled evidence factors are constants; their grads are dropped
      if (cfg_.use_point_evidence) acc(bg.point_pred, dg.point_pred);
      if (cfg_.use_edge_evidence)
        acc(bg.edge_pred, aggregate_edge_evidence_backward(dg.evidence, layout_));
    }
    for (size_t k = 0; k < g.stage_heatmaps.size(); ++k)
      acc(bg.stage_heatmaps[k], g.stage_heatmaps[k]);
    acc(bg.point_pred, g.point_map);
    acc(bg.edge_pred, g.edge_map);
    return backbone_.backward(bg);
  }

  std::vector<ParamRef> params(bool include_visibility = true) {
    std::vector<ParamRef> out = backbone_.params();
    if (include_visibility) {
      auto vp = vis_.params();
      out.insert(out.end(), vp.begin(), vp.end());
    }
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  const LandmarkLayout& layout() const { return layout_; }
  VisibilityHead& visibility_head() { return vis_; }

 private:
  ModelConfig cfg_;
  LandmarkLayout layout_;
  Backbone backbone_;
  VisibilityHead vis_;
  DecodeOp decode_;
  bool with_vis_ = false;
};

inline const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::kGated: return "gated";
    case FusionMode::kLocalOnly: return "local_only";
    case FusionMode::kContextOnly: return "context_only";
    case FusionMode::kFixedSum: return "fixed_sum";
  }
  return "unknown";
}

inline FusionMode fusion_mode_from_name(const std::string& s) {
  if (s == "gated") return FusionMode::kGated;
  if (s == "local_only") return FusionMode::kLocalOnly;
  if (s == "context_only") return FusionMode::kContextOnly;
  if (s == "fixed_sum") return FusionMode::kFixedSum;
  throw std::runtime_error("visibility: unknown fusion mode '" + s + "'");
}

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["backbone"] = {{"stacks", c.backbone.stacks},     {"channels", c.backbone.channels},
                   {"crop_h", c.backbone.crop_h},     {"crop_w", c.backbone.crop_w},
                   {"stride", c.backbone.stride},     {"res_blocks", c.backbone.res_blocks},
                   {"seed", c.backbone.seed}};
  j["visibility"] = {{"c_psi", c.visibility.c_psi},
                     {"local_depth", c.visibility.local_depth},
                     {"mix_width", c.visibility.mix_width},
                     {"alpha0", c.visibility.alpha0},
                     {"mode", fusion_mode_name(c.visibility.mode)},
                     {"seed", c.visibility.seed}};
  j["temperature"] = c.temperature;
  j["use_point_evidence"] = c.use_point_evidence;
  j["use_edge_evidence"] = c.use_edge_evidence;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& b = j.at("backbone");
  c.backbone.stacks = b.at("stacks").get<int>();
  c.backbone.channels = b.at("channels").get<int>();
  c.backbone.crop_h = b.at("crop_h").get<int>();
  c.backbone.crop_w = b.at("crop_w").get<int>();
  c.backbone.stride = b.at("stride").get<int>();
  c.backbone.res_blocks = b.at("res_blocks").get<int>();
  c.backbone.seed = b.at("seed").get<uint64_t>();
  const auto& v = j.at("visibility");
  c.visibility.c_psi = v.at("c_psi").get<int>();
  c.visibility.local_depth = v.at("local_depth").get<int>();
  c.visibility.mix_width = v.at("mix_width").get<int>();
  c.visibility.alpha0 = v.at("alpha0").get<Scalar>();
  if (v.contains("mode")) c.visibility.mode = fusion_mode_from_name(v.at("mode").get<std::string>());
  c.visibility.seed = v.at("seed").get<uint64_t>();
  c.temperature = j.at("temperature").get<Scalar>();
  if (j.contains("use_point_evidence")) c.use_point_evidence = j.at("use_point_evidence").get<bool>();
  if (j.contains("use_edge_evidence")) c.use_edge_evidence = j.at("use_edge_evidence").get<bool>();
  return c;
}

inline std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Self-describing container: config, layout hash, step counter, and every
// parameter tensor keyed by its stable name.
inline nlohmann::ordered_json checkpoint_json(Model& model, int64_t step) {
  nlohmann::ordered_json j;
  j["format"] = "occlm-checkpoint-v1";
  j["step"] = step;
  j["layout_hash"] = hash_hex(layout_hash(model.layout()));
  j["config"] = model_config_to_json(model.config());
  auto params = nlohmann::ordered_json::object();
  for (auto& p : model.params()) {
    if (!p.value->all_finite())
      throw std::runtime_error("checkpoint: non-finite parameter " + p.name);
    nlohmann::ordered_json t;
    t["shape"] = p.value->shape();
    auto data = nlohmann::ordered_json::array();
    for (size_t i = 0; i < p.value->numel(); ++i) data.push_back((*p.value)[i]);
    t["data"] = std::move(data);
    params[p.name] = std::move(t);
  }
  j["params"] = std::move(params);
  return j;
}

inline void write_json_atomic(const nlohmann::ordered_json& j, const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw std::runtime_error("cannot write " + tmp);
    f << j.dump() << "\n";
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move " + tmp + " into place");
}

inline void save_checkpoint(Model& model, const std::string& path, int64_t step) {
  write_json_atomic(checkpoint_json(model, step), path);
}

inline nlohmann::json read_json_file(const std::string& path, const char* what) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(std::string(what) + ": cannot read " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(what) + ": parse error: " + e.what());
  }
  return j;
}

inline Model model_from_checkpoint_json(const nlohmann::json& j, const LandmarkLayout& layout,
                                        int64_t* step_out = nullptr) {
  if (j.value("format", "") != std::string("occlm-checkpoint-v1"))
    throw std::runtime_error("checkpoint: unknown format");
  if (j.at("layout_hash").get<std::string>() != hash_hex(layout_hash(layout)))
    throw std::runtime_error("checkpoint: layout hash mismatch");
  Model model(model_config_from_json(j.at("config")), layout);
  const auto& params = j.at("params");
  size_t used = 0;
  for (auto& p : model.params()) {
    if (!params.contains(p.name))
      throw std::runtime_error("checkpoint: missing parameter " + p.name);
    const auto& t = params.at(p.name);
    auto shape = t.at("shape").get<std::vector<int>>();
    if (shape != p.value->shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
    const auto& data = t.at("data");
    if (data.size() != p.value->numel())
      throw std::runtime_error("checkpoint: size mismatch for " + p.name);
    for (size_t i = 0; i < p.value->numel(); ++i) (*p.value)[i] = data[i].get<Scalar>();
    ++used;
  }
  if (used != params.size()) throw std::runtime_error("checkpoint: unused parameters in file");
  if (step_out) *step_out = j.at("step").get<int64_t>();
  return model;
}

inline Model load_checkpoint(const std::string& path, const LandmarkLayout& layout,
                             int64_t* step_out = nullptr) {
  return model_from_checkpoint_json(read_json_file(path, "checkpoint"), layout, step_out);
}

}  // namespace occlm
