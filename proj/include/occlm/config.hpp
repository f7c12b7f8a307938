#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "occlm/metrics.hpp"
#include "occlm/model.hpp"
#include "occlm/synth.hpp"
#include "occlm/training.hpp"

namespace occlm {

struct GenerateParams {
  int train_count = 200, val_count = 50, test_count = 50;
  Scalar yaw_max = 35.0;    // yaw sampled uniformly from [-yaw_max, yaw_max]
  Scalar pitch_max = 12.0;  // likewise for pitch
  int occluder_min = 0, occluder_max = 3;
  int image_size = 96;
  std::string background = "noise";
  std::vector<std::string> styles = {"human", "mammal-eared", "robot"};
};

// Everything a run needs, resolvable from one JSON file plus overrides.
struct RunConfig {
  std::string layout_path;  // empty = built-in canonical layout
  std::string dataset_dir = "out/dataset";
  std::string out_dir;  // resolved by the CLI when empty
  uint64_t seed = 1;
  ModelConfig model;
  TrainConfig train;
  MetricConfig metrics;
  GenerateParams generate;
};

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["warm_start_epochs"] = c.warm_start_epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["cosine_decay"] = c.cosine_decay;
  j["seed"] = c.seed;
  j["weights"] = {{"stage", c.weights.stage}, {"point", c.weights.point},
                  {"edge", c.weights.edge},   {"vis", c.weights.vis},
                  {"syn", c.weights.syn}};
  j["occaug"] = c.occaug;
  j["mask_prob"] = c.mask_prob;
  j["masked_views_in_hm"] = c.masked_views_in_hm;
  j["occ"] = {{"min_occluders", c.occ.min_occluders}, {"max_occluders", c.occ.max_occluders},
              {"min_area", c.occ.min_area},           {"max_area", c.occ.max_area},
              {"delta", c.occ.delta}};
  j["sigma_hm"] = c.sigma_hm;
  j["sigma_pt"] = c.sigma_pt;
  j["sigma_edge"] = c.sigma_edge;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.warm_start_epochs = j.at("warm_start_epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<Scalar>();
  c.cosine_decay = j.at("cosine_decay").get<bool>();
  c.seed = j.at("seed").get<uint64_t>();
  const auto& w = j.at("weights");
  c.weights.stage = w.at("stage").get<std::vector<Scalar>>();
  c.weights.point = w.at("point").get<Scalar>();
  c.weights.edge = w.at("edge").get<Scalar>();
  c.weights.vis = w.at("vis").get<Scalar>();
  c.weights.syn = w.at("syn").get<Scalar>();
  c.occaug = j.at("occaug").get<bool>();
  c.mask_prob = j.at("mask_prob").get<Scalar>();
  c.masked_views_in_hm = j.at("masked_views_in_hm").get<bool>();
  const auto& o = j.at("occ");
  c.occ.min_occluders = o.at("min_occluders").get<int>();
  c.occ.max_occluders = o.at("max_occluders").get<int>();
  c.occ.min_area = o.at("min_area").get<Scalar>();
  c.occ.max_area = o.at("max_area").get<Scalar>();
  c.occ.delta = o.at("delta").get<Scalar>();
  c.sigma_hm = j.at("sigma_hm").get<Scalar>();
  c.sigma_pt = j.at("sigma_pt").get<Scalar>();
  c.sigma_edge = j.at("sigma_edge").get<Scalar>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  return c;
}

inline nlohmann::ordered_json generate_params_to_json(const GenerateParams& g) {
  nlohmann::ordered_json j;
  j["train_count"] = g.train_count;
  j["val_count"] = g.val_count;
  j["test_count"] = g.test_count;
  j["yaw_max"] = g.yaw_max;
  j["pitch_max"] = g.pitch_max;
  j["occluder_min"] = g.occluder_min;
  j["occluder_max"] = g.occluder_max;
  j["image_size"] = g.image_size;
  j["background"] = g.background;
  j["styles"] = g.styles;
  return j;
}

inline GenerateParams generate_params_from_json(const nlohmann::json& j) {
  GenerateParams g;
  g.train_count = j.at("train_count").get<int>();
  g.val_count = j.at("val_count").get<int>();
  g.test_count = j.at("test_count").get<int>();
  g.yaw_max = j.at("yaw_max").get<Scalar>();
  g.pitch_max = j.at("pitch_max").get<Scalar>();
  g.occluder_min = j.at("occluder_min").get<int>();
  g.occluder_max = j.at("occluder_max").get<int>();
  g.image_size = j.at("image_size").get<int>();
  g.background = j.at("background").get<std::string>();
  g.styles = j.at("styles").get<std::vector<std::string>>();
  return g;
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["layout"] = c.layout_path;
  j["dataset_dir"] = c.dataset_dir;
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["model"] = model_config_to_json(c.model);
  j["train"] = train_config_to_json(c.train);
  j["metrics"] = metric_config_to_json(c.metrics);
  j["generate"] = generate_params_to_json(c.generate);
  return j;
}

// Recursive overlay: objects merge key-by-key, everything else replaces.
inline nlohmann::ordered_json deep_merge(const nlohmann::ordered_json& base,
                                         const nlohmann::json& overlay) {
  if (!base.is_object() || !overlay.is_object()) return overlay;
  nlohmann::ordered_json out = base;
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (out.contains(it.key()))
      out[it.key()] = deep_merge(out[it.key()], it.value());
    else
      out[it.key()] = it.value();
  }
  return out;
}

namespace detail {

inline void collect_unknown_keys(const nlohmann::json& user, const nlohmann::json& schema,
                                 const std::string& prefix, std::vector<std::string>& bad) {
  if (!user.is_object() || !schema.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) {
      bad.push_back(path);
      continue;
    }
    collect_unknown_keys(it.value(), schema[it.key()], path, bad);
  }
}

}  // namespace detail

// Writes `value` at a dotted path ("train.epochs"), creating objects along
// the way. The value is parsed as JSON first and kept as a string otherwise.
inline void set_by_dotted_path(nlohmann::ordered_json& root, const std::string& path,
                               const std::string& value) {
  if (path.empty()) throw std::runtime_error("config: empty override path");
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    parsed = value;
  }
  nlohmann::ordered_json* node = &root;
  size_t start = 0;
  while (true) {
    size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw std::runtime_error("config: malformed override path '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = parsed;
      return;
    }
    if (!node->contains(key) || !(*node)[key].is_object())
      (*node)[key] = nlohmann::ordered_json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

// Parses a (possibly partial) config: unknown keys are rejected by name, the
// missing ones take defaults, and every validation failure is reported in one
// message.
inline RunConfig run_config_from_json(const nlohmann::json& user) {
  nlohmann::ordered_json defaults = run_config_to_json(RunConfig{});
  std::vector<std::string> unknown;
  detail::collect_unknown_keys(user, defaults, "", unknown);
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw std::runtime_error(msg);
  }
  nlohmann::ordered_json merged = deep_merge(defaults, user);

  RunConfig c;
  c.layout_path = merged.at("layout").get<std::string>();
  c.dataset_dir = merged.at("dataset_dir").get<std::string>();
  c.out_dir = merged.at("out_dir").get<std::string>();
  c.seed = merged.at("seed").get<uint64_t>();
  c.model = model_config_from_json(merged.at("model"));
  c.train = train_config_from_json(merged.at("train"));
  c.metrics = metric_config_from_json(merged.at("metrics"));
  c.generate = generate_params_from_json(merged.at("generate"));
  // an unset stage-weight vector means uniform weights across stages
  if (c.train.weights.stage.empty())
    c.train.weights.stage.assign(static_cast<size_t>(c.model.backbone.stacks), 1.0);
  return c;
}

// Collects every failure instead of stopping at the first.
inline void validate_run_config(const RunConfig& c) {
  std::vector<std::string> errs;
  auto probe = [&errs](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      errs.emplace_back(e.what());
    }
  };
  probe([&] { validate_model_config(c.model); });
  probe([&] { validate_train_config(c.train, c.model.backbone.stacks); });
  probe([&] { validate_metric_config(c.metrics); });
  probe([&] {
    if (c.generate.train_count < 0 || c.generate.val_count < 0 || c.generate.test_count < 0)
      throw std::runtime_error("generate: negative split count");
    if (c.generate.occluder_min < 0 || c.generate.occluder_max < c.generate.occluder_min)
      throw std::runtime_error("generate: bad occluder count range");
    if (c.generate.image_size < 16) throw std::runtime_error("generate: image size too small");
    if (c.generate.styles.empty()) throw std::runtime_error("generate: no styles");
    if (!(c.generate.yaw_max >= 0.0 && c.generate.pitch_max >= 0.0))
      throw std::runtime_error("generate: rotation ranges must be non-negative");
  });
  if (!errs.empty()) {
    std::string msg = "config validation failed:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw std::runtime_error(msg);
  }
}

// A zero sub-seed means "derive from the run seed"; the resolved values are
// what gets logged.
inline void resolve_seeds(RunConfig& c) {
  if (c.model.backbone.seed == 0) c.model.backbone.seed = mix_seed(c.seed, fnv1a64("backbone"));
  if (c.model.visibility.seed == 0)
    c.model.visibility.seed = mix_seed(c.seed, fnv1a64("visibility"));
  if (c.train.seed == 0) c.train.seed = mix_seed(c.seed, fnv1a64("train"));
}

inline RunConfig load_run_config(const std::vector<std::string>& config_paths,
                                 const std::vector<std::pair<std::string, std::string>>& overrides) {
  nlohmann::ordered_json merged = nlohmann::ordered_json::object();
  for (const auto& path : config_paths) {
    nlohmann::json j = read_json_file(path, "config");
    merged = deep_merge(merged, j);
  }
  for (const auto& [key, value] : overrides) set_by_dotted_path(merged, key, value);
  RunConfig c = run_config_from_json(merged);
  validate_run_config(c);
  return c;
}

}  // namespace occlm
