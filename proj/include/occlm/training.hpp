#pragma once

#include <cmath>
#include <numeric>
#include <ostream>

#include "occlm/data.hpp"
#include "occlm/losses.hpp"
#include "occlm/model.hpp"
#include "occlm/occaug.hpp"
#include "occlm/targets.hpp"

namespace occlm {

struct TrainConfig {
  int epochs = 16;
  int warm_start_epochs = 4;
  int batch_size = 8;
  Scalar lr = 1e-3;
  bool cosine_decay = true;
  uint64_t seed = 0;
  LossWeights weights;
  bool occaug = true;
  Scalar mask_prob = 0.5;
  bool masked_views_in_hm = true;  // masked views also supervise localization
  OccAugParams occ;
  Scalar sigma_hm = 1.5, sigma_pt = 1.0, sigma_edge = 1.0;
  int checkpoint_every = 0;  // epochs; 0 = final only
};

inline void validate_train_config(const TrainConfig& c, int stacks) {
  if (c.epochs < 1) throw std::runtime_error("train: epochs must be >= 1");
  if (c.warm_start_epochs < 0 || c.warm_start_epochs > c.epochs)
    throw std::runtime_error("train: warm-start epochs outside [0, epochs]");
  if (c.batch_size < 1) throw std::runtime_error("train: batch size must be >= 1");
  if (!(c.lr > 0)) throw std::runtime_error("train: lr must be positive");
  if (!(c.mask_prob >= 0 && c.mask_prob <= 1))
    throw std::runtime_error("train: mask probability outside [0,1]");
  validate_loss_weights(c.weights, stacks);
  validate_occaug_params(c.occ);
}

class Adam {
 public:
  explicit Adam(std::vector<ParamRef> params, Scalar beta1 = 0.9, Scalar beta2 = 0.999,
                Scalar eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
      m_.emplace_back(p.value->shape());
      v_.emplace_back(p.value->shape());
    }
  }

  void zero_grads() {
    for (auto& p : params_) p.grad->zero();
  }

  void step(Scalar lr) {
    ++t_;
    Scalar c1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
    Scalar c2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& w = *params_[i].value;
      Tensor& g = *params_[i].grad;
      for (size_t j = 0; j < w.numel(); ++j) {
        Scalar gj = g[j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
        w[j] -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
      }
    }
  }

  int64_t steps() const { return t_; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["t"] = t_;
    auto dump = [&](const std::vector<Tensor>& ts) {
      auto obj = nlohmann::ordered_json::object();
      for (size_t i = 0; i < ts.size(); ++i) {
        auto arr = nlohmann::ordered_json::array();
        for (size_t k = 0; k < ts[i].numel(); ++k) arr.push_back(ts[i][k]);
        obj[params_[i].name] = std::move(arr);
      }
      return obj;
    };
    j["m"] = dump(m_);
    j["v"] = dump(v_);
    return j;
  }

  void load_json(const nlohmann::json& j) {
    t_ = j.at("t").get<int64_t>();
    auto fill = [&](std::vector<Tensor>& ts, const nlohmann::json& obj) {
      for (size_t i = 0; i < ts.size(); ++i) {
        const auto& arr = obj.at(params_[i].name);
        if (arr.size() != ts[i].numel())
          throw std::runtime_error("adam state: size mismatch for " + params_[i].name);
        for (size_t k = 0; k < ts[i].numel(); ++k) ts[i][k] = arr[k].get<Scalar>();
      }
    };
    fill(m_, j.at("m"));
    fill(v_, j.at("v"));
  }

 private:
  std::vector<ParamRef> params_;
  std::vector<Tensor> m_, v_;
  Scalar beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  Scalar hm = 0, point = 0, edge = 0, vis = 0, syn = 0, total = 0, lr = 0;
};

inline nlohmann::ordered_json epoch_stats_json(const EpochStats& s) {
  return {{"epoch", s.epoch}, {"L_hm", s.hm},   {"L_pt", s.point}, {"L_edge", s.edge},
          {"L_vis", s.vis},   {"L_syn", s.syn}, {"total", s.total}, {"lr", s.lr}};
}

inline Scalar epoch_lr(const TrainConfig& cfg, int epoch) {
  if (!cfg.cosine_decay) return cfg.lr;
  return cfg.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * epoch / cfg.epochs));
}

namespace detail {
inline constexpr uint64_t kOrderSalt = 0x06d3e5ull;
inline constexpr uint64_t kMaskSalt = 0x6d61736bull;

inline void check_finite_loss(Scalar x, const char* term, int epoch, size_t idx) {
  if (!std::isfinite(x))
    throw std::runtime_error("train: non-finite " + std::string(term) + " at epoch " +
                             std::to_string(epoch + 1) + " sample " + std::to_string(idx));
}
}  // namespace detail

// One pass over the data; epoch is 0-based. Warm-start epochs never touch the
// visibility head (its forward/backward are skipped outright).
inline EpochStats run_epoch(Model& model, Adam& adam, const std::vector<AnnotatedSample>& data,
                            const TrainConfig& cfg, int epoch) {
  if (data.empty()) throw std::runtime_error("train: empty dataset");
  const LandmarkLayout& layout = model.layout();
  const BackboneConfig& bc = model.config().backbone;
  bool warm = epoch < cfg.warm_start_epochs;
  Scalar lr = epoch_lr(cfg, epoch);

  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng order_rng(mix_seed(cfg.seed, detail::kOrderSalt ^ static_cast<uint64_t>(epoch)));
  order_rng.shuffle(order);

  EpochStats stats;
  stats.epoch = epoch + 1;
  stats.lr = lr;

  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
    size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
    Scalar inv_b = 1.0 / static_cast<Scalar>(end - start);
    adam.zero_grads();
    for (size_t bi = start; bi < end; ++bi) {
      size_t idx = order[bi];
      const AnnotatedSample& sample = data[idx];
      NormalizedCrop nc = normalize_crop(sample, bc.crop_h, bc.crop_w);
      TargetMaps targets = build_targets(layout, nc.points_crop, bc.crop_h, bc.crop_w, bc.stride,
                                         cfg.sigma_hm, cfg.sigma_pt, cfg.sigma_edge);

      Tensor crop = nc.crop;
      bool masked = false;
      std::vector<int> v_pseudo;
      uint64_t sample_salt = (static_cast<uint64_t>(epoch) << 32) ^ static_cast<uint64_t>(idx);
      if (cfg.occaug && cfg.mask_prob > 0) {
        Rng coin(mix_seed(mix_seed(cfg.seed, detail::kMaskSalt), sample_salt));
        if (coin.uniform() < cfg.mask_prob) {
          MaskSpec mask = sample_mask(coin.next_u64(), bc.crop_h, bc.crop_w, bc.stride, cfg.occ);
          crop = masked_view(crop, mask);
          v_pseudo = pseudo_visibility(mask.mask_map, targets.heatmaps, cfg.occ.delta);
          masked = true;
        }
      }

      ModelOutput out = model.forward(crop, !warm);

      Scalar map_scale = (masked && !cfg.masked_views_in_hm) ? 0.0 : 1.0;
      std::vector<Tensor> stage_targets(out.net.stage_heatmaps.size(), targets.heatmaps);
      ModelGradIn g;
      std::vector<Tensor> g_hm;
      Scalar l_hm = heatmap_loss(out.net.stage_heatmaps, stage_targets, cfg.weights.stage, &g_hm);
      Tensor g_pt, g_edge;
      Scalar l_pt = map_mse(out.net.point_pred, targets.point_map, &g_pt);
      Scalar l_edge = map_mse(out.net.edge_pred, targets.edge_map, &g_edge);
      detail::check_finite_loss(l_hm, "L_hm", epoch, idx);
      detail::check_finite_loss(l_pt, "L_pt", epoch, idx);
      detail::check_finite_loss(l_edge, "L_edge", epoch, idx);

      for (auto& t : g_hm) t.scale_(inv_b * map_scale);
      g.stage_heatmaps = std::move(g_hm);
      g_pt.scale_(inv_b * cfg.weights.point * map_scale);
      g_edge.scale_(inv_b * cfg.weights.edge * map_scale);
      g.point_map = std::move(g_pt);
      g.edge_map = std::move(g_edge);

      Scalar l_vis = 0, l_syn = 0;
      if (!warm) {
        Tensor v_manual({layout.num_points});
        for (int p = 0; p < layout.num_points; ++p) {
          Scalar v = static_cast<Scalar>(sample.visibility[static_cast<size_t>(p)]);
          if (masked) v = std::min(v, static_cast<Scalar>(v_pseudo[static_cast<size_t>(p)]));
          v_manual.at(p) = v;
        }
        Tensor g_vis;
        l_vis = visibility_loss(out.visibility.probabilities, v_manual, &g_vis);
        detail::check_finite_loss(l_vis, "L_vis", epoch, idx);
        g_vis.scale_(inv_b * cfg.weights.vis);
        if (masked) {
          Tensor v_tilde({layout.num_points});
          for (int p = 0; p < layout.num_points; ++p)
            v_tilde.at(p) = static_cast<Scalar>(v_pseudo[static_cast<size_t>(p)]);
          Tensor g_syn;
          l_syn = visibility_loss(out.visibility.probabilities, v_tilde, &g_syn);
          detail::check_finite_loss(l_syn, "L_syn", epoch, idx);
          g_vis.axpy_(inv_b * cfg.weights.syn, g_syn);
        }
        g.visibility = std::move(g_vis);
      }

      model.backward(g);

      stats.hm += l_hm * map_scale;
      stats.point += l_pt * map_scale;
      stats.edge += l_edge * map_scale;
      stats.vis += l_vis;
      stats.syn += l_syn;
    }
    adam.step(lr);
  }

  Scalar inv_n = 1.0 / static_cast<Scalar>(data.size());
  stats.hm *= inv_n;
  stats.point *= inv_n;
  stats.edge *= inv_n;
  stats.vis *= inv_n;
  stats.syn *= inv_n;
  stats.total = total_loss({stats.hm, stats.point, stats.edge, stats.vis, stats.syn}, cfg.weights,
                           warm);
  return stats;
}

// Epochs [start_epoch, cfg.epochs); appends one JSONL line per epoch to
// log_stream when given and checkpoints into out_dir per the cadence.
inline std::vector<EpochStats> train_model(Model& model, Adam& adam,
                                           const std::vector<AnnotatedSample>& data,
                                           const TrainConfig& cfg, int start_epoch = 0,
                                           std::ostream* log_stream = nullptr,
                                           const std::string& checkpoint_path = "") {
  validate_train_config(cfg, model.config().backbone.stacks);
  auto save = [&](int epochs_done) {
    if (checkpoint_path.empty()) return;
    auto j = checkpoint_json(model, epochs_done);
    j["adam"] = adam.to_json();
    write_json_atomic(j, checkpoint_path);
  };
  std::vector<EpochStats> log;
  for (int e = start_epoch; e < cfg.epochs; ++e) {
    EpochStats s = run_epoch(model, adam, data, cfg, e);
    log.push_back(s);
    if (log_stream) *log_stream << epoch_stats_json(s).dump() << "\n";
    if (cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0 && e + 1 < cfg.epochs)
      save(e + 1);
  }
  save(cfg.epochs);
  return log;
}

struct ResumedTraining {
  Model model;
  int64_t epochs_done = 0;
  nlohmann::json adam_state;  // empty when absent
};

inline ResumedTraining load_train_checkpoint(const std::string& path,
                                             const LandmarkLayout& layout) {
  nlohmann::json j = read_json_file(path, "checkpoint");
  int64_t step = 0;
  Model model = model_from_checkpoint_json(j, layout, &step);
  nlohmann::json adam_state;
  if (j.contains("adam")) adam_state = j.at("adam");
  return {std::move(model), step, std::move(adam_state)};
}

}  // namespace occlm
