#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "occlm/data.hpp"
#include "occlm/model.hpp"

namespace occlm {

// Outer eye corners of the canonical layout; their distance is the default
// error normalization factor.
inline constexpr int kOuterEyeLeft = 36;
inline constexpr int kOuterEyeRight = 45;

enum class NormKind { kInterOcular, kBoxDiagonal, kFixed };

struct MetricConfig {
  NormKind norm = NormKind::kInterOcular;
  Scalar fixed_d = 1.0;       // used when norm == kFixed
  Scalar tau = 0.5;           // occlusion decision threshold on 1 - v_hat
  Scalar cutoff = 0.1;        // failure-rate / CED-area cutoff
  bool interpolated_ap = false;  // 101-point interpolated AP instead of finite-sample
};

inline void validate_metric_config(const MetricConfig& c) {
  if (!(c.tau > 0.0 && c.tau < 1.0)) throw std::runtime_error("metrics: tau must lie in (0,1)");
  if (!(c.cutoff > 0.0)) throw std::runtime_error("metrics: cutoff must be positive");
  if (c.norm == NormKind::kFixed && !(c.fixed_d > 0.0))
    throw std::runtime_error("metrics: fixed normalization must be positive");
}

struct MetricReport {
  Scalar nme = 0.0;
  std::optional<Scalar> nme_vis;
  std::optional<Scalar> nme_occ;
  std::optional<Scalar> occ_ap;
  Scalar f1_at_tau = 0.0;
  std::optional<Scalar> roc_auc;
  Scalar fr = 0.0;
  Scalar ced_auc = 0.0;
  std::vector<Scalar> per_landmark_nme;
  long long vis_count = 0;
  long long occ_count = 0;
};

namespace detail {

inline void check_pair_sizes(size_t a, size_t b, const char* what) {
  if (a != b) throw std::runtime_error(std::string(what) + ": size mismatch");
  if (a == 0) throw std::runtime_error(std::string(what) + ": empty input");
}

inline void check_labels(const std::vector<int>& labels, const char* what) {
  for (int v : labels)
    if (v != 0 && v != 1) throw std::runtime_error(std::string(what) + ": labels must be 0 or 1");
}

}  // namespace detail

// Mean point-to-point distance over one sample, normalized by d.
inline Scalar nme(const std::vector<Point2>& pred, const std::vector<Point2>& gt, Scalar d) {
  detail::check_pair_sizes(pred.size(), gt.size(), "nme");
  if (!(d > 0.0)) throw std::runtime_error("nme: normalization must be positive");
  Scalar sum = 0.0;
  for (size_t p = 0; p < pred.size(); ++p)
    sum += std::hypot(pred[p][0] - gt[p][0], pred[p][1] - gt[p][1]);
  return sum / (d * static_cast<Scalar>(pred.size()));
}

// Restricted means over the visible / occluded subsets; empty subset -> null.
inline std::pair<std::optional<Scalar>, std::optional<Scalar>> nme_split(
    const std::vector<Point2>& pred, const std::vector<Point2>& gt,
    const std::vector<int>& visibility, Scalar d) {
  detail::check_pair_sizes(pred.size(), gt.size(), "nme_split");
  detail::check_pair_sizes(pred.size(), visibility.size(), "nme_split visibility");
  detail::check_labels(visibility, "nme_split");
  if (!(d > 0.0)) throw std::runtime_error("nme_split: normalization must be positive");
  Scalar sum_vis = 0.0, sum_occ = 0.0;
  long long n_vis = 0, n_occ = 0;
  for (size_t p = 0; p < pred.size(); ++p) {
    Scalar e = std::hypot(pred[p][0] - gt[p][0], pred[p][1] - gt[p][1]) / d;
    if (visibility[p] == 1) {
      sum_vis += e;
      ++n_vis;
    } else {
      sum_occ += e;
      ++n_occ;
    }
  }
  std::pair<std::optional<Scalar>, std::optional<Scalar>> out;
  if (n_vis > 0) out.first = sum_vis / static_cast<Scalar>(n_vis);
  if (n_occ > 0) out.second = sum_occ / static_cast<Scalar>(n_occ);
  return out;
}

// Finite-sample average precision with occluded (label 1) as the positive
// class; ties keep input order (stable sort). Null when no positives exist.
inline std::optional<Scalar> occ_ap(const std::vector<Scalar>& scores,
                                    const std::vector<int>& labels,
                                    bool interpolated = false) {
  detail::check_pair_sizes(scores.size(), labels.size(), "occ_ap");
  detail::check_labels(labels, "occ_ap");
  for (Scalar s : scores)
    if (!std::isfinite(s)) throw std::runtime_error("occ_ap: non-finite score");
  long long total_pos = std::count(labels.begin(), labels.end(), 1);
  if (total_pos == 0) return std::nullopt;

  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  if (!interpolated) {
    Scalar ap = 0.0;
    long long tp = 0;
    for (size_t r = 0; r < order.size(); ++r) {
      if (labels[order[r]] != 1) continue;
      ++tp;
      ap += static_cast<Scalar>(tp) / static_cast<Scalar>(r + 1);
    }
    return ap / static_cast<Scalar>(total_pos);
  }

  // 101-point: mean over recall levels 0.00..1.00 of the max precision at
  // recall >= level.
  std::vector<Scalar> recalls, precisions;
  long long tp = 0;
  for (size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] == 1) ++tp;
    recalls.push_back(static_cast<Scalar>(tp) / static_cast<Scalar>(total_pos));
    precisions.push_back(static_cast<Scalar>(tp) / static_cast<Scalar>(r + 1));
  }
  Scalar ap = 0.0;
  for (int k = 0; k <= 100; ++k) {
    Scalar level = static_cast<Scalar>(k) / 100.0;
    Scalar best = 0.0;
    for (size_t i = 0; i < recalls.size(); ++i)
      if (recalls[i] >= level - 1e-12) best = std::max(best, precisions[i]);
    ap += best;
  }
  return ap / 101.0;
}

// Predict occluded iff score >= tau; F1 = 2PR/(P+R), 0 when both vanish.
inline Scalar f1_at_threshold(const std::vector<Scalar>& scores, const std::vector<int>& labels,
                              Scalar tau) {
  detail::check_pair_sizes(scores.size(), labels.size(), "f1_at_threshold");
  detail::check_labels(labels, "f1_at_threshold");
  long long tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    bool hit = scores[i] >= tau;
    if (hit && labels[i] == 1) ++tp;
    if (hit && labels[i] == 0) ++fp;
    if (!hit && labels[i] == 1) ++fn;
  }
  Scalar prec = (tp + fp) > 0 ? static_cast<Scalar>(tp) / static_cast<Scalar>(tp + fp) : 0.0;
  Scalar rec = (tp + fn) > 0 ? static_cast<Scalar>(tp) / static_cast<Scalar>(tp + fn) : 0.0;
  if (prec + rec == 0.0) return 0.0;
  return 2.0 * prec * rec / (prec + rec);
}

// Mann-Whitney formulation: P(score_pos > score_neg) with ties worth 0.5.
// Null when either class is absent.
inline std::optional<Scalar> roc_auc(const std::vector<Scalar>& scores,
                                     const std::vector<int>& labels) {
  detail::check_pair_sizes(scores.size(), labels.size(), "roc_auc");
  detail::check_labels(labels, "roc_auc");
  // rank-sum over sorted scores with midranks for ties: O(n log n)
  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<Scalar> rank(scores.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    Scalar mid = 0.5 * static_cast<Scalar>(i + j) + 1.0;  // 1-based midrank
    for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  long long n_pos = 0, n_neg = 0;
  Scalar rank_pos = 0.0;
  for (size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] == 1) {
      ++n_pos;
      rank_pos += rank[k];
    } else {
      ++n_neg;
    }
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  Scalar u = rank_pos - 0.5 * static_cast<Scalar>(n_pos) * static_cast<Scalar>(n_pos + 1);
  return u / (static_cast<Scalar>(n_pos) * static_cast<Scalar>(n_neg));
}

struct ErrorCurveStats {
  Scalar fr = 0.0;
  Scalar ced_auc = 0.0;
};

// CED knots: (0,0) then (e_i, i/n) for sorted errors within the cutoff,
// closed at (cutoff, fraction <= cutoff); trapezoid area normalized by cutoff.
inline std::vector<std::pair<Scalar, Scalar>> ced_curve(const std::vector<Scalar>& nmes,
                                                        Scalar cutoff) {
  if (nmes.empty()) throw std::runtime_error("ced_curve: empty input");
  if (!(cutoff > 0.0)) throw std::runtime_error("ced_curve: cutoff must be positive");
  std::vector<Scalar> sorted = nmes;
  for (Scalar e : sorted)
    if (!std::isfinite(e) || e < 0.0) throw std::runtime_error("ced_curve: invalid error value");
  std::sort(sorted.begin(), sorted.end());
  Scalar n = static_cast<Scalar>(sorted.size());
  std::vector<std::pair<Scalar, Scalar>> knots;
  knots.emplace_back(0.0, 0.0);
  size_t within = 0;
  for (size_t k = 0; k < sorted.size() && sorted[k] <= cutoff; ++k) {
    within = k + 1;
    knots.emplace_back(sorted[k], static_cast<Scalar>(k + 1) / n);
  }
  knots.emplace_back(cutoff, static_cast<Scalar>(within) / n);
  return knots;
}

inline ErrorCurveStats error_curve_stats(const std::vector<Scalar>& nmes, Scalar cutoff) {
  auto knots = ced_curve(nmes, cutoff);
  ErrorCurveStats out;
  long long failures = 0;
  for (Scalar e : nmes)
    if (e > cutoff) ++failures;
  out.fr = static_cast<Scalar>(failures) / static_cast<Scalar>(nmes.size());
  Scalar area = 0.0;
  for (size_t k = 1; k < knots.size(); ++k)
    area += 0.5 * (knots[k].second + knots[k - 1].second) * (knots[k].first - knots[k - 1].first);
  out.ced_auc = area / cutoff;
  return out;
}

// Precision-recall points in rank order (stable-descending by score), one per
// prediction, prefixed by (0, 1) for plotting.
inline std::vector<std::pair<Scalar, Scalar>> pr_curve(const std::vector<Scalar>& scores,
                                                       const std::vector<int>& labels) {
  detail::check_pair_sizes(scores.size(), labels.size(), "pr_curve");
  detail::check_labels(labels, "pr_curve");
  long long total_pos = std::count(labels.begin(), labels.end(), 1);
  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  std::vector<std::pair<Scalar, Scalar>> pts;
  pts.emplace_back(0.0, 1.0);
  long long tp = 0;
  for (size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] == 1) ++tp;
    Scalar rec = total_pos > 0 ? static_cast<Scalar>(tp) / static_cast<Scalar>(total_pos) : 0.0;
    Scalar prec = static_cast<Scalar>(tp) / static_cast<Scalar>(r + 1);
    pts.emplace_back(rec, prec);
  }
  return pts;
}

// One evaluated sample: predictions mapped back to image space plus the
// ground truth they are scored against.
struct SamplePrediction {
  std::vector<Point2> points;     // predicted, image space
  std::vector<Scalar> occ_score;  // 1 - v_hat per landmark
  std::vector<Point2> gt_points;
  std::vector<int> gt_visibility;
  Scalar d = 1.0;  // per-sample normalization factor
};

inline Scalar sample_norm_factor(const AnnotatedSample& sample, const MetricConfig& cfg) {
  switch (cfg.norm) {
    case NormKind::kFixed:
      return cfg.fixed_d;
    case NormKind::kBoxDiagonal:
      return sample.box.diagonal();
    case NormKind::kInterOcular: {
      // fall back to the box diagonal when a corner is occluded in the truth
      bool ok = sample.visibility[kOuterEyeLeft] == 1 && sample.visibility[kOuterEyeRight] == 1;
      if (!ok) return sample.box.diagonal();
      const Point2& a = sample.points[kOuterEyeLeft];
      const Point2& b = sample.points[kOuterEyeRight];
      Scalar d = std::hypot(a[0] - b[0], a[1] - b[1]);
      return d > 0.0 ? d : sample.box.diagonal();
    }
  }
  throw std::runtime_error("metrics: unknown normalization kind");
}

// Pools per-landmark-instance errors across the whole set so the
// count-weighted recombination of the split equals the overall mean exactly.
inline MetricReport compute_report(const std::vector<SamplePrediction>& preds,
                                   const MetricConfig& cfg) {
  validate_metric_config(cfg);
  if (preds.empty()) throw std::runtime_error("metrics: empty evaluation set");
  size_t num_points = preds.front().points.size();
  MetricReport rep;
  rep.per_landmark_nme.assign(num_points, 0.0);
  Scalar sum_all = 0.0, sum_vis = 0.0, sum_occ = 0.0;
  std::vector<Scalar> per_sample;
  std::vector<Scalar> scores;
  std::vector<int> labels;
  per_sample.reserve(preds.size());
  for (const auto& s : preds) {
    detail::check_pair_sizes(s.points.size(), num_points, "compute_report points");
    detail::check_pair_sizes(s.gt_points.size(), num_points, "compute_report gt");
    detail::check_pair_sizes(s.occ_score.size(), num_points, "compute_report scores");
    detail::check_pair_sizes(s.gt_visibility.size(), num_points, "compute_report visibility");
    if (!(s.d > 0.0)) throw std::runtime_error("compute_report: normalization must be positive");
    Scalar sample_sum = 0.0;
    for (size_t p = 0; p < num_points; ++p) {
      Scalar e = std::hypot(s.points[p][0] - s.gt_points[p][0],
                            s.points[p][1] - s.gt_points[p][1]) /
                 s.d;
      sample_sum += e;
      rep.per_landmark_nme[p] += e;
      if (s.gt_visibility[p] == 1) {
        sum_vis += e;
        ++rep.vis_count;
      } else {
        sum_occ += e;
        ++rep.occ_count;
      }
      scores.push_back(s.occ_score[p]);
      labels.push_back(s.gt_visibility[p] == 1 ? 0 : 1);
    }
    sum_all += sample_sum;
    per_sample.push_back(sample_sum / static_cast<Scalar>(num_points));
  }
  Scalar total = static_cast<Scalar>(preds.size() * num_points);
  rep.nme = sum_all / total;
  for (auto& v : rep.per_landmark_nme) v /= static_cast<Scalar>(preds.size());
  if (rep.vis_count > 0) rep.nme_vis = sum_vis / static_cast<Scalar>(rep.vis_count);
  if (rep.occ_count > 0) rep.nme_occ = sum_occ / static_cast<Scalar>(rep.occ_count);
  rep.occ_ap = occ_ap(scores, labels, cfg.interpolated_ap);
  rep.f1_at_tau = f1_at_threshold(scores, labels, cfg.tau);
  rep.roc_auc = roc_auc(scores, labels);
  ErrorCurveStats ecs = error_curve_stats(per_sample, cfg.cutoff);
  rep.fr = ecs.fr;
  rep.ced_auc = ecs.ced_auc;
  return rep;
}

// Runs inference on every sample and maps decoded crop coordinates back to
// image space through the crop transform inverse.
inline std::vector<SamplePrediction> predict_split(Model& model,
                                                   const std::vector<AnnotatedSample>& split,
                                                   const MetricConfig& cfg) {
  if (split.empty()) throw std::runtime_error("metrics: empty evaluation set");
  const BackboneConfig& bc = model.config().backbone;
  std::vector<SamplePrediction> preds;
  preds.reserve(split.size());
  for (const auto& sample : split) {
    NormalizedCrop nc = normalize_crop(sample, bc.crop_h, bc.crop_w);
    Affine2 inv = nc.transform.inverse();
    ModelOutput out = model.forward(nc.crop, true);
    SamplePrediction sp;
    int num_points = model.layout().num_points;
    sp.points.reserve(static_cast<size_t>(num_points));
    sp.occ_score.reserve(static_cast<size_t>(num_points));
    for (int p = 0; p < num_points; ++p) {
      Point2 crop_pt = {out.decode.coords.at(p, 0), out.decode.coords.at(p, 1)};
      sp.points.push_back(inv.apply(crop_pt));
      sp.occ_score.push_back(1.0 - out.visibility.probabilities[p]);
    }
    sp.gt_points = sample.points;
    sp.gt_visibility = sample.visibility;
    sp.d = sample_norm_factor(sample, cfg);
    preds.push_back(std::move(sp));
  }
  return preds;
}

inline MetricReport evaluate(Model& model, const std::vector<AnnotatedSample>& split,
                             const MetricConfig& cfg) {
  return compute_report(predict_split(model, split, cfg), cfg);
}

// Ground truth fed back as its own prediction: every localization metric is
// perfect and the occlusion scores separate the classes exactly.
inline MetricReport evaluate_oracle(const std::vector<AnnotatedSample>& split,
                                    const MetricConfig& cfg) {
  if (split.empty()) throw std::runtime_error("metrics: empty evaluation set");
  std::vector<SamplePrediction> preds;
  preds.reserve(split.size());
  for (const auto& sample : split) {
    SamplePrediction sp;
    sp.points = sample.points;
    sp.gt_points = sample.points;
    sp.gt_visibility = sample.visibility;
    sp.occ_score.reserve(sample.visibility.size());
    for (int v : sample.visibility) sp.occ_score.push_back(v == 1 ? 0.0 : 1.0);
    sp.d = sample_norm_factor(sample, cfg);
    preds.push_back(std::move(sp));
  }
  return compute_report(preds, cfg);
}

inline const char* norm_kind_name(NormKind k) {
  switch (k) {
    case NormKind::kInterOcular: return "inter_ocular";
    case NormKind::kBoxDiagonal: return "box_diagonal";
    case NormKind::kFixed: return "fixed";
  }
  return "unknown";
}

inline NormKind norm_kind_from_name(const std::string& s) {
  if (s == "inter_ocular") return NormKind::kInterOcular;
  if (s == "box_diagonal") return NormKind::kBoxDiagonal;
  if (s == "fixed") return NormKind::kFixed;
  throw std::runtime_error("metrics: unknown normalization kind '" + s + "'");
}

inline nlohmann::ordered_json metric_config_to_json(const MetricConfig& c) {
  nlohmann::ordered_json j;
  j["norm"] = norm_kind_name(c.norm);
  j["fixed_d"] = c.fixed_d;
  j["tau"] = c.tau;
  j["cutoff"] = c.cutoff;
  j["interpolated_ap"] = c.interpolated_ap;
  return j;
}

inline MetricConfig metric_config_from_json(const nlohmann::json& j) {
  MetricConfig c;
  if (j.contains("norm")) c.norm = norm_kind_from_name(j.at("norm").get<std::string>());
  if (j.contains("fixed_d")) c.fixed_d = j.at("fixed_d").get<Scalar>();
  if (j.contains("tau")) c.tau = j.at("tau").get<Scalar>();
  if (j.contains("cutoff")) c.cutoff = j.at("cutoff").get<Scalar>();
  if (j.contains("interpolated_ap")) c.interpolated_ap = j.at("interpolated_ap").get<bool>();
  validate_metric_config(c);
  return c;
}

inline nlohmann::ordered_json report_to_json(const MetricReport& rep, const MetricConfig& cfg) {
  auto opt = [](const std::optional<Scalar>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["config"] = metric_config_to_json(cfg);
  nlohmann::ordered_json m;
  m["nme"] = rep.nme;
  m["nme_vis"] = opt(rep.nme_vis);
  m["nme_occ"] = opt(rep.nme_occ);
  m["occ_ap"] = opt(rep.occ_ap);
  m["f1"] = rep.f1_at_tau;
  m["roc_auc"] = opt(rep.roc_auc);
  m["fr"] = rep.fr;
  m["ced_auc"] = rep.ced_auc;
  j["metrics"] = std::move(m);
  j["per_landmark_nme"] = rep.per_landmark_nme;
  j["counts"] = {{"vis", rep.vis_count}, {"occ", rep.occ_count}};
  return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport rep;
  const auto& m = j.at("metrics");
  auto opt = [&m](const char* key) -> std::optional<Scalar> {
    if (m.at(key).is_null()) return std::nullopt;
    return m.at(key).get<Scalar>();
  };
  rep.nme = m.at("nme").get<Scalar>();
  rep.nme_vis = opt("nme_vis");
  rep.nme_occ = opt("nme_occ");
  rep.occ_ap = opt("occ_ap");
  rep.f1_at_tau = m.at("f1").get<Scalar>();
  rep.roc_auc = opt("roc_auc");
  rep.fr = m.at("fr").get<Scalar>();
  rep.ced_auc = m.at("ced_auc").get<Scalar>();
  rep.per_landmark_nme = j.at("per_landmark_nme").get<std::vector<Scalar>>();
  rep.vis_count = j.at("counts").at("vis").get<long long>();
  rep.occ_count = j.at("counts").at("occ").get<long long>();
  return rep;
}

}  // namespace occlm
