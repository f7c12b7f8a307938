#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "occlm/config.hpp"
#include "occlm/metrics.hpp"
#include "occlm/synth.hpp"
#include "occlm/training.hpp"

namespace fs = std::filesystem;
using namespace occlm;

namespace {

struct CommonArgs {
  std::vector<std::string> configs;
  std::optional<uint64_t> seed;
  std::string out;
  std::vector<std::pair<std::string, std::string>> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.configs, "Config file(s), merged in order")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "Run seed (overrides config)");
  cmd->add_option("--out", args.out, "Output directory");
  cmd->allow_extras();  // dotted overrides: --train.epochs=20
}

// Remaining tokens must be --dotted.path=value overrides.
void collect_overrides(CLI::App* cmd, CommonArgs& args) {
  for (const std::string& tok : cmd->remaining()) {
    if (tok.rfind("--", 0) != 0 || tok.find('=') == std::string::npos)
      throw CLI::ParseError("unrecognized argument '" + tok +
                                "' (overrides use --key.path=value)",
                            CLI::ExitCodes::ExtrasError);
    std::string body = tok.substr(2);
    size_t eq = body.find('=');
    args.overrides.emplace_back(body.substr(0, eq), body.substr(eq + 1));
  }
}

std::string default_out(const std::string& command) {
  if (const char* root = std::getenv("OCCLM_OUT_ROOT"))
    return (fs::path(root) / command).string();
  return (fs::path("out") / command).string();
}

struct Resolved {
  RunConfig cfg;
  LandmarkLayout layout;
  fs::path out_dir;
};

Resolved resolve(const CommonArgs& args, const std::string& command) {
  RunConfig cfg = load_run_config(args.configs, args.overrides);
  if (args.seed) cfg.seed = *args.seed;
  resolve_seeds(cfg);
  if (!args.out.empty())
    cfg.out_dir = args.out;
  else if (cfg.out_dir.empty())
    cfg.out_dir = default_out(command);
  LandmarkLayout layout =
      cfg.layout_path.empty() ? default_layout() : load_layout(cfg.layout_path);
  fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  auto resolved = run_config_to_json(cfg);
  resolved["command"] = command;
  write_json_atomic(resolved, (out_dir / "resolved_config.json").string());
  std::printf("[%s] seed=%llu out=%s\n", command.c_str(),
              static_cast<unsigned long long>(cfg.seed), cfg.out_dir.c_str());
  return {std::move(cfg), std::move(layout), std::move(out_dir)};
}

std::vector<AnnotatedSample> load_split(const RunConfig& cfg, const std::string& split) {
  Dataset ds(cfg.dataset_dir, split);
  if (ds.empty())
    throw std::runtime_error("empty " + split + " split in " + cfg.dataset_dir);
  std::vector<AnnotatedSample> out;
  out.reserve(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) out.push_back(ds.load(i));
  return out;
}

int cmd_generate(const CommonArgs& args) {
  Resolved r = resolve(args, "generate");
  const GenerateParams& g = r.cfg.generate;
  fs::create_directories(r.cfg.dataset_dir);
  std::vector<ManifestEntry> entries;
  struct SplitSpec {
    const char* name;
    int count;
  };
  for (const SplitSpec& sp : {SplitSpec{"train", g.train_count}, SplitSpec{"val", g.val_count},
                              SplitSpec{"test", g.test_count}}) {
    uint64_t split_seed = mix_seed(r.cfg.seed, fnv1a64(sp.name));
    for (int i = 0; i < sp.count; ++i) {
      uint64_t sample_seed = mix_seed(split_seed, static_cast<uint64_t>(i));
      Rng rng(mix_seed(sample_seed, 0x5cee5ull));
      SceneParams scene;
      scene.style = g.styles[rng.next_u64() % g.styles.size()];
      scene.yaw_deg = rng.uniform(-g.yaw_max, g.yaw_max);
      scene.pitch_deg = rng.uniform(-g.pitch_max, g.pitch_max);
      scene.occluder_min = g.occluder_min;
      scene.occluder_max = g.occluder_max;
      scene.background = g.background;
      scene.image_size = g.image_size;
      AnnotatedSample sample = synthesize_sample(sample_seed, scene);
      char name[64];
      std::snprintf(name, sizeof name, "sample_%05d", i);
      fs::path ann = fs::path(r.cfg.dataset_dir) / sp.name / (std::string(name) + ".json");
      write_annotation(sample, ann.string(), std::string(name) + ".png");
      entries.push_back({(fs::path(sp.name) / (std::string(name) + ".json")).string(), sp.name});
    }
  }
  write_manifest(entries, r.cfg.dataset_dir);
  std::printf("wrote %zu samples to %s\n", entries.size(), r.cfg.dataset_dir.c_str());
  return 0;
}

int cmd_train(const CommonArgs& args, bool resume) {
  Resolved r = resolve(args, "train");
  auto data = load_split(r.cfg, "train");
  std::string ckpt = (r.out_dir / "checkpoint.json").string();
  std::optional<Model> model;
  int start_epoch = 0;
  nlohmann::json adam_state;
  if (resume && fs::exists(ckpt)) {
    ResumedTraining rt = load_train_checkpoint(ckpt, r.layout);
    model.emplace(std::move(rt.model));
    start_epoch = static_cast<int>(rt.epochs_done);
    adam_state = std::move(rt.adam_state);
    std::printf("resuming from %s at epoch %d\n", ckpt.c_str(), start_epoch);
  } else {
    model.emplace(r.cfg.model, r.layout);
  }
  Adam adam(model->params());
  if (!adam_state.empty()) adam.load_json(adam_state);
  std::ofstream log((r.out_dir / "train_log.jsonl").string(),
                    resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write train log in " + r.out_dir.string());
  auto stats = train_model(*model, adam, data, r.cfg.train, start_epoch, &log, ckpt);
  if (!stats.empty())
    std::printf("final epoch: %s\n", epoch_stats_json(stats.back()).dump().c_str());
  std::printf("checkpoint: %s\n", ckpt.c_str());
  return 0;
}

Scalar per_sample_nme(const SamplePrediction& sp) {
  return nme(sp.points, sp.gt_points, sp.d);
}

void write_eval_outputs(const std::vector<SamplePrediction>& preds, const MetricReport& rep,
                        const MetricConfig& mc, const fs::path& out_dir) {
  write_json_atomic(report_to_json(rep, mc), (out_dir / "report.json").string());
  nlohmann::ordered_json data;
  auto nmes = nlohmann::ordered_json::array();
  auto scores = nlohmann::ordered_json::array();
  auto labels = nlohmann::ordered_json::array();
  for (const auto& sp : preds) {
    nmes.push_back(per_sample_nme(sp));
    for (size_t p = 0; p < sp.occ_score.size(); ++p) {
      scores.push_back(sp.occ_score[p]);
      labels.push_back(sp.gt_visibility[p] == 1 ? 0 : 1);
    }
  }
  data["per_sample_nme"] = std::move(nmes);
  data["scores"] = std::move(scores);
  data["labels"] = std::move(labels);
  data["cutoff"] = mc.cutoff;
  write_json_atomic(data, (out_dir / "eval_data.json").string());
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& split,
             bool oracle) {
  Resolved r = resolve(args, "eval");
  auto samples = load_split(r.cfg, split);
  std::vector<SamplePrediction> preds;
  if (oracle) {
    for (const auto& s : samples) {
      SamplePrediction sp;
      sp.points = s.points;
      sp.gt_points = s.points;
      sp.gt_visibility = s.visibility;
      for (int v : s.visibility) sp.occ_score.push_back(v == 1 ? 0.0 : 1.0);
      sp.d = sample_norm_factor(s, r.cfg.metrics);
      preds.push_back(std::move(sp));
    }
  } else {
    if (checkpoint.empty()) throw std::runtime_error("eval: --checkpoint required");
    Model model = load_checkpoint(checkpoint, r.layout);
    preds = predict_split(model, samples, r.cfg.metrics);
  }
  MetricReport rep = compute_report(preds, r.cfg.metrics);
  write_eval_outputs(preds, rep, r.cfg.metrics, r.out_dir);
  std::printf(
      "nme=%.5f nme_vis=%s nme_occ=%s occ_ap=%s f1=%.4f roc_auc=%s fr=%.4f ced_auc=%.4f\n",
      rep.nme, rep.nme_vis ? std::to_string(*rep.nme_vis).c_str() : "null",
      rep.nme_occ ? std::to_string(*rep.nme_occ).c_str() : "null",
      rep.occ_ap ? std::to_string(*rep.occ_ap).c_str() : "null", rep.f1_at_tau,
      rep.roc_auc ? std::to_string(*rep.roc_auc).c_str() : "null", rep.fr, rep.ced_auc);
  std::printf("report: %s\n", (r.out_dir / "report.json").string().c_str());
  return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& checkpoint, const std::string& image,
              const std::string& box_arg) {
  Resolved r = resolve(args, "infer");
  Model model = load_checkpoint(checkpoint, r.layout);
  AnnotatedSample sample;
  sample.image = read_png(image);
  double x, y, w, h;
  if (std::sscanf(box_arg.c_str(), "%lf,%lf,%lf,%lf", &x, &y, &w, &h) != 4)
    throw std::runtime_error("infer: --box expects x,y,w,h");
  sample.box = {x, y, w, h};
  const BackboneConfig& bc = model.config().backbone;
  NormalizedCrop nc = normalize_crop(sample, bc.crop_h, bc.crop_w);
  Affine2 inv = nc.transform.inverse();
  ModelOutput out = model.forward(nc.crop, true);
  nlohmann::ordered_json j;
  auto pts = nlohmann::ordered_json::array();
  auto vis = nlohmann::ordered_json::array();
  for (int p = 0; p < model.layout().num_points; ++p) {
    Point2 img_pt = inv.apply({out.decode.coords.at(p, 0), out.decode.coords.at(p, 1)});
    pts.push_back({img_pt[0], img_pt[1]});
    vis.push_back(out.visibility.probabilities.at(p));
  }
  j["points"] = std::move(pts);
  j["visibility"] = std::move(vis);
  write_json_atomic(j, (r.out_dir / "prediction.json").string());
  std::printf("%s\n", j.dump().c_str());
  return 0;
}

std::string csv_opt(const std::optional<Scalar>& v) {
  return v ? std::to_string(*v) : "null";
}

int cmd_report(const CommonArgs& args, const std::vector<std::string>& files) {
  Resolved r = resolve(args, "report");
  struct Row {
    std::string name;
    MetricReport rep;
  };
  std::vector<Row> rows;
  for (const std::string& file : files) {
    nlohmann::json j = read_json_file(file, "report");
    fs::path p(file);
    std::string name = p.parent_path().filename().string();
    if (name.empty()) name = p.stem().string();
    rows.push_back({name, report_from_json(j)});

    fs::path side = p.parent_path() / "eval_data.json";
    if (fs::exists(side)) {
      nlohmann::json d = read_json_file(side.string(), "eval data");
      auto nmes = d.at("per_sample_nme").get<std::vector<Scalar>>();
      auto scores = d.at("scores").get<std::vector<Scalar>>();
      auto labels = d.at("labels").get<std::vector<int>>();
      Scalar cutoff = d.at("cutoff").get<Scalar>();
      {
        std::ofstream f(r.out_dir / (name + "_ced.csv"));
        f << "nme,fraction\n";
        for (auto [xk, yk] : ced_curve(nmes, cutoff)) f << xk << "," << yk << "\n";
      }
      {
        std::ofstream f(r.out_dir / (name + "_pr.csv"));
        f << "recall,precision\n";
        for (auto [rec, prec] : pr_curve(scores, labels)) f << rec << "," << prec << "\n";
      }
    }
  }

  std::ofstream csv(r.out_dir / "summary.csv");
  csv << "run,nme,nme_vis,nme_occ,occ_ap,f1,roc_auc,fr,ced_auc\n";
  std::string md = "| run | nme | nme_vis | nme_occ | occ_ap | f1 | roc_auc | fr | ced_auc |\n"
                   "|---|---|---|---|---|---|---|---|---|\n";
  for (const Row& row : rows) {
    const MetricReport& m = row.rep;
    csv << row.name << "," << m.nme << "," << csv_opt(m.nme_vis) << "," << csv_opt(m.nme_occ)
        << "," << csv_opt(m.occ_ap) << "," << m.f1_at_tau << "," << csv_opt(m.roc_auc) << ","
        << m.fr << "," << m.ced_auc << "\n";
    md += "| " + row.name + " | " + std::to_string(m.nme) + " | " + csv_opt(m.nme_vis) + " | " +
          csv_opt(m.nme_occ) + " | " + csv_opt(m.occ_ap) + " | " + std::to_string(m.f1_at_tau) +
          " | " + csv_opt(m.roc_auc) + " | " + std::to_string(m.fr) + " | " +
          std::to_string(m.ced_auc) + " |\n";
  }
  {
    std::ofstream f(r.out_dir / "summary.md");
    f << md;
  }
  std::printf("%s", md.c_str());
  std::printf("summary: %s\n", (r.out_dir / "summary.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occlusion-aware facial landmark toolkit"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, infer_args, report_args;

  CLI::App* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  add_common(gen, gen_args);

  CLI::App* train = app.add_subcommand("train", "Train a model on the train split");
  add_common(train, train_args);
  bool resume = false;
  train->add_flag("--resume", resume, "Continue from the checkpoint in the output directory");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_common(eval, eval_args);
  std::string eval_ckpt, eval_split = "test";
  bool oracle = false;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file");
  eval->add_option("--split", eval_split, "Dataset split (default test)");
  eval->add_flag("--oracle", oracle, "Score ground truth against itself");

  CLI::App* infer = app.add_subcommand("infer", "Predict landmarks for one image");
  add_common(infer, infer_args);
  std::string infer_ckpt, infer_image, infer_box;
  infer->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required();
  infer->add_option("--image", infer_image, "PNG image")->required()->check(CLI::ExistingFile);
  infer->add_option("--box", infer_box, "Face box x,y,w,h")->required();

  CLI::App* report = app.add_subcommand("report", "Merge report files into tables and curves");
  add_common(report, report_args);
  std::vector<std::string> report_files;
  report->add_option("files", report_files, "report.json files")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
    if (gen->parsed()) {
      collect_overrides(gen, gen_args);
      return cmd_generate(gen_args);
    }
    if (train->parsed()) {
      collect_overrides(train, train_args);
      return cmd_train(train_args, resume);
    }
    if (eval->parsed()) {
      collect_overrides(eval, eval_args);
      return cmd_eval(eval_args, eval_ckpt, eval_split, oracle);
    }
    if (infer->parsed()) {
      collect_overrides(infer, infer_args);
      return cmd_infer(infer_args, infer_ckpt, infer_image, infer_box);
    }
    if (report->parsed()) {
      collect_overrides(report, report_args);
      return cmd_report(report_args, report_files);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
