#include "occlm/training.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "occlm/synth.hpp"
#include "testutil.hpp"

using namespace occlm;

namespace {

std::vector<AnnotatedSample> make_dataset(int n, uint64_t seed) {
  std::vector<AnnotatedSample> out;
  Rng rng(seed);
  const char* styles[] = {"human", "mammal-eared", "robot"};
  for (int i = 0; i < n; ++i) {
    SceneParams sp;
    sp.style = styles[i % 3];
    sp.yaw_deg = rng.uniform(-35.0, 35.0);
    sp.pitch_deg = rng.uniform(-12.0, 12.0);
    sp.occluder_min = 0;
    sp.occluder_max = 2;
    sp.image_size = 48;
    out.push_back(synthesize_sample(seed * 1000 + static_cast<uint64_t>(i), sp));
  }
  return out;
}

ModelConfig train_model_config() {
  ModelConfig c;
  c.backbone.stacks = 1;
  c.backbone.channels = 8;
  c.backbone.crop_h = c.backbone.crop_w = 32;
  c.backbone.stride = 4;
  c.backbone.seed = 4;
  c.visibility.c_psi = 4;
  c.visibility.local_depth = 1;
  c.visibility.mix_width = 2;
  c.visibility.seed = 5;
  return c;
}

TrainConfig quick_train_config(int epochs, int warm) {
  TrainConfig c;
  c.epochs = epochs;
  c.warm_start_epochs = warm;
  c.batch_size = 4;
  c.lr = 1e-3;
  c.seed = 11;
  c.weights.stage = {1.0};
  c.mask_prob = 0.5;
  return c;
}

}  // namespace

TEST(Adam, MovesTowardMinimum) {
  // minimize (w-3)^2 elementwise
  Tensor w({4}), g({4});
  std::vector<ParamRef> ps{{"w", &w, &g}};
  Adam adam(ps);
  for (int it = 0; it < 800; ++it) {
    for (int i = 0; i < 4; ++i) g.at(i) = 2.0 * (w.at(i) - 3.0);
    adam.step(0.05);
    g.zero();
  }
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(w.at(i), 3.0, 1e-3);
  EXPECT_EQ(adam.steps(), 800);
}

TEST(Adam, StateRoundTrip) {
  Tensor w({3}), g({3});
  std::vector<ParamRef> ps{{"w", &w, &g}};
  Adam a(ps);
  for (int it = 0; it < 5; ++it) {
    for (int i = 0; i < 3; ++i) g.at(i) = 0.3 * (i + 1);
    a.step(0.01);
  }
  Tensor w_snapshot = w;
  auto state = a.to_json();

  Tensor w2 = w_snapshot, g2({3});
  std::vector<ParamRef> ps2{{"w", &w2, &g2}};
  Adam b(ps2);
  b.load_json(state);
  for (int it = 0; it < 3; ++it) {
    for (int i = 0; i < 3; ++i) {
      g.at(i) = 0.1 * i;
      g2.at(i) = 0.1 * i;
    }
    a.step(0.01);
    b.step(0.01);
  }
  for (int i = 0; i < 3; ++i) ASSERT_EQ(w.at(i), w2.at(i));
}

TEST(TrainConfigChecks, Validation) {
  TrainConfig c = quick_train_config(4, 1);
  validate_train_config(c, 1);
  c.warm_start_epochs = 5;
  EXPECT_THROW(validate_train_config(c, 1), std::runtime_error);
  c = quick_train_config(4, 1);
  c.weights.stage = {1.0, 1.0};
  EXPECT_THROW(validate_train_config(c, 1), std::runtime_error);
  c = quick_train_config(4, 1);
  c.lr = 0;
  EXPECT_THROW(validate_train_config(c, 1), std::runtime_error);
}

TEST(Training, WarmStartFreezesVisibilityHeadBitwise) {
  LandmarkLayout layout = default_layout();
  Model model(train_model_config(), layout);
  auto data = make_dataset(8, 21);

  std::vector<double> before;
  for (auto& p : model.params())
    if (p.name.rfind("vis.", 0) == 0)
      for (size_t i = 0; i < p.value->numel(); ++i) before.push_back((*p.value)[i]);
  ASSERT_FALSE(before.empty());

  TrainConfig cfg = quick_train_config(2, 2);  // entirely warm
  Adam adam(model.params());
  auto log = train_model(model, adam, data, cfg);
  ASSERT_EQ(log.size(), 2u);
  for (const auto& s : log) {
    EXPECT_EQ(s.vis, 0.0);
    EXPECT_EQ(s.syn, 0.0);
    EXPECT_DOUBLE_EQ(s.total, s.hm + cfg.weights.point * s.point + cfg.weights.edge * s.edge);
  }
  size_t k = 0;
  for (auto& p : model.params())
    if (p.name.rfind("vis.", 0) == 0)
      for (size_t i = 0; i < p.value->numel(); ++i) ASSERT_EQ((*p.value)[i], before[k++]);
  // the backbone must have moved
  bool backbone_moved = false;
  Model fresh(train_model_config(), layout);
  auto fp = fresh.params(false);
  auto mp = model.params(false);
  for (size_t i = 0; i < fp.size(); ++i)
    for (size_t j = 0; j < fp[i].value->numel(); ++j)
      backbone_moved |= (*fp[i].value)[j] != (*mp[i].value)[j];
  EXPECT_TRUE(backbone_moved);
}

TEST(Training, SmokeRunHalvesHeatmapLoss) {
  LandmarkLayout layout = default_layout();
  Model model(train_model_config(), layout);
  auto data = make_dataset(16, 22);
  TrainConfig cfg = quick_train_config(10, 2);
  cfg.occaug = false;  // pure localization smoke test
  Adam adam(model.params());
  auto log = train_model(model, adam, data, cfg);
  ASSERT_EQ(log.size(), 10u);
  EXPECT_LT(log.back().hm, 0.5 * log.front().hm);
  for (const auto& s : log) EXPECT_TRUE(std::isfinite(s.total));
}

TEST(Training, VisibilityTermsAppearAfterWarmStart) {
  LandmarkLayout layout = default_layout();
  Model model(train_model_config(), layout);
  auto data = make_dataset(6, 23);
  TrainConfig cfg = quick_train_config(2, 1);
  Adam adam(model.params());
  std::ostringstream log_text;
  auto log = train_model(model, adam, data, cfg, 0, &log_text);
  EXPECT_EQ(log[0].vis, 0.0);
  EXPECT_GT(log[1].vis, 0.0);
  // one JSON object per line with every component
  std::istringstream lines(log_text.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "L_hm", "L_pt", "L_edge", "L_vis", "L_syn", "total", "lr"})
      EXPECT_TRUE(j.contains(key)) << key;
    ++n;
  }
  EXPECT_EQ(n, 2);
}

TEST(Training, ResumeReproducesUninterruptedRun) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "occlm_resume";
  fs::create_directories(dir);
  std::string ckpt = (dir / "ckpt.json").string();
  LandmarkLayout layout = default_layout();
  auto data = make_dataset(6, 24);
  TrainConfig cfg = quick_train_config(4, 1);

  Model straight(train_model_config(), layout);
  Adam adam_a(straight.params());
  auto log_a = train_model(straight, adam_a, data, cfg);

  // interrupted run: same config, stopped after two epochs
  Model part(train_model_config(), layout);
  Adam adam_b(part.params());
  run_epoch(part, adam_b, data, cfg, 0);
  run_epoch(part, adam_b, data, cfg, 1);
  auto cj = checkpoint_json(part, 2);
  cj["adam"] = adam_b.to_json();
  write_json_atomic(cj, ckpt);

  ResumedTraining rt = load_train_checkpoint(ckpt, layout);
  EXPECT_EQ(rt.epochs_done, 2);
  Adam adam_c(rt.model.params());
  adam_c.load_json(rt.adam_state);
  auto log_b = train_model(rt.model, adam_c, data, cfg, static_cast<int>(rt.epochs_done));

  ASSERT_EQ(log_b.size(), 2u);
  for (size_t i = 0; i < 2; ++i) {
    const EpochStats& x = log_a[2 + i];
    const EpochStats& y = log_b[i];
    ASSERT_EQ(x.hm, y.hm);
    ASSERT_EQ(x.point, y.point);
    ASSERT_EQ(x.vis, y.vis);
    ASSERT_EQ(x.syn, y.syn);
    ASSERT_EQ(x.total, y.total);
  }
  auto pa = straight.params();
  auto pb = rt.model.params();
  for (size_t i = 0; i < pa.size(); ++i)
    for (size_t j = 0; j < pa[i].value->numel(); ++j)
      ASSERT_EQ((*pa[i].value)[j], (*pb[i].value)[j]) << pa[i].name;
  fs::remove_all(dir);
}

TEST(Training, RejectsEmptyDataset) {
  LandmarkLayout layout = default_layout();
  Model model(train_model_config(), layout);
  Adam adam(model.params());
  std::vector<AnnotatedSample> empty;
  TrainConfig cfg = quick_train_config(1, 0);
  EXPECT_THROW(train_model(model, adam, empty, cfg), std::runtime_error);
}
