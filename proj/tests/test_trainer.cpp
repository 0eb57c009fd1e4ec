#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "uret/trainer.hpp"

using namespace uret;

namespace {

ModelConfig tiny_model_config(const std::string& variant = "full") {
  RunConfig rc;
  rc.set("backbone.dim", "16");
  rc.set("backbone.depth", "2");
  rc.set("backbone.heads", "2");
  rc.set("backbone.patch_size", "8");
  rc.set("backbone.mlp_ratio", "2.0");
  rc.set("backbone.elim_blocks", "");
  rc.set("uncert.heads", "2");
  rc.set("head.channels", "8");
  rc.set("data.template_side", "32");
  rc.set("data.search_side", "64");
  rc.set("model.variant", variant);
  return ModelConfig::from(rc);
}

SequenceRecord tiny_sequence(int n_frames = 8, uint64_t seed = 3) {
  SynthConfig cfg;
  cfg.n_frames = n_frames;
  cfg.width = 96;
  cfg.height = 96;
  cfg.object_size = 22;
  cfg.speed = 2.0;
  return generate_synthetic_sequence(cfg, seed);
}

}  // namespace

TEST_CASE("pair sampling: two-frame sequence admits exactly the ordered pair (0, 1)") {
  TrainConfig tc;
  ModelConfig mc = tiny_model_config();
  SequenceRecord seq = tiny_sequence(2);
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    auto pair = sample_training_pair(seq, rng, tc, mc);
    REQUIRE(pair.has_value());
    CHECK(pair->template_index == 0);
    CHECK(pair->search_index == 1);
  }
}

TEST_CASE("pair sampling: zero jitter centers the search crop on the groundtruth") {
  TrainConfig tc;
  tc.center_jitter = 0;
  tc.scale_jitter = 1.0;
  ModelConfig mc = tiny_model_config();
  SequenceRecord seq = tiny_sequence(6);
  Rng rng(2);
  auto pair = sample_training_pair(seq, rng, tc, mc);
  REQUIRE(pair.has_value());
  CHECK(pair->gt_in_search.cx() == doctest::Approx(mc.backbone.search_side / 2.0).epsilon(1e-9));
  CHECK(pair->gt_in_search.cy() == doctest::Approx(mc.backbone.search_side / 2.0).epsilon(1e-9));
}

TEST_CASE("pair sampling: 1000 draws respect the configured max gap") {
  TrainConfig tc;
  tc.max_gap = 5;
  ModelConfig mc = tiny_model_config();
  SequenceRecord seq = tiny_sequence(24);
  Rng rng(3);
  int max_seen = 0;
  for (int i = 0; i < 1000; ++i) {
    auto pair = sample_training_pair(seq, rng, tc, mc);
    REQUIRE(pair.has_value());
    CHECK(pair->template_index < pair->search_index);
    max_seen = std::max(max_seen, pair->search_index - pair->template_index);
  }
  CHECK(max_seen <= 5);
  CHECK(max_seen >= 1);
}

TEST_CASE("pair sampling: all-absent sequence yields the skip signal") {
  SequenceRecord seq = tiny_sequence(4);
  std::fill(seq.absent.begin(), seq.absent.end(), true);
  TrainConfig tc;
  ModelConfig mc = tiny_model_config();
  Rng rng(4);
  CHECK_FALSE(sample_training_pair(seq, rng, tc, mc).has_value());
}

TEST_CASE("training step is deterministic from identical state and seeds") {
  ModelConfig mc = tiny_model_config();
  TrainConfig tc;
  tc.batch_size = 2;
  tc.workers = 2;
  SequenceRecord seq = tiny_sequence(8);

  auto run_once = [&]() {
    auto model = TrackModel<double>::build(mc, 7);
    AdamW<double> opt(model.store, tc);
    Rng rng(5);
    std::vector<TrainingPair> batch;
    while (batch.size() < 2) {
      auto p = sample_training_pair(seq, rng, tc, mc);
      if (p) batch.push_back(std::move(*p));
    }
    StepStats<double> s = training_step(model, batch, opt, rng, tc, 0);
    // hash the post-step parameters
    uint64_t h = 0;
    for (int i = 0; i < model.store.size(); ++i)
      h = fnv1a64(model.store.value(i).data(),
                  static_cast<size_t>(model.store.value(i).size()) * sizeof(double), h ? h : 0xcbf29ce484222325ull);
    return std::make_pair(s.total, h);
  };
  const auto a = run_once();
  const auto b = run_once();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("gradient flows to both parameter groups and both get distinct rates") {
  ModelConfig mc = tiny_model_config();
  TrainConfig tc;
  tc.batch_size = 1;
  tc.lr_backbone = 0.0001;
  tc.lr_other = 0.1;  // exaggerated split so the step sizes are visible
  SequenceRecord seq = tiny_sequence(6);
  auto model = TrackModel<double>::build(mc, 8);
  const int backbone_param = model.store.find("backbone.block0.attn.q.weight");
  const int head_param = model.store.find("head.cls.conv1.weight");
  REQUIRE(backbone_param >= 0);
  REQUIRE(head_param >= 0);
  const Mat<double> b_before = model.store.value(backbone_param);
  const Mat<double> h_before = model.store.value(head_param);

  AdamW<double> opt(model.store, tc);
  Rng rng(9);
  std::vector<TrainingPair> batch;
  auto p = sample_training_pair(seq, rng, tc, mc);
  REQUIRE(p.has_value());
  batch.push_back(std::move(*p));
  training_step(model, batch, opt, rng, tc, 0);

  const double b_delta = (model.store.value(backbone_param) - b_before).cwiseAbs().maxCoeff();
  const double h_delta = (model.store.value(head_param) - h_before).cwiseAbs().maxCoeff();
  CHECK(b_delta > 0.0);
  CHECK(h_delta > 0.0);
  CHECK(h_delta > b_delta * 10);  // the other group moves far more per step
}

TEST_CASE("short training run cuts the loss by half (training-curve oracle)") {
  ModelConfig mc = tiny_model_config();
  TrainConfig tc;
  tc.batch_size = 4;
  tc.steps = 120;
  tc.log_every = 1;
  tc.seed = 11;
  tc.lr_backbone = 1e-3;
  tc.lr_other = 1e-3;
  std::vector<SequenceRecord> data{tiny_sequence(12, 21)};
  auto model = TrackModel<double>::build(mc, 12);
  std::vector<double> totals;
  train_model(model, data, tc, [&](const std::string& line) {
    const auto pos = line.find("total=");
    totals.push_back(std::stod(line.substr(pos + 6)));
  });
  REQUIRE(totals.size() >= 100);
  double early = 0, late = 0;
  for (int i = 5; i < 15; ++i) early += totals[static_cast<size_t>(i)] / 10;
  for (size_t i = totals.size() - 10; i < totals.size(); ++i) late += totals[i] / 10;
  MESSAGE("early=" << early << " late=" << late);
  CHECK(late <= 0.5 * early);
}

TEST_CASE("fixed-seed training reruns produce identical logs") {
  ModelConfig mc = tiny_model_config();
  TrainConfig tc;
  tc.batch_size = 2;
  tc.steps = 6;
  tc.log_every = 1;
  tc.seed = 13;
  std::vector<SequenceRecord> data{tiny_sequence(8, 22)};
  auto run = [&]() {
    auto model = TrackModel<double>::build(mc, 14);
    std::string log;
    train_model(model, data, tc, [&](const std::string& line) { log += line + "\n"; });
    return log;
  };
  CHECK(run() == run());
}

TEST_CASE("optimizer state round-trips through checkpoint aux sections") {
  ModelConfig mc = tiny_model_config();
  TrainConfig tc;
  tc.batch_size = 1;
  auto model = TrackModel<double>::build(mc, 15);
  AdamW<double> opt(model.store, tc);
  SequenceRecord seq = tiny_sequence(6);
  Rng rng(16);
  std::vector<TrainingPair> batch;
  auto p = sample_training_pair(seq, rng, tc, mc);
  REQUIRE(p.has_value());
  batch.push_back(*p);
  training_step(model, batch, opt, rng, tc, 0);

  CheckpointContent c = checkpoint_from_store(model.store, mc.summary());
  for (int i = 0; i < model.store.size(); ++i) {
    c.aux.emplace_back("adam.m." + model.store.name(i), opt.first_moment()[static_cast<size_t>(i)]);
    c.aux.emplace_back("adam.v." + model.store.name(i), opt.second_moment()[static_cast<size_t>(i)]);
  }
  c.meta["adam.t"] = std::to_string(opt.step_count());
  const auto path = std::filesystem::temp_directory_path() / "uret_opt_ckpt.bin";
  save_checkpoint_file(path, c);
  CheckpointContent loaded = load_checkpoint_file(path);
  CHECK(loaded.meta.at("adam.t") == "1");
  CHECK(loaded.aux.size() == static_cast<size_t>(2 * model.store.size()));
  bool found = false;
  for (auto& [name, value] : loaded.aux)
    if (name == "adam.m." + model.store.name(0)) {
      found = true;
      CHECK((value - opt.first_moment()[0]).cwiseAbs().maxCoeff() == 0.0);
    }
  CHECK(found);
  std::filesystem::remove(path);
}
