#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <filesystem>

#include "uret/model.hpp"
#include "uret/trainer.hpp"

using namespace uret;
namespace fs = std::filesystem;

namespace {

using Md = Mat<double>;

ModelConfig small_config(const std::string& variant = "full") {
  RunConfig rc;
  rc.set("backbone.dim", "16");
  rc.set("backbone.depth", "3");
  rc.set("backbone.heads", "2");
  rc.set("backbone.patch_size", "8");
  rc.set("backbone.mlp_ratio", "2.0");
  rc.set("backbone.elim_blocks", "1");
  rc.set("uncert.heads", "2");
  rc.set("head.channels", "8");
  rc.set("data.template_side", "32");
  rc.set("data.search_side", "64");
  rc.set("model.variant", variant);
  return ModelConfig::from(rc);
}

template <typename T>
ModelInputs<T> random_inputs(const ModelConfig& cfg, Rng& rng) {
  auto img = [&](int side) {
    Mat<T> m(side * side, 3);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = static_cast<T>(rng.uniform());
    return m;
  };
  ModelInputs<T> in;
  in.rgb_template = img(cfg.backbone.template_side);
  in.ev_template = img(cfg.backbone.template_side);
  in.rgb_search = img(cfg.backbone.search_side);
  in.ev_search = img(cfg.backbone.search_side);
  return in;
}

template <typename T>
TrainTarget<T> center_target(const ModelConfig& cfg) {
  const int gs = cfg.grid_side();
  BoundingBox gt{cfg.backbone.search_side * 0.4, cfg.backbone.search_side * 0.4,
                 cfg.backbone.search_side * 0.2, cfg.backbone.search_side * 0.2};
  TrainTarget<T> t;
  auto resp = gt_response_map(gt, gs, gs, cfg.backbone.patch_size);
  t.response_map = Mat<T>(gs * gs, 1);
  for (int i = 0; i < gs * gs; ++i) t.response_map(i, 0) = static_cast<T>(resp[static_cast<size_t>(i)]);
  t.gt_cell = gt_center_cell(gt, gs, gs, cfg.backbone.patch_size);
  t.gt_box = Mat<T>(1, 4);
  t.gt_box << static_cast<T>(gt.x), static_cast<T>(gt.y), static_cast<T>(gt.w), static_cast<T>(gt.h);
  return t;
}

}  // namespace

TEST_CASE("training forward wires three branches, two KLs, finite total") {
  ModelConfig cfg = small_config();
  auto model = TrackModel<double>::build(cfg, 1);
  Rng rng(2);
  ModelInputs<double> in = random_inputs<double>(cfg, rng);
  TrainTarget<double> target = center_target<double>(cfg);

  Tape<double> tape;
  GradSink<double> sink(model.store.size());
  Ctx<double> ctx{tape, model.store, &sink};
  Rng noise(3);
  TrainGraph<double> g = model.forward_train(ctx, in, target, noise);

  CHECK(std::isfinite(g.total.scalar()));
  CHECK(g.kl_v.scalar() >= 0.0);
  CHECK(g.kl_cm.scalar() >= 0.0);
  const double expect = g.fusion.total.scalar() + g.cross_modal.total.scalar() +
                        g.rgb.total.scalar() +
                        cfg.loss.alpha_kl * (g.kl_v.scalar() + g.kl_cm.scalar());
  CHECK(g.total.scalar() == doctest::Approx(expect).epsilon(1e-12));

  // branch totals follow the configured weights
  const double f_expect = g.fusion.cls_loss.scalar() + 2.0 * g.fusion.iou_loss.scalar() +
                          5.0 * g.fusion.l1_loss.scalar();
  CHECK(g.fusion.total.scalar() == doctest::Approx(f_expect).epsilon(1e-12));

  // attention rows sum to one everywhere, backbone and uncertainty stage
  for (const auto& block : g.trace.attn)
    for (const auto& head : block)
      for (Eigen::Index r = 0; r < head.rows(); ++r)
        CHECK(head.m().row(r).sum() == doctest::Approx(1.0).epsilon(1e-5));
  for (const auto& head : g.uncert_attn)
    for (Eigen::Index r = 0; r < head.rows(); ++r)
      CHECK(head.m().row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));

  tape.backward(g.total.id);
  int with_grad = 0;
  for (const auto& gm : sink.g)
    if (gm.size() > 0) ++with_grad;
  CHECK(with_grad == model.store.size());  // every parameter participates
}

TEST_CASE("alpha = 0 with pinned variance reduces the total to the branch sum") {
  ModelConfig cfg = small_config();
  cfg.loss.alpha_kl = 0.0;
  auto model = TrackModel<double>::build(cfg, 4);
  Rng rng(5);
  ModelInputs<double> in = random_inputs<double>(cfg, rng);
  TrainTarget<double> target = center_target<double>(cfg);
  Tape<double> tape;
  GradSink<double> sink(model.store.size());
  Ctx<double> ctx{tape, model.store, &sink};
  Rng noise(6);
  TrainGraph<double> g = model.forward_train(ctx, in, target, noise);
  CHECK(g.total.scalar() == doctest::Approx(g.fusion.total.scalar() + g.cross_modal.total.scalar() +
                                            g.rgb.total.scalar()).epsilon(1e-12));
}

TEST_CASE("baseline variant: single branch, no KL terms, all parameters used") {
  ModelConfig cfg = small_config("baseline");
  auto model = TrackModel<double>::build(cfg, 7);
  Rng rng(8);
  ModelInputs<double> in = random_inputs<double>(cfg, rng);
  TrainTarget<double> target = center_target<double>(cfg);
  Tape<double> tape;
  GradSink<double> sink(model.store.size());
  Ctx<double> ctx{tape, model.store, &sink};
  Rng noise(9);
  TrainGraph<double> g = model.forward_train(ctx, in, target, noise);
  CHECK(g.kl_v.scalar() == 0.0);
  CHECK(g.kl_cm.scalar() == 0.0);
  CHECK(g.total.scalar() == doctest::Approx(g.fusion.total.scalar()).epsilon(1e-12));
  CHECK(model.store.find("input_fuse.conv1x1.weight") >= 0);
  CHECK(model.store.find("uncert.modal.attn.q.weight") < 0);

  tape.backward(g.total.id);
  int with_grad = 0;
  for (const auto& gm : sink.g)
    if (gm.size() > 0) ++with_grad;
  CHECK(with_grad == model.store.size());
}

TEST_CASE("keep_ratio 1.0 inference is bit-identical to an elimination-free model") {
  ModelConfig cfg = small_config();
  cfg.backbone.keep_ratio = 1.0;
  ModelConfig cfg_none = small_config();
  cfg_none.backbone.elim_blocks.clear();

  auto model_a = TrackModel<double>::build(cfg, 10);
  auto model_b = TrackModel<double>::build(cfg_none, 10);  // same seed, same params
  Rng rng(11);
  ModelInputs<double> in = random_inputs<double>(cfg, rng);
  InferenceOut a = model_a.forward_infer(in);
  InferenceOut b = model_b.forward_infer(in);
  REQUIRE(a.maps.cls.size() == b.maps.cls.size());
  for (size_t i = 0; i < a.maps.cls.size(); ++i) {
    CHECK(a.maps.cls[i] == b.maps.cls[i]);
    CHECK(a.maps.size_w[i] == b.maps.size_w[i]);
  }
}

TEST_CASE("inference is deterministic and sampling stays off at eval") {
  ModelConfig cfg = small_config();
  auto model = TrackModel<double>::build(cfg, 12);
  Rng rng(13);
  ModelInputs<double> in = random_inputs<double>(cfg, rng);
  InferenceOut a = model.forward_infer(in);
  InferenceOut b = model.forward_infer(in);
  for (size_t i = 0; i < a.maps.cls.size(); ++i) CHECK(a.maps.cls[i] == b.maps.cls[i]);
  CHECK(a.confidence == b.confidence);
}

TEST_CASE("with elimination active, head maps still cover the full grid") {
  ModelConfig cfg = small_config();
  cfg.backbone.keep_ratio = 0.6;
  auto model = TrackModel<double>::build(cfg, 14);
  Rng rng(15);
  ModelInputs<double> in = random_inputs<double>(cfg, rng);
  InferenceOut out = model.forward_infer(in);
  const int gs = cfg.grid_side();
  CHECK(static_cast<int>(out.maps.cls.size()) == gs * gs);
  for (double v : out.maps.cls) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("checkpoint: bit-exact round trip, integrity and compatibility errors") {
  ModelConfig cfg = small_config();
  auto model = TrackModel<double>::build(cfg, 16);
  Rng rng(17);
  ModelInputs<double> in = random_inputs<double>(cfg, rng);
  InferenceOut before = model.forward_infer(in);

  const fs::path path = fs::temp_directory_path() / "uret_ckpt_test.bin";
  CheckpointContent content = checkpoint_from_store(model.store, cfg.summary());
  content.meta["step"] = "123";
  save_checkpoint_file(path, content);

  auto model2 = TrackModel<double>::build(cfg, 999);  // different init
  CheckpointContent loaded = load_checkpoint_file(path);
  CHECK(loaded.meta.at("step") == "123");
  load_into_store(loaded, model2.store, cfg.summary());
  InferenceOut after = model2.forward_infer(in);
  for (size_t i = 0; i < before.maps.cls.size(); ++i) {
    CHECK(before.maps.cls[i] == after.maps.cls[i]);
    CHECK(before.maps.off_x[i] == after.maps.off_x[i]);
  }

  // incompatible architecture: changed dim
  ModelConfig other = small_config();
  other.backbone.dim = 32;
  auto model3 = TrackModel<double>::build(other, 1);
  CHECK_THROWS_WITH_AS(load_into_store(loaded, model3.store, other.summary()),
                       doctest::Contains("incompatible"), DataError);

  // corruption: flip one payload byte -> integrity error, no partial load
  std::string bytes = read_text_file(path);
  bytes[bytes.size() / 2] ^= 0x40;
  const fs::path bad = fs::temp_directory_path() / "uret_ckpt_bad.bin";
  write_text_file(bad, bytes);
  CHECK_THROWS_WITH_AS(load_checkpoint_file(bad), doctest::Contains("integrity"), DataError);
  fs::remove(path);
  fs::remove(bad);
}

TEST_CASE("parameter groups: every parameter in exactly one group") {
  ModelConfig cfg = small_config();
  auto model = TrackModel<double>::build(cfg, 18);
  int backbone = 0, other = 0;
  for (int i = 0; i < model.store.size(); ++i) {
    const std::string& name = model.store.name(i);
    if (is_backbone_param(name)) {
      ++backbone;
    } else {
      ++other;
      const bool known = name.rfind("uncert.", 0) == 0 || name.rfind("fusion.", 0) == 0 ||
                         name.rfind("head.", 0) == 0 || name.rfind("input_fuse.", 0) == 0;
      CHECK(known);
    }
  }
  CHECK(backbone > 0);
  CHECK(other > 0);
  CHECK(backbone + other == model.store.size());
}

TEST_CASE("timing probe: full-size training forward/backward per sample") {
  RunConfig rc;  // full-size defaults: d=192, depth 6
  ModelConfig cfg = ModelConfig::from(rc);
  auto model = TrackModel<double>::build(cfg, 19);
  Rng rng(20);
  ModelInputs<double> in = random_inputs<double>(cfg, rng);
  TrainTarget<double> target = center_target<double>(cfg);

  const auto t0 = std::chrono::steady_clock::now();
  {
    Tape<double> tape;
    GradSink<double> sink(model.store.size());
    Ctx<double> ctx{tape, model.store, &sink};
    Rng noise(21);
    TrainGraph<double> g = model.forward_train(ctx, in, target, noise);
    tape.backward(g.total.id);
    CHECK(std::isfinite(g.total.scalar()));
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("full-size fwd+bwd: " << ms << " ms/sample");
  CHECK(ms < 30000);
}
