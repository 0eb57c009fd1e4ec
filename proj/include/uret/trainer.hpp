#pragma once

#include <functional>
#include <optional>
#include <thread>

#include "uret/data.hpp"
#include "uret/model.hpp"

namespace uret {

struct TrainConfig {
  double lr_backbone = 5e-6;
  double lr_other = 5e-5;
  double weight_decay = 1e-4;
  double lr_decay_factor = 0.2;
  int lr_decay_epoch = 50;
  int epochs = 1;
  int batch_size = 8;
  int steps = 200;
  int steps_per_epoch = 100;
  uint64_t seed = 0;
  int max_gap = 50;
  double center_jitter = 0.25;
  double scale_jitter = 1.25;
  double clip_norm = 5.0;
  int warmup_steps = 0;
  int log_every = 10;
  int workers = 2;

  static TrainConfig from(const RunConfig& rc) {
    TrainConfig c;
    c.lr_backbone = rc.get_real("train.lr_backbone");
    c.lr_other = rc.get_real("train.lr_other");
    c.weight_decay = rc.get_real("train.weight_decay");
    c.lr_decay_factor = rc.get_real("train.lr_decay_factor");
    c.lr_decay_epoch = static_cast<int>(rc.get_int("train.lr_decay_epoch"));
    c.epochs = static_cast<int>(rc.get_int("train.epochs"));
    c.batch_size = static_cast<int>(rc.get_int("train.batch_size"));
    c.steps = static_cast<int>(rc.get_int("train.steps"));
    c.steps_per_epoch = static_cast<int>(rc.get_int("train.steps_per_epoch"));
    c.seed = static_cast<uint64_t>(rc.get_int("train.seed"));
    c.max_gap = static_cast<int>(rc.get_int("train.max_gap"));
    c.center_jitter = rc.get_real("train.center_jitter");
    c.scale_jitter = rc.get_real("train.scale_jitter");
    c.clip_norm = rc.get_real("train.clip_norm");
    c.warmup_steps = static_cast<int>(rc.get_int("train.warmup_steps"));
    c.log_every = static_cast<int>(rc.get_int("train.log_every"));
    c.workers = static_cast<int>(rc.get_int("train.workers"));
    if (c.lr_backbone <= 0 || c.lr_other <= 0 || c.weight_decay < 0)
      throw ConfigError("train: learning rates must be positive");
    if (c.lr_decay_factor <= 0 || c.lr_decay_factor > 1)
      throw ConfigError("train: lr_decay_factor must be in (0, 1]");
    return c;
  }

  // Base rates scaled by the decay factor from lr_decay_epoch onward.
  std::pair<double, double> lr_at_epoch(int epoch) const {
    if (epoch < 0) throw std::invalid_argument("lr_at_epoch: negative epoch");
    const double f = epoch >= lr_decay_epoch ? lr_decay_factor : 1.0;
    return {lr_backbone * f, lr_other * f};
  }

  // Linear ramp over the first warmup_steps steps, 1.0 afterwards.
  double warmup_scale(int step) const {
    if (warmup_steps <= 0 || step >= warmup_steps) return 1.0;
    return (step + 1) / static_cast<double>(warmup_steps);
  }
};

inline bool is_backbone_param(const std::string& name) {
  return name.rfind("backbone.", 0) == 0;
}

// Decoupled-weight-decay adaptive-moment optimizer over two parameter groups
// (backbone vs. everything else).
template <typename T>
class AdamW {
 public:
  explicit AdamW(const ParamStore<T>& store, const TrainConfig& cfg)
      : cfg_(cfg), beta1_(0.9), beta2_(0.999), eps_(1e-8) {
    m_.resize(static_cast<size_t>(store.size()));
    v_.resize(static_cast<size_t>(store.size()));
    for (int i = 0; i < store.size(); ++i) {
      m_[static_cast<size_t>(i)] = Mat<T>::Zero(store.value(i).rows(), store.value(i).cols());
      v_[static_cast<size_t>(i)] = Mat<T>::Zero(store.value(i).rows(), store.value(i).cols());
    }
  }

  void step(ParamStore<T>& store, const std::vector<Mat<T>>& grads, int epoch,
            double lr_scale = 1.0) {
    ++t_;
    auto [lr_b, lr_o] = cfg_.lr_at_epoch(epoch);
    lr_b *= lr_scale;
    lr_o *= lr_scale;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (int i = 0; i < store.size(); ++i) {
      const size_t si = static_cast<size_t>(i);
      if (grads[si].size() == 0) continue;
      const double lr = is_backbone_param(store.name(i)) ? lr_b : lr_o;
      Mat<T>& m = m_[si];
      Mat<T>& v = v_[si];
      const Mat<T>& g = grads[si];
      m = static_cast<T>(beta1_) * m + static_cast<T>(1 - beta1_) * g;
      v = static_cast<T>(beta2_) * v + static_cast<T>(1 - beta2_) * g.cwiseProduct(g);
      Mat<T> m_hat = m / static_cast<T>(bc1);
      Mat<T> v_hat = v / static_cast<T>(bc2);
      Mat<T>& p = store.value(i);
      // decoupled weight decay
      p -= static_cast<T>(lr * cfg_.weight_decay) * p;
      p -= static_cast<T>(lr) *
           m_hat.cwiseQuotient(v_hat.cwiseSqrt().array().operator+(static_cast<T>(eps_)).matrix());
    }
  }

  int64_t step_count() const { return t_; }
  std::vector<Mat<T>>& first_moment() { return m_; }
  std::vector<Mat<T>>& second_moment() { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  TrainConfig cfg_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Mat<T>> m_, v_;
};

// One training pair: template crop at its groundtruth, search crop at a
// jittered groundtruth, both modalities, plus the head targets.
struct TrainingPair {
  int template_index = 0;
  int search_index = 0;
  CropResult rgb_template, ev_template, rgb_search, ev_search;
  BoundingBox gt_in_search;
};

// Draws (template, search) with template earlier and within max_gap frames,
// both with present groundtruth. Returns nullopt when the sequence admits no
// valid pair or the jittered crop loses the target.
std::optional<TrainingPair> sample_training_pair(const SequenceRecord& seq, Rng& rng,
                                                 const TrainConfig& tc, const ModelConfig& mc);

template <typename T>
struct StepStats {
  double total = 0;
  LossBundle fusion, cross_modal, rgb;
  double kl_v = 0, kl_cm = 0;
  double grad_norm = 0;
};

template <typename T>
ModelInputs<T> inputs_from_pair(const TrainingPair& p) {
  ModelInputs<T> in;
  in.rgb_template = image_to_pixel_matrix<T>(p.rgb_template.patch);
  in.ev_template = image_to_pixel_matrix<T>(p.ev_template.patch);
  in.rgb_search = image_to_pixel_matrix<T>(p.rgb_search.patch);
  in.ev_search = image_to_pixel_matrix<T>(p.ev_search.patch);
  return in;
}

template <typename T>
TrainTarget<T> target_from_pair(const TrainingPair& p, const ModelConfig& mc) {
  const int gs = mc.grid_side();
  const int cell_px = mc.backbone.patch_size;
  TrainTarget<T> t;
  const std::vector<double> resp = gt_response_map(p.gt_in_search, gs, gs, cell_px);
  t.response_map = Mat<T>(gs * gs, 1);
  for (int i = 0; i < gs * gs; ++i) t.response_map(i, 0) = static_cast<T>(resp[static_cast<size_t>(i)]);
  t.gt_cell = gt_center_cell(p.gt_in_search, gs, gs, cell_px);
  t.gt_box = Mat<T>(1, 4);
  t.gt_box << static_cast<T>(p.gt_in_search.x), static_cast<T>(p.gt_in_search.y),
      static_cast<T>(p.gt_in_search.w), static_cast<T>(p.gt_in_search.h);
  return t;
}

// Forward/backward over the batch (samples processed in parallel, gradients
// reduced in sample order), global-norm clipping, one optimizer step.
template <typename T>
StepStats<T> training_step(TrackModel<T>& model, const std::vector<TrainingPair>& batch,
                           AdamW<T>& opt, Rng& master_rng, const TrainConfig& tc, int epoch,
                           double lr_scale = 1.0) {
  const size_t n = batch.size();
  if (n == 0) throw std::invalid_argument("training_step: empty batch");

  std::vector<uint64_t> noise_seeds(n);
  for (size_t i = 0; i < n; ++i) noise_seeds[i] = master_rng.next_u64();

  std::vector<GradSink<T>> sinks(n, GradSink<T>(model.store.size()));
  std::vector<StepStats<T>> per_sample(n);
  std::vector<std::string> errors(n);

  auto run_sample = [&](size_t i) {
    try {
      Tape<T> tape;
      Ctx<T> ctx{tape, model.store, &sinks[i]};
      ModelInputs<T> in = inputs_from_pair<T>(batch[i]);
      TrainTarget<T> target = target_from_pair<T>(batch[i], model.cfg);
      Rng noise(noise_seeds[i]);
      TrainGraph<T> g = model.forward_train(ctx, in, target, noise);
      StepStats<T>& s = per_sample[i];
      auto fill = [](const BranchGraph<T>& b, LossBundle& out) {
        out.cls = static_cast<double>(b.cls_loss.scalar());
        out.iou = static_cast<double>(b.iou_loss.scalar());
        out.l1 = static_cast<double>(b.l1_loss.scalar());
        out.branch_total = static_cast<double>(b.total.scalar());
      };
      fill(g.fusion, s.fusion);
      if (model.cfg.variant == "full") {
        fill(g.cross_modal, s.cross_modal);
        fill(g.rgb, s.rgb);
      }
      s.kl_v = static_cast<double>(g.kl_v.scalar());
      s.kl_cm = static_cast<double>(g.kl_cm.scalar());
      s.total = static_cast<double>(g.total.scalar());
      if (!std::isfinite(s.total)) {
        const char* term = !std::isfinite(s.fusion.branch_total) ? "fusion branch"
                           : !std::isfinite(s.cross_modal.branch_total) ? "cross-modal branch"
                           : !std::isfinite(s.rgb.branch_total) ? "rgb branch"
                           : !std::isfinite(s.kl_v) ? "kl_v"
                           : !std::isfinite(s.kl_cm) ? "kl_cm"
                                                     : "total";
        throw NumericError(std::string("training_step: non-finite loss in ") + term);
      }
      tape.backward(g.total.id);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(tc.workers, static_cast<int>(n)));
  if (workers == 1) {
    for (size_t i = 0; i < n; ++i) run_sample(i);
  } else {
    std::vector<std::thread> threads;
    std::atomic<size_t> next{0};
    for (int w = 0; w < workers; ++w)
      threads.emplace_back([&]() {
        while (true) {
          const size_t i = next.fetch_add(1);
          if (i >= n) return;
          run_sample(i);
        }
      });
    for (auto& th : threads) th.join();
  }
  for (size_t i = 0; i < n; ++i)
    if (!errors[i].empty()) throw NumericError(errors[i]);

  // deterministic reduction in sample order, mean over the batch
  std::vector<Mat<T>> grads(static_cast<size_t>(model.store.size()));
  for (size_t i = 0; i < n; ++i) sinks[i].add_into(grads);
  const T inv_n = T(1) / static_cast<T>(n);
  double sq_norm = 0;
  for (auto& g : grads) {
    if (g.size() == 0) continue;
    g *= inv_n;
    sq_norm += static_cast<double>(g.squaredNorm());
  }
  const double norm = std::sqrt(sq_norm);
  if (tc.clip_norm > 0 && norm > tc.clip_norm) {
    const T s = static_cast<T>(tc.clip_norm / norm);
    for (auto& g : grads)
      if (g.size() != 0) g *= s;
  }
  opt.step(model.store, grads, epoch, lr_scale);

  StepStats<T> agg;
  for (const auto& s : per_sample) {
    agg.total += s.total / n;
    agg.kl_v += s.kl_v / n;
    agg.kl_cm += s.kl_cm / n;
    auto acc = [&](const LossBundle& in, LossBundle& out) {
      out.cls += in.cls / n;
      out.iou += in.iou / n;
      out.l1 += in.l1 / n;
      out.branch_total += in.branch_total / n;
    };
    acc(s.fusion, agg.fusion);
    acc(s.cross_modal, agg.cross_modal);
    acc(s.rgb, agg.rgb);
  }
  agg.grad_norm = norm;
  return agg;
}

// Full training loop over a dataset of sequences. Log lines carry no wall
// time so fixed-seed reruns are byte-identical.
template <typename T>
void train_model(TrackModel<T>& model, const std::vector<SequenceRecord>& dataset,
                 const TrainConfig& tc,
                 const std::function<void(const std::string&)>& log_line,
                 AdamW<T>* opt_in = nullptr) {
  if (dataset.empty()) throw DataError("train: empty dataset");
  AdamW<T> local_opt(model.store, tc);
  AdamW<T>& opt = opt_in != nullptr ? *opt_in : local_opt;
  Rng rng(tc.seed);

  for (int step = 0; step < tc.steps; ++step) {
    const int epoch = tc.steps_per_epoch > 0 ? step / tc.steps_per_epoch : 0;
    std::vector<TrainingPair> batch;
    int guard = 0;
    while (static_cast<int>(batch.size()) < tc.batch_size) {
      const SequenceRecord& seq = dataset[static_cast<size_t>(rng.uniform_int(
          static_cast<int64_t>(dataset.size())))];
      auto pair = sample_training_pair(seq, rng, tc, model.cfg);
      if (pair) batch.push_back(std::move(*pair));
      if (++guard > tc.batch_size * 100)
        throw DataError("train: could not sample a valid training pair");
    }
    StepStats<T> stats = training_step(model, batch, opt, rng, tc, epoch,
                                       tc.warmup_scale(step));
    if (tc.log_every > 0 && (step % tc.log_every == 0 || step + 1 == tc.steps)) {
      const auto [lr_b, lr_o] = tc.lr_at_epoch(epoch);
      char line[512];
      std::snprintf(line, sizeof(line),
                    "step=%d total=%.10g f=%.10g cm=%.10g v=%.10g kl_v=%.10g kl_cm=%.10g "
                    "grad_norm=%.10g lr_b=%.10g lr_o=%.10g",
                    step, stats.total, stats.fusion.branch_total, stats.cross_modal.branch_total,
                    stats.rgb.branch_total, stats.kl_v, stats.kl_cm, stats.grad_norm, lr_b, lr_o);
      log_line(line);
    }
  }
}

}  // namespace uret
