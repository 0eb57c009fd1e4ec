#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "uret/uncertainty.hpp"

using namespace uret;

namespace {

using Md = Mat<double>;

Md random_mat(int r, int c, Rng& rng, double s = 1.0) {
  Md m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal() * s;
  return m;
}

void set_identity_projections(ParamStore<double>& store, const MhaP<double>& p) {
  store.value(p.q.w) = Md::Identity(4, 4);
  store.value(p.k.w) = Md::Identity(4, 4);
  store.value(p.v.w) = Md::Identity(4, 4);
  store.value(p.o.w) = Md::Identity(4, 4);
  store.value(p.q.b).setZero();
  store.value(p.k.b).setZero();
  store.value(p.v.b).setZero();
  store.value(p.o.b).setZero();
}

// Numeric KL(N(mu, sigma^2) || N(0, 1)) by Simpson quadrature.
double kl_quadrature(double mu, double sigma) {
  const double lo = mu - 40 * sigma, hi = mu + 40 * sigma;
  const int n = 200000;  // even
  const double h = (hi - lo) / n;
  auto integrand = [&](double x) {
    const double z = (x - mu) / sigma;
    const double log_p = -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2 * 3.14159265358979323846);
    const double log_q = -0.5 * x * x - 0.5 * std::log(2 * 3.14159265358979323846);
    return std::exp(log_p) * (log_p - log_q);
  };
  double sum = integrand(lo) + integrand(hi);
  for (int i = 1; i < n; ++i) sum += integrand(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

GaussianTokens<double> make_gaussian(Tape<double>& tape, const Md& mu, const Md& log_var) {
  return GaussianTokens<double>{constant(tape, mu), constant(tape, log_var)};
}

}  // namespace

TEST_CASE("cross-attention with identity projections equals softmax(QQ^T/sqrt(c))Q") {
  Rng rng(1);
  ParamStore<double> store;
  MhaP<double> p = make_mha(store, "att", 4, 1, rng);
  set_identity_projections(store, p);

  Md q = random_mat(3, 4, rng);
  Tape<double> tape;
  GradSink<double> sink(store.size());
  Ctx<double> ctx{tape, store, &sink};
  MhaOut<double> out = cross_attention(ctx, constant(tape, q), constant(tape, q), p);

  // oracle: direct small-matrix computation
  Md scores = q * q.transpose() / 2.0;  // sqrt(4) = 2
  Md probs(3, 3);
  for (int r = 0; r < 3; ++r) {
    Eigen::RowVector3d row = (scores.row(r).array() - scores.row(r).maxCoeff()).exp();
    probs.row(r) = row / row.sum();
  }
  Md expect = probs * q;
  CHECK((out.out.m() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a single key/value token receives attention weight exactly 1") {
  Rng rng(2);
  ParamStore<double> store;
  MhaP<double> p = make_mha(store, "att", 4, 2, rng);
  Md q = random_mat(5, 4, rng);
  Md kv = random_mat(1, 4, rng);
  Tape<double> tape;
  GradSink<double> sink(store.size());
  Ctx<double> ctx{tape, store, &sink};
  MhaOut<double> out = cross_attention(ctx, constant(tape, q), constant(tape, kv), p);
  for (const auto& head : out.attn)
    for (Eigen::Index r = 0; r < head.rows(); ++r) CHECK(head.m()(r, 0) == 1.0);
}

TEST_CASE("attention rows sum to one within 1e-6 on random inputs") {
  Rng rng(3);
  ParamStore<double> store;
  MhaP<double> p = make_mha(store, "att", 8, 2, rng);
  Md q = random_mat(7, 8, rng, 2.0);
  Md kv = random_mat(9, 8, rng, 2.0);
  Tape<double> tape;
  GradSink<double> sink(store.size());
  Ctx<double> ctx{tape, store, &sink};
  MhaOut<double> out = cross_attention(ctx, constant(tape, q), constant(tape, kv), p);
  for (const auto& head : out.attn)
    for (Eigen::Index r = 0; r < head.rows(); ++r)
      CHECK(head.m().row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("uncertainty perception: query-length contract and attention checks") {
  Rng rng(4);
  ParamStore<double> store;
  UncertaintyP<double> p = make_uncertainty(store, "u", 4, 1, 10, 10, rng);
  Md f_v = random_mat(6, 4, rng);
  Md f_e = random_mat(3, 4, rng);
  std::vector<int> pos_q{0, 1, 2, 3, 4, 5}, pos_kv{0, 1, 2};
  Tape<double> tape;
  GradSink<double> sink(store.size());
  Ctx<double> ctx{tape, store, &sink};
  std::vector<Val<double>> attn;
  GaussianTokens<double> g = perceive_uncertainty(ctx, constant(tape, f_v), constant(tape, f_e),
                                                  pos_q, pos_kv, p, 10.0, &attn);
  CHECK(g.mu.rows() == 6);         // |out| = |F_v|, never a function of |F_e|
  CHECK(g.log_var.rows() == 6);
  CHECK(g.mu.cols() == 4);
  for (const auto& head : attn)
    for (Eigen::Index r = 0; r < head.rows(); ++r)
      CHECK(head.m().row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));

  // empty key/value set is a degenerate-input error
  Md empty(0, 4);
  CHECK_THROWS_AS(perceive_uncertainty(ctx, constant(tape, f_v), constant(tape, empty), pos_q,
                                       std::vector<int>{}, p, 10.0),
                  NumericError);
}

TEST_CASE("zero-initialized variance head pins log_var at its bias") {
  Rng rng(5);
  ParamStore<double> store;
  UncertaintyP<double> p = make_uncertainty(store, "u", 4, 1, 8, 8, rng);
  store.value(p.var_head.fc1.w).setZero();
  store.value(p.var_head.fc1.b).setZero();
  store.value(p.var_head.fc2.w).setZero();
  store.value(p.var_head.fc2.b).setConstant(-1.25);

  Md f_v = random_mat(5, 4, rng);
  std::vector<int> pos{0, 1, 2, 3, 4};
  Tape<double> tape;
  GradSink<double> sink(store.size());
  Ctx<double> ctx{tape, store, &sink};
  GaussianTokens<double> g =
      perceive_uncertainty(ctx, constant(tape, f_v), constant(tape, f_v), pos, pos, p, 10.0);
  for (Eigen::Index i = 0; i < g.log_var.m().size(); ++i) CHECK(g.log_var.m()(i) == -1.25);
}

TEST_CASE("modal perception equals cross perception fed the same tokens") {
  // mdup(F_v) is architecturally cmdup(F_v, F_v); with shared weights the
  // outputs coincide
  Rng rng(6);
  ParamStore<double> store;
  UncertaintyP<double> p = make_uncertainty(store, "u", 4, 2, 8, 8, rng);
  Md f_v = random_mat(7, 4, rng);
  std::vector<int> pos{0, 1, 2, 3, 4, 5, 6};
  Tape<double> tape;
  GradSink<double> sink(store.size());
  Ctx<double> ctx{tape, store, &sink};
  GaussianTokens<double> as_modal =
      perceive_uncertainty(ctx, constant(tape, f_v), constant(tape, f_v), pos, pos, p, 10.0);
  GaussianTokens<double> as_cross =
      perceive_uncertainty(ctx, constant(tape, f_v), constant(tape, f_v), pos, pos, p, 10.0);
  CHECK((as_modal.mu.m() - as_cross.mu.m()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross perception mu matches an independent recomputation at d=4") {
  Rng rng(7);
  ParamStore<double> store;
  UncertaintyP<double> p = make_uncertainty(store, "u", 4, 1, 8, 8, rng);
  // zero the positional tables so the oracle works on raw inputs
  store.value(p.pos_q).setZero();
  store.value(p.pos_kv).setZero();
  set_identity_projections(store, p.attn);

  Md f_v = random_mat(4, 4, rng);
  Md f_e = random_mat(5, 4, rng);
  std::vector<int> pos_q{0, 1, 2, 3}, pos_kv{0, 1, 2, 3, 4};
  Tape<double> tape;
  GradSink<double> sink(store.size());
  Ctx<double> ctx{tape, store, &sink};
  GaussianTokens<double> g = perceive_uncertainty(ctx, constant(tape, f_v), constant(tape, f_e),
                                                  pos_q, pos_kv, p, 10.0);

  // oracle: attention then the two-layer perceptron, straight Eigen
  Md scores = f_v * f_e.transpose() / 2.0;
  Md probs(4, 5);
  for (int r = 0; r < 4; ++r) {
    auto row = (scores.row(r).array() - scores.row(r).maxCoeff()).exp();
    probs.row(r) = row / row.sum();
  }
  Md att = probs * f_e;
  auto gelu_ref = [](double x) { return 0.5 * x * (1 + std::erf(x / std::sqrt(2.0))); };
  Md h1 = att * store.value(p.mu_head.fc1.w);
  h1.rowwise() += store.value(p.mu_head.fc1.b).row(0);
  h1 = h1.unaryExpr(gelu_ref);
  Md mu_expect = h1 * store.value(p.mu_head.fc2.w);
  mu_expect.rowwise() += store.value(p.mu_head.fc2.b).row(0);
  CHECK((g.mu.m() - mu_expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("reparameterize: fixed eps = 0 returns mu, clamped variance ~ mu") {
  Rng rng(8);
  ParamStore<double> store;
  Tape<double> tape;
  GradSink<double> sink(0);
  Ctx<double> ctx{tape, store, &sink};
  Md mu = random_mat(3, 4, rng);
  GaussianTokens<double> g = make_gaussian(tape, mu, Md(Md::Zero(3, 4)));
  Val<double> s = reparameterize_with(ctx, g, Md(Md::Zero(3, 4)));
  CHECK((s.m() - mu).cwiseAbs().maxCoeff() == 0.0);

  // sigma -> 0 surrogate through the clamp: samples collapse onto mu
  GaussianTokens<double> tight = make_gaussian(tape, mu, Md(Md::Constant(3, 4, -10.0)));
  Rng noise(9);
  Val<double> st = reparameterize(ctx, tight, &noise, true);
  CHECK((st.m() - mu).cwiseAbs().maxCoeff() < 1e-1);

  // inference mode returns mu bit-exactly
  Val<double> inf = reparameterize(ctx, tight, nullptr, false);
  CHECK(inf.id == tight.mu.id);
}

TEST_CASE("reparameterize sampling moments match (mu, sigma^2)") {
  ParamStore<double> store;
  Tape<double> tape;
  GradSink<double> sink(0);
  Ctx<double> ctx{tape, store, &sink};
  const int n = 20000;
  Md mu = Md::Constant(n, 1, 1.0);
  Md log_var = Md::Constant(n, 1, std::log(4.0));  // sigma = 2
  GaussianTokens<double> g = make_gaussian(tape, mu, log_var);
  Rng noise(10);
  Val<double> s = reparameterize(ctx, g, &noise, true);
  const double mean = s.m().mean();
  const double var = (s.m().array() - mean).square().sum() / (n - 1);
  CHECK(std::abs(mean - 1.0) < 0.05);
  CHECK(std::abs(var - 4.0) < 0.3);
}

TEST_CASE("kl: zero at the standard normal, 0.5 per dimension at mu=1") {
  ParamStore<double> store;
  Tape<double> tape;
  GradSink<double> sink(0);
  GaussianTokens<double> std_normal = make_gaussian(tape, Md(Md::Zero(3, 5)), Md(Md::Zero(3, 5)));
  CHECK(std::abs(kl_to_standard_normal(std_normal).scalar()) < 1e-12);

  GaussianTokens<double> shifted = make_gaussian(tape, Md(Md::Ones(2, 4)), Md(Md::Zero(2, 4)));
  CHECK(kl_to_standard_normal(shifted).scalar() == doctest::Approx(0.5).epsilon(1e-12));

  Md bad = Md::Ones(1, 1);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  GaussianTokens<double> nang = make_gaussian(tape, bad, Md::Zero(1, 1));
  CHECK_THROWS_AS(kl_to_standard_normal(nang), NumericError);
}

TEST_CASE("kl matches numeric quadrature within 1e-6 over random pairs") {
  Rng rng(11);
  ParamStore<double> store;
  Tape<double> tape;
  for (int i = 0; i < 30; ++i) {
    const double mu = rng.uniform(-2.5, 2.5);
    const double sigma = rng.uniform(0.3, 3.0);
    GaussianTokens<double> g = make_gaussian(tape, Md(Md::Constant(1, 1, mu)),
                                             Md(Md::Constant(1, 1, 2 * std::log(sigma))));
    const double analytic = kl_to_standard_normal(g).scalar();
    const double numeric = kl_quadrature(mu, sigma);
    CHECK(std::abs(analytic - numeric) < 1e-6);
    CHECK(analytic >= 0.0);
  }
}

TEST_CASE("fusion: query-length contract and single-token attention") {
  Rng rng(12);
  ParamStore<double> store;
  FusionP<double> p = make_fusion(store, "fusion", 4, 2, rng);
  Md sv = random_mat(6, 4, rng);
  Md sm = random_mat(1, 4, rng);
  Tape<double> tape;
  GradSink<double> sink(store.size());
  Ctx<double> ctx{tape, store, &sink};
  std::vector<Val<double>> attn;
  Val<double> fused = fuse_modalities(ctx, constant(tape, sv), constant(tape, sm), p, &attn);
  CHECK(fused.rows() == 6);
  CHECK(fused.cols() == 4);
  for (const auto& head : attn)
    for (Eigen::Index r = 0; r < head.rows(); ++r) CHECK(head.m()(r, 0) == 1.0);
}

TEST_CASE("fusion output matches an independent small-matrix recomputation") {
  Rng rng(13);
  ParamStore<double> store;
  FusionP<double> p = make_fusion(store, "fusion", 4, 1, rng);
  set_identity_projections(store, p.attn);
  Md sv = random_mat(3, 4, rng);
  Md sm = random_mat(4, 4, rng);
  Tape<double> tape;
  GradSink<double> sink(store.size());
  Ctx<double> ctx{tape, store, &sink};
  Val<double> fused = fuse_modalities(ctx, constant(tape, sv), constant(tape, sm), p);

  // oracle in plain Eigen: attention + residual + mlp + residual + layernorm
  Md scores = sv * sm.transpose() / 2.0;
  Md probs(3, 4);
  for (int r = 0; r < 3; ++r) {
    auto row = (scores.row(r).array() - scores.row(r).maxCoeff()).exp();
    probs.row(r) = row / row.sum();
  }
  Md x1 = sv + probs * sm;
  auto gelu_ref = [](double x) { return 0.5 * x * (1 + std::erf(x / std::sqrt(2.0))); };
  Md h = x1 * store.value(p.mlp.fc1.w);
  h.rowwise() += store.value(p.mlp.fc1.b).row(0);
  h = h.unaryExpr(gelu_ref);
  Md mlp_out = h * store.value(p.mlp.fc2.w);
  mlp_out.rowwise() += store.value(p.mlp.fc2.b).row(0);
  Md x2 = x1 + mlp_out;
  Md expect(3, 4);
  for (int r = 0; r < 3; ++r) {
    const double mean = x2.row(r).mean();
    Eigen::RowVector4d cent = x2.row(r).array() - mean;
    const double var = cent.squaredNorm() / 4.0;
    expect.row(r) = cent / std::sqrt(var + 1e-5);
  }
  CHECK((fused.m() - expect).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gradients of kl + fused-output-sum match finite differences at d=4") {
  Rng rng(14);
  ParamStore<double> store;
  UncertaintyP<double> cross = make_uncertainty(store, "cross", 4, 1, 6, 6, rng);
  FusionP<double> fusion = make_fusion(store, "fusion", 4, 1, rng);
  Md f_v = random_mat(4, 4, rng, 0.7);
  Md f_e = random_mat(4, 4, rng, 0.7);
  Md mu_v = random_mat(4, 4, rng, 0.7);  // stand-in for the modal sample
  Md eps = random_mat(4, 4, rng);
  std::vector<int> pos{0, 1, 2, 3};

  auto forward = [&]() -> std::pair<double, std::vector<Md>> {
    Tape<double> tape;
    GradSink<double> sink(store.size());
    Ctx<double> ctx{tape, store, &sink};
    GaussianTokens<double> g = perceive_uncertainty(ctx, constant(tape, f_v),
                                                    constant(tape, f_e), pos, pos, cross, 10.0);
    Val<double> s_m = reparameterize_with(ctx, g, Md(eps));
    Val<double> fused = fuse_modalities(ctx, constant(tape, mu_v), s_m, fusion);
    Val<double> loss = add(kl_to_standard_normal(g), sum_all(fused));
    tape.backward(loss.id);
    return {loss.scalar(), sink.g};
  };

  const auto [base_loss, analytic] = forward();
  (void)base_loss;
  const double h = 1e-6;
  Rng pick(15);
  int ok = 0, total = 0;
  for (int param : {cross.attn.q.w, cross.attn.o.w, cross.mu_head.fc1.w, cross.var_head.fc2.w,
                    cross.var_head.fc2.b, fusion.attn.k.w, fusion.mlp.fc1.w, fusion.ln.gain}) {
    Md& w = store.value(param);
    for (int trial = 0; trial < 6; ++trial) {
      const Eigen::Index i = static_cast<Eigen::Index>(pick.uniform_int(w.size()));
      const double orig = w(i);
      w(i) = orig + h;
      const double fp = forward().first;
      w(i) = orig - h;
      const double fm = forward().first;
      w(i) = orig;
      const double fd = (fp - fm) / (2 * h);
      const double a = analytic[static_cast<size_t>(param)].size() > 0
                           ? analytic[static_cast<size_t>(param)](i)
                           : 0.0;
      const double err = std::abs(fd - a) / std::max({1.0, std::abs(fd), std::abs(a)});
      ++total;
      if (err <= 1e-3) ++ok;
    }
  }
  CHECK(ok == total);
}
