#pragma once

#include "uret/nn.hpp"

namespace uret {

// Per-token Gaussian latent: mean and log-variance, same shape.
template <typename T>
struct GaussianTokens {
  Val<T> mu;
  Val<T> log_var;
};

// Plain multi-head cross-attention: query from one token set, key/value from
// another. Positional encodings, when wanted, are added by the caller before
// projection.
template <typename T>
MhaOut<T> cross_attention(Ctx<T>& ctx, Val<T> query_tokens, Val<T> kv_tokens, const MhaP<T>& p) {
  return mha(ctx, query_tokens, kv_tokens, kv_tokens, p);
}

// Uncertainty perception head: attention over the inputs followed by two
// separate two-layer perceptrons predicting mu and log sigma^2. The
// cross-modal variant queries with RGB tokens over event keys/values; the
// modal variant self-attends over RGB tokens only. Both share this structure
// with separate parameters.
template <typename T>
struct UncertaintyP {
  MhaP<T> attn;
  MlpP<T> mu_head;
  MlpP<T> var_head;
  int pos_q = -1;   // learned positional table for query tokens (full count)
  int pos_kv = -1;  // and for key/value tokens
};

template <typename T>
UncertaintyP<T> make_uncertainty(ParamStore<T>& store, const std::string& name, int dim, int heads,
                                 int full_q_tokens, int full_kv_tokens, Rng& rng) {
  UncertaintyP<T> p;
  p.attn = make_mha(store, name + ".attn", dim, heads, rng);
  p.mu_head = make_mlp(store, name + ".mu", dim, 2 * dim, rng);
  p.var_head = make_mlp(store, name + ".var", dim, 2 * dim, rng);
  p.pos_q = store.add(name + ".pos_q", trunc_normal<T>(full_q_tokens, dim, T(0.02), rng));
  p.pos_kv = store.add(name + ".pos_kv", trunc_normal<T>(full_kv_tokens, dim, T(0.02), rng));
  return p;
}

// q_pos / kv_pos select live rows of the positional tables (token positions
// survive elimination bookkeeping). Output token count equals |query|.
template <typename T>
GaussianTokens<T> perceive_uncertainty(Ctx<T>& ctx, Val<T> query_tokens, Val<T> kv_tokens,
                                       const std::vector<int>& q_pos, const std::vector<int>& kv_pos,
                                       const UncertaintyP<T>& p, double logvar_clamp,
                                       std::vector<Val<T>>* attn_out = nullptr) {
  if (kv_tokens.rows() == 0)
    throw NumericError("uncertainty perception: empty key/value token set");
  Val<T> q = add(query_tokens, gather_rows(ctx.p(p.pos_q), q_pos));
  Val<T> kv = add(kv_tokens, gather_rows(ctx.p(p.pos_kv), kv_pos));
  MhaOut<T> att = cross_attention(ctx, q, kv, p.attn);
  if (attn_out != nullptr) *attn_out = att.attn;
  GaussianTokens<T> g;
  g.mu = mlp(ctx, att.out, p.mu_head);
  g.log_var = clamp(mlp(ctx, att.out, p.var_head), static_cast<T>(-logvar_clamp),
                    static_cast<T>(logvar_clamp));
  return g;
}

// s = mu + eps * sigma with sigma = exp(log_var / 2); eps enters the graph as
// a constant, so no gradient ever flows through it.
template <typename T>
Val<T> reparameterize_with(Ctx<T>& ctx, const GaussianTokens<T>& g, Mat<T> eps) {
  Val<T> sigma = exp_v(scale(g.log_var, static_cast<T>(0.5)));
  return add(g.mu, mul(ctx.c(std::move(eps)), sigma));
}

// Fresh eps per call in training; inference returns mu.
template <typename T>
Val<T> reparameterize(Ctx<T>& ctx, const GaussianTokens<T>& g, Rng* noise, bool training) {
  if (!training) return g.mu;
  Mat<T> eps(g.mu.rows(), g.mu.cols());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = static_cast<T>(noise->normal());
  return reparameterize_with(ctx, g, std::move(eps));
}

// Mean over tokens and dimensions of -1/2 (1 + log sigma^2 - mu^2 - sigma^2),
// the divergence from the standard normal. Non-negative; zero at mu=0,
// sigma^2=1.
template <typename T>
Val<T> kl_to_standard_normal(const GaussianTokens<T>& g) {
  Tape<T>& tape = *g.mu.tape;
  if (!g.mu.m().allFinite() || !g.log_var.m().allFinite())
    throw NumericError("kl regularizer: non-finite inputs");
  Val<T> sigma_sq = exp_v(g.log_var);
  Val<T> one = constant(tape, Mat<T>(Mat<T>::Ones(g.mu.rows(), g.mu.cols())));
  Val<T> term = sub(add(square(g.mu), sigma_sq), add(one, g.log_var));
  return scale(mean_all(term), static_cast<T>(0.5));
}

// Modality fusion: cross-attention with the RGB-branch sample as query and
// the cross-modal sample as key/value, then a perceptron; residual paths and
// a final layer norm keep it trainable from scratch.
template <typename T>
struct FusionP {
  MhaP<T> attn;
  MlpP<T> mlp;
  LayerNormP<T> ln;
};

template <typename T>
FusionP<T> make_fusion(ParamStore<T>& store, const std::string& name, int dim, int heads,
                       Rng& rng) {
  FusionP<T> p;
  p.attn = make_mha(store, name + ".attn", dim, heads, rng);
  p.mlp = make_mlp(store, name + ".mlp", dim, 2 * dim, rng);
  p.ln = make_layer_norm(store, name + ".ln", dim);
  return p;
}

template <typename T>
Val<T> fuse_modalities(Ctx<T>& ctx, Val<T> sample_v, Val<T> sample_m, const FusionP<T>& p,
                       std::vector<Val<T>>* attn_out = nullptr) {
  if (sample_v.cols() != sample_m.cols())
    throw ConfigError("fuse_modalities: dimension mismatch");
  MhaOut<T> att = cross_attention(ctx, sample_v, sample_m, p.attn);
  if (attn_out != nullptr) *attn_out = att.attn;
  Val<T> x = add(sample_v, att.out);
  x = add(x, mlp(ctx, x, p.mlp));
  return layer_norm(ctx, x, p.ln);
}

}  // namespace uret
