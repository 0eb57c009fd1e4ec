#pragma once

#include <map>
#include <string>

#include "uret/tensor.hpp"

namespace uret {

// Named parameter registry. Parameter values must stay at stable addresses
// while tapes reference them, so the store is append-only.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Mat<T> value;
  };

  int add(const std::string& name, Mat<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index_[name] = static_cast<int>(entries_.size());
    entries_.push_back(Entry{name, std::move(value)});
    return static_cast<int>(entries_.size()) - 1;
  }

  int size() const { return static_cast<int>(entries_.size()); }
  const Entry& entry(int i) const { return entries_[static_cast<size_t>(i)]; }
  Mat<T>& value(int i) { return entries_[static_cast<size_t>(i)].value; }
  const Mat<T>& value(int i) const { return entries_[static_cast<size_t>(i)].value; }
  const std::string& name(int i) const { return entries_[static_cast<size_t>(i)].name; }
  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }
  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, int> index_;
};

// Per-sample gradient buffers, one slot per parameter. Reduced in sample
// order after a batch so results do not depend on thread scheduling.
template <typename T>
struct GradSink {
  std::vector<Mat<T>> g;

  explicit GradSink(int n_params = 0) : g(static_cast<size_t>(n_params)) {}

  void reset(int n_params) {
    g.assign(static_cast<size_t>(n_params), Mat<T>());
  }

  void add_into(std::vector<Mat<T>>& total) const {
    for (size_t i = 0; i < g.size(); ++i) {
      if (g[i].size() == 0) continue;
      if (total[i].size() == 0) {
        total[i] = g[i];
      } else {
        total[i] += g[i];
      }
    }
  }
};

// Evaluation context: a tape plus the store it draws parameters from and an
// optional gradient sink (null for frozen/inference evaluation).
template <typename T>
struct Ctx {
  Tape<T>& tape;
  ParamStore<T>& store;
  GradSink<T>* sink = nullptr;

  Val<T> p(int param_id) {
    Mat<T>* slot = nullptr;
    if (sink != nullptr) slot = &sink->g[static_cast<size_t>(param_id)];
    return leaf(tape, store.value(param_id), slot);
  }
  Val<T> c(Mat<T> v) { return constant(tape, std::move(v)); }
};

// Truncated normal: resample draws outside two standard deviations.
template <typename T>
Mat<T> trunc_normal(int rows, int cols, T std_dev, Rng& rng) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    m(i) = static_cast<T>(z) * std_dev;
  }
  return m;
}

template <typename T>
struct LinearP {
  int w = -1;
  int b = -1;
};

template <typename T>
LinearP<T> make_linear(ParamStore<T>& store, const std::string& name, int in_dim, int out_dim,
                       Rng& rng, T init_std = static_cast<T>(0.02)) {
  LinearP<T> p;
  p.w = store.add(name + ".weight", trunc_normal<T>(in_dim, out_dim, init_std, rng));
  p.b = store.add(name + ".bias", Mat<T>::Zero(1, out_dim));
  return p;
}

template <typename T>
Val<T> linear(Ctx<T>& ctx, Val<T> x, const LinearP<T>& p) {
  return add_rowvec(matmul(x, ctx.p(p.w)), ctx.p(p.b));
}

template <typename T>
struct LayerNormP {
  int gain = -1;
  int bias = -1;
};

template <typename T>
LayerNormP<T> make_layer_norm(ParamStore<T>& store, const std::string& name, int dim) {
  LayerNormP<T> p;
  p.gain = store.add(name + ".gain", Mat<T>::Ones(1, dim));
  p.bias = store.add(name + ".bias", Mat<T>::Zero(1, dim));
  return p;
}

template <typename T>
Val<T> layer_norm(Ctx<T>& ctx, Val<T> x, const LayerNormP<T>& p) {
  return layer_norm(x, ctx.p(p.gain), ctx.p(p.bias));
}

template <typename T>
struct MlpP {
  LinearP<T> fc1;
  LinearP<T> fc2;
};

template <typename T>
MlpP<T> make_mlp(ParamStore<T>& store, const std::string& name, int dim, int hidden, Rng& rng) {
  MlpP<T> p;
  p.fc1 = make_linear(store, name + ".fc1", dim, hidden, rng);
  p.fc2 = make_linear(store, name + ".fc2", hidden, dim, rng);
  return p;
}

template <typename T>
Val<T> mlp(Ctx<T>& ctx, Val<T> x, const MlpP<T>& p) {
  return linear(ctx, gelu(linear(ctx, x, p.fc1)), p.fc2);
}

template <typename T>
struct MhaP {
  LinearP<T> q, k, v, o;
  int heads = 1;
  int dim = 0;
};

template <typename T>
MhaP<T> make_mha(ParamStore<T>& store, const std::string& name, int dim, int heads, Rng& rng) {
  if (dim % heads != 0) throw ConfigError("attention dim " + std::to_string(dim) +
                                          " not divisible by heads " + std::to_string(heads));
  MhaP<T> p;
  p.q = make_linear(store, name + ".q", dim, dim, rng);
  p.k = make_linear(store, name + ".k", dim, dim, rng);
  p.v = make_linear(store, name + ".v", dim, dim, rng);
  p.o = make_linear(store, name + ".o", dim, dim, rng);
  p.heads = heads;
  p.dim = dim;
  return p;
}

template <typename T>
struct MhaOut {
  Val<T> out;
  std::vector<Val<T>> attn;  // one (n_q x n_kv) probability matrix per head
};

// Multi-head scaled dot-product attention. Heads are column slices of the
// full-width projections; per-head scores use 1/sqrt(head_dim).
template <typename T>
MhaOut<T> mha(Ctx<T>& ctx, Val<T> q_in, Val<T> k_in, Val<T> v_in, const MhaP<T>& p) {
  const int hd = p.dim / p.heads;
  Val<T> q = linear(ctx, q_in, p.q);
  Val<T> k = linear(ctx, k_in, p.k);
  Val<T> v = linear(ctx, v_in, p.v);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<Val<T>> heads_out;
  std::vector<Val<T>> attn;
  heads_out.reserve(static_cast<size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    Val<T> qh = cols(q, h * hd, hd);
    Val<T> kh = cols(k, h * hd, hd);
    Val<T> vh = cols(v, h * hd, hd);
    Val<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    Val<T> a = softmax(scores);
    attn.push_back(a);
    heads_out.push_back(matmul(a, vh));
  }
  Val<T> merged = p.heads == 1 ? heads_out[0] : concat_cols(heads_out);
  return MhaOut<T>{linear(ctx, merged, p.o), std::move(attn)};
}

}  // namespace uret
