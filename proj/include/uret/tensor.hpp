#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <unordered_map>
#include <vector>

#include "uret/common.hpp"

namespace uret {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// Dynamic reverse-mode tape over dense matrices. Nodes are appended in
// evaluation order, which is already a topological order, so backward() is a
// single reverse sweep. Values stay alive for the lifetime of the tape;
// gradients are freed as soon as they have been propagated.
template <typename T>
class Tape {
 public:
  struct Node {
    Mat<T> val;
    Mat<T> grad;  // lazily allocated during backward
    std::function<void(Tape&, const Mat<T>&)> back;
    bool needs_grad = false;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const Mat<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }

  int constant(Mat<T> v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, false});
    return size() - 1;
  }

  // Parameter leaf. Gradients accumulate into *grad_sink (may be null for
  // frozen evaluation). Cached per value pointer so each parameter gets one
  // node per tape.
  int leaf(const Mat<T>& value, Mat<T>* grad_sink) {
    auto it = leaf_cache_.find(&value);
    if (it != leaf_cache_.end()) return it->second;
    Node n;
    n.val = value;
    n.needs_grad = grad_enabled_ && grad_sink != nullptr;
    if (n.needs_grad) {
      n.back = [grad_sink](Tape&, const Mat<T>& g) {
        if (grad_sink->size() == 0) {
          *grad_sink = g;
        } else {
          *grad_sink += g;
        }
      };
    }
    nodes_.push_back(std::move(n));
    leaf_cache_.emplace(&value, size() - 1);
    return size() - 1;
  }

  int make(Mat<T> v, bool needs_grad, std::function<void(Tape&, const Mat<T>&)> back) {
    if (!grad_enabled_) needs_grad = false;
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  bool wants_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  void accum(int id, const Mat<T>& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Backpropagate from a scalar (1x1) node.
  void backward(int loss_id) {
    Node& loss = nodes_[static_cast<size_t>(loss_id)];
    if (loss.val.rows() != 1 || loss.val.cols() != 1)
      throw std::invalid_argument("backward: loss node must be 1x1");
    loss.grad = Mat<T>::Ones(1, 1);
    for (int i = loss_id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.back) n.back(*this, n.grad);
      n.grad.resize(0, 0);
    }
  }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> leaf_cache_;
  bool grad_enabled_ = true;
};

// Lightweight handle; ops below are free functions building tape nodes.
template <typename T>
struct Val {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Mat<T>& m() const { return tape->val(id); }
  Eigen::Index rows() const { return m().rows(); }
  Eigen::Index cols() const { return m().cols(); }
  T scalar() const { return m()(0, 0); }
};

template <typename T>
Val<T> make_val(Tape<T>& tape, int id) {
  return Val<T>{&tape, id};
}

template <typename T>
Val<T> constant(Tape<T>& tape, Mat<T> v) {
  return make_val(tape, tape.constant(std::move(v)));
}

template <typename T>
Val<T> scalar_const(Tape<T>& tape, T v) {
  Mat<T> m(1, 1);
  m(0, 0) = v;
  return constant(tape, std::move(m));
}

template <typename T>
Val<T> leaf(Tape<T>& tape, const Mat<T>& value, Mat<T>* grad_sink) {
  return make_val(tape, tape.leaf(value, grad_sink));
}

template <typename T>
Val<T> add(Val<T> a, Val<T> b) {
  Tape<T>& t = *a.tape;
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  int ia = a.id, ib = b.id;
  return make_val(t, t.make(a.m() + b.m(), ng, [ia, ib](Tape<T>& tp, const Mat<T>& g) {
    tp.accum(ia, g);
    tp.accum(ib, g);
  }));
}

template <typename T>
Val<T> sub(Val<T> a, Val<T> b) {
  Tape<T>& t = *a.tape;
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  int ia = a.id, ib = b.id;
  return make_val(t, t.make(a.m() - b.m(), ng, [ia, ib](Tape<T>& tp, const Mat<T>& g) {
    tp.accum(ia, g);
    tp.accum(ib, Mat<T>(-g));
  }));
}

// Elementwise (Hadamard) product.
template <typename T>
Val<T> mul(Val<T> a, Val<T> b) {
  Tape<T>& t = *a.tape;
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  int ia = a.id, ib = b.id;
  return make_val(t, t.make(a.m().cwiseProduct(b.m()), ng, [ia, ib](Tape<T>& tp, const Mat<T>& g) {
    tp.accum(ia, g.cwiseProduct(tp.val(ib)));
    tp.accum(ib, g.cwiseProduct(tp.val(ia)));
  }));
}

template <typename T>
Val<T> divide(Val<T> a, Val<T> b) {
  Tape<T>& t = *a.tape;
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  int ia = a.id, ib = b.id;
  return make_val(t, t.make(a.m().cwiseQuotient(b.m()), ng, [ia, ib](Tape<T>& tp, const Mat<T>& g) {
    const Mat<T>& bv = tp.val(ib);
    tp.accum(ia, g.cwiseQuotient(bv));
    Mat<T> gb = -g.cwiseProduct(tp.val(ia)).cwiseQuotient(bv.cwiseProduct(bv));
    tp.accum(ib, gb);
  }));
}

template <typename T>
Val<T> scale(Val<T> a, T c) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  return make_val(t, t.make(Mat<T>(a.m() * c), t.wants_grad(ia), [ia, c](Tape<T>& tp, const Mat<T>& g) {
    tp.accum(ia, Mat<T>(g * c));
  }));
}

template <typename T>
Val<T> add_scalar(Val<T> a, T c) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  return make_val(t, t.make(Mat<T>(a.m().array() + c), t.wants_grad(ia),
                            [ia](Tape<T>& tp, const Mat<T>& g) { tp.accum(ia, g); }));
}

template <typename T>
Val<T> matmul(Val<T> a, Val<T> b) {
  Tape<T>& t = *a.tape;
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  int ia = a.id, ib = b.id;
  Mat<T> v = a.m() * b.m();
  return make_val(t, t.make(std::move(v), ng, [ia, ib](Tape<T>& tp, const Mat<T>& g) {
    tp.accum(ia, Mat<T>(g * tp.val(ib).transpose()));
    tp.accum(ib, Mat<T>(tp.val(ia).transpose() * g));
  }));
}

template <typename T>
Val<T> transpose(Val<T> a) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  return make_val(t, t.make(Mat<T>(a.m().transpose()), t.wants_grad(ia),
                            [ia](Tape<T>& tp, const Mat<T>& g) { tp.accum(ia, Mat<T>(g.transpose())); }));
}

template <typename T>
Val<T> rows(Val<T> a, int r0, int n) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  const Eigen::Index nr = a.rows(), nc = a.cols();
  if (r0 < 0 || n < 0 || r0 + n > nr) throw std::invalid_argument("rows: slice out of range");
  return make_val(t, t.make(Mat<T>(a.m().middleRows(r0, n)), t.wants_grad(ia),
                            [ia, r0, n, nr, nc](Tape<T>& tp, const Mat<T>& g) {
    Mat<T> ga = Mat<T>::Zero(nr, nc);
    ga.middleRows(r0, n) = g;
    tp.accum(ia, ga);
  }));
}

template <typename T>
Val<T> cols(Val<T> a, int c0, int n) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  const Eigen::Index nr = a.rows(), nc = a.cols();
  if (c0 < 0 || n < 0 || c0 + n > nc) throw std::invalid_argument("cols: slice out of range");
  return make_val(t, t.make(Mat<T>(a.m().middleCols(c0, n)), t.wants_grad(ia),
                            [ia, c0, n, nr, nc](Tape<T>& tp, const Mat<T>& g) {
    Mat<T> ga = Mat<T>::Zero(nr, nc);
    ga.middleCols(c0, n) = g;
    tp.accum(ia, ga);
  }));
}

template <typename T>
Val<T> concat_rows(const std::vector<Val<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  Tape<T>& t = *parts[0].tape;
  Eigen::Index total = 0;
  const Eigen::Index c = parts[0].cols();
  bool ng = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> sizes;
  for (const auto& p : parts) {
    if (p.cols() != c) throw std::invalid_argument("concat_rows: column mismatch");
    total += p.rows();
    ng = ng || t.wants_grad(p.id);
    ids.push_back(p.id);
    sizes.push_back(p.rows());
  }
  Mat<T> v(total, c);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.m();
    r += p.rows();
  }
  return make_val(t, t.make(std::move(v), ng, [ids, sizes](Tape<T>& tp, const Mat<T>& g) {
    Eigen::Index r = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      tp.accum(ids[i], Mat<T>(g.middleRows(r, sizes[i])));
      r += sizes[i];
    }
  }));
}

template <typename T>
Val<T> concat_cols(const std::vector<Val<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  Tape<T>& t = *parts[0].tape;
  Eigen::Index total = 0;
  const Eigen::Index r = parts[0].rows();
  bool ng = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> sizes;
  for (const auto& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
    total += p.cols();
    ng = ng || t.wants_grad(p.id);
    ids.push_back(p.id);
    sizes.push_back(p.cols());
  }
  Mat<T> v(r, total);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.m();
    c += p.cols();
  }
  return make_val(t, t.make(std::move(v), ng, [ids, sizes](Tape<T>& tp, const Mat<T>& g) {
    Eigen::Index c = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      tp.accum(ids[i], Mat<T>(g.middleCols(c, sizes[i])));
      c += sizes[i];
    }
  }));
}

template <typename T>
Val<T> gather_rows(Val<T> a, std::vector<int> idx) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  const Eigen::Index nr = a.rows(), nc = a.cols();
  Mat<T> v(static_cast<Eigen::Index>(idx.size()), nc);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= nr) throw std::invalid_argument("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.m().row(idx[i]);
  }
  return make_val(t, t.make(std::move(v), t.wants_grad(ia),
                            [ia, idx = std::move(idx), nr, nc](Tape<T>& tp, const Mat<T>& g) {
    Mat<T> ga = Mat<T>::Zero(nr, nc);
    for (size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accum(ia, ga);
  }));
}

// Place row i of `a` at row idx[i] of a zero matrix with `out_rows` rows.
template <typename T>
Val<T> scatter_rows(Val<T> a, std::vector<int> idx, int out_rows) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  const Eigen::Index nc = a.cols();
  if (static_cast<Eigen::Index>(idx.size()) != a.rows())
    throw std::invalid_argument("scatter_rows: index count mismatch");
  Mat<T> v = Mat<T>::Zero(out_rows, nc);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= out_rows) throw std::invalid_argument("scatter_rows: index out of range");
    v.row(idx[i]) = a.m().row(static_cast<Eigen::Index>(i));
  }
  return make_val(t, t.make(std::move(v), t.wants_grad(ia),
                            [ia, idx = std::move(idx), nc](Tape<T>& tp, const Mat<T>& g) {
    Mat<T> ga(static_cast<Eigen::Index>(idx.size()), nc);
    for (size_t i = 0; i < idx.size(); ++i) ga.row(static_cast<Eigen::Index>(i)) = g.row(idx[i]);
    tp.accum(ia, ga);
  }));
}

// Rows of `a` are row-major grid cells (h*w rows). Output row (y, x) takes
// input row (y+dy, x+dx), zero where the source falls outside the grid.
template <typename T>
Val<T> shift_grid(Val<T> a, int h, int w, int dy, int dx) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  const Eigen::Index nc = a.cols();
  if (a.rows() != static_cast<Eigen::Index>(h) * w) throw std::invalid_argument("shift_grid: bad grid");
  Mat<T> v = Mat<T>::Zero(a.rows(), nc);
  for (int y = 0; y < h; ++y) {
    const int sy = y + dy;
    if (sy < 0 || sy >= h) continue;
    for (int x = 0; x < w; ++x) {
      const int sx = x + dx;
      if (sx < 0 || sx >= w) continue;
      v.row(y * w + x) = a.m().row(sy * w + sx);
    }
  }
  return make_val(t, t.make(std::move(v), t.wants_grad(ia),
                            [ia, h, w, dy, dx, nc](Tape<T>& tp, const Mat<T>& g) {
    Mat<T> ga = Mat<T>::Zero(static_cast<Eigen::Index>(h) * w, nc);
    for (int y = 0; y < h; ++y) {
      const int sy = y + dy;
      if (sy < 0 || sy >= h) continue;
      for (int x = 0; x < w; ++x) {
        const int sx = x + dx;
        if (sx < 0 || sx >= w) continue;
        ga.row(sy * w + sx) += g.row(y * w + x);
      }
    }
    tp.accum(ia, ga);
  }));
}

// (h*w rows x c cols) pixel matrix -> (num_patches rows x p*p*c cols), patches
// in row-major order, pixels within a patch in row-major order, channels
// fastest.
template <typename T>
Val<T> patchify(Val<T> a, int h, int w, int p) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  const int c = static_cast<int>(a.cols());
  if (a.rows() != static_cast<Eigen::Index>(h) * w) throw std::invalid_argument("patchify: bad image");
  if (h % p != 0 || w % p != 0) throw ConfigError("patchify: side not divisible by patch size");
  const int gh = h / p, gw = w / p;
  Mat<T> v(static_cast<Eigen::Index>(gh) * gw, static_cast<Eigen::Index>(p) * p * c);
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      const int patch = py * gw + px;
      for (int iy = 0; iy < p; ++iy)
        for (int ix = 0; ix < p; ++ix) {
          const int pix = (py * p + iy) * w + (px * p + ix);
          v.block(patch, (iy * p + ix) * c, 1, c) = a.m().row(pix);
        }
    }
  return make_val(t, t.make(std::move(v), t.wants_grad(ia),
                            [ia, h, w, p, c](Tape<T>& tp, const Mat<T>& g) {
    const int gh = h / p, gw = w / p;
    Mat<T> ga(static_cast<Eigen::Index>(h) * w, c);
    for (int py = 0; py < gh; ++py)
      for (int px = 0; px < gw; ++px) {
        const int patch = py * gw + px;
        for (int iy = 0; iy < p; ++iy)
          for (int ix = 0; ix < p; ++ix) {
            const int pix = (py * p + iy) * w + (px * p + ix);
            ga.row(pix) = g.block(patch, (iy * p + ix) * c, 1, c);
          }
      }
    tp.accum(ia, ga);
  }));
}

// Broadcast-add a 1xC row vector to every row.
template <typename T>
Val<T> add_rowvec(Val<T> a, Val<T> b) {
  Tape<T>& t = *a.tape;
  if (b.rows() != 1 || b.cols() != a.cols()) throw std::invalid_argument("add_rowvec: shape mismatch");
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  int ia = a.id, ib = b.id;
  Mat<T> v = a.m();
  v.rowwise() += Eigen::RowVector<T, Eigen::Dynamic>(b.m().row(0));
  return make_val(t, t.make(std::move(v), ng, [ia, ib](Tape<T>& tp, const Mat<T>& g) {
    tp.accum(ia, g);
    tp.accum(ib, Mat<T>(g.colwise().sum()));
  }));
}

// Row-wise softmax; the backward reads the node's own output.
template <typename T>
Val<T> softmax(Val<T> a) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  Mat<T> v = a.m();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const T mx = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - mx).exp();
    v.row(r) /= v.row(r).sum();
  }
  const int self_id = t.size();
  return make_val(t, t.make(std::move(v), t.wants_grad(ia), [ia, self_id](Tape<T>& tp, const Mat<T>& g) {
    const Mat<T>& y = tp.val(self_id);
    Mat<T> gy = g.cwiseProduct(y);
    Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = gy.rowwise().sum();
    Mat<T> ga = gy - y.cwiseProduct(rowdot.replicate(1, y.cols()));
    tp.accum(ia, ga);
  }));
}

// Per-row layer normalization with learned gain and bias (both 1xC).
template <typename T>
Val<T> layer_norm(Val<T> x, Val<T> gain, Val<T> bias, T eps = static_cast<T>(1e-5)) {
  Tape<T>& t = *x.tape;
  const Eigen::Index nr = x.rows(), nc = x.cols();
  if (gain.rows() != 1 || gain.cols() != nc || bias.rows() != 1 || bias.cols() != nc)
    throw std::invalid_argument("layer_norm: gain/bias shape mismatch");
  Mat<T> xhat(nr, nc);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(nr);
  for (Eigen::Index r = 0; r < nr; ++r) {
    const T mean = x.m().row(r).mean();
    Eigen::RowVector<T, Eigen::Dynamic> cent = x.m().row(r).array() - mean;
    const T var = cent.squaredNorm() / static_cast<T>(nc);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = cent * is;
  }
  Mat<T> v = xhat;
  for (Eigen::Index r = 0; r < nr; ++r)
    v.row(r) = v.row(r).cwiseProduct(gain.m().row(0)) + bias.m().row(0);
  const bool ng = t.wants_grad(x.id) || t.wants_grad(gain.id) || t.wants_grad(bias.id);
  int ix = x.id, ig = gain.id, ib = bias.id;
  return make_val(t, t.make(std::move(v), ng,
                            [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std),
                             nc](Tape<T>& tp, const Mat<T>& g) {
    tp.accum(ib, Mat<T>(g.colwise().sum()));
    tp.accum(ig, Mat<T>(g.cwiseProduct(xhat).colwise().sum()));
    if (!tp.wants_grad(ix)) return;
    const Mat<T>& gv = tp.val(ig);
    Mat<T> dxhat = g;
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) dxhat.row(r) = dxhat.row(r).cwiseProduct(gv.row(0));
    Mat<T> gx(dxhat.rows(), nc);
    const T n = static_cast<T>(nc);
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
      const T s1 = dxhat.row(r).sum();
      const T s2 = dxhat.row(r).cwiseProduct(xhat.row(r)).sum();
      gx.row(r) = inv_std(r) * (dxhat.row(r).array() - s1 / n - xhat.row(r).array() * s2 / n);
    }
    tp.accum(ix, gx);
  }));
}

template <typename T>
Val<T> gelu(Val<T> a) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  Mat<T> v = a.m().unaryExpr([inv_sqrt2](T x) {
    return static_cast<T>(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  });
  return make_val(t, t.make(std::move(v), t.wants_grad(ia), [ia, inv_sqrt2](Tape<T>& tp, const Mat<T>& g) {
    const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
    Mat<T> d = tp.val(ia).unaryExpr([inv_sqrt2, inv_sqrt2pi](T x) {
      const T cdf = static_cast<T>(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(static_cast<T>(-0.5) * x * x);
      return cdf + x * pdf;
    });
    tp.accum(ia, Mat<T>(g.cwiseProduct(d)));
  }));
}

template <typename T>
Val<T> sigmoid(Val<T> a) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  Mat<T> v = a.m().unaryExpr([](T x) { return T(1) / (T(1) + std::exp(-x)); });
  const int self_id = t.size();
  return make_val(t, t.make(std::move(v), t.wants_grad(ia), [ia, self_id](Tape<T>& tp, const Mat<T>& g) {
    const Mat<T>& y = tp.val(self_id);
    Mat<T> ga = g.cwiseProduct(y.cwiseProduct(Mat<T>(Mat<T>::Ones(y.rows(), y.cols()) - y)));
    tp.accum(ia, ga);
  }));
}

template <typename T>
Val<T> exp_v(Val<T> a) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  Mat<T> v = a.m().array().exp();
  const int self_id = t.size();
  return make_val(t, t.make(std::move(v), t.wants_grad(ia), [ia, self_id](Tape<T>& tp, const Mat<T>& g) {
    tp.accum(ia, Mat<T>(g.cwiseProduct(tp.val(self_id))));
  }));
}

template <typename T>
Val<T> log_v(Val<T> a) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  Mat<T> v = a.m().array().log();
  return make_val(t, t.make(std::move(v), t.wants_grad(ia), [ia](Tape<T>& tp, const Mat<T>& g) {
    tp.accum(ia, Mat<T>(g.cwiseQuotient(tp.val(ia))));
  }));
}

// Clamp with zero gradient outside the open interval (lo, hi).
template <typename T>
Val<T> clamp(Val<T> a, T lo, T hi) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  Mat<T> v = a.m().unaryExpr([lo, hi](T x) { return std::min(hi, std::max(lo, x)); });
  return make_val(t, t.make(std::move(v), t.wants_grad(ia), [ia, lo, hi](Tape<T>& tp, const Mat<T>& g) {
    const Mat<T>& x = tp.val(ia);
    Mat<T> ga = g;
    for (Eigen::Index i = 0; i < ga.size(); ++i)
      if (x(i) <= lo || x(i) >= hi) ga(i) = T(0);
    tp.accum(ia, ga);
  }));
}

// Elementwise min/max; ties route the gradient to the first argument.
template <typename T>
Val<T> emin(Val<T> a, Val<T> b) {
  Tape<T>& t = *a.tape;
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  int ia = a.id, ib = b.id;
  return make_val(t, t.make(Mat<T>(a.m().cwiseMin(b.m())), ng, [ia, ib](Tape<T>& tp, const Mat<T>& g) {
    const Mat<T>&av = tp.val(ia), &bv = tp.val(ib);
    Mat<T> ga = Mat<T>::Zero(g.rows(), g.cols()), gb = ga;
    for (Eigen::Index i = 0; i < g.size(); ++i)
      (av(i) <= bv(i) ? ga(i) : gb(i)) = g(i);
    tp.accum(ia, ga);
    tp.accum(ib, gb);
  }));
}

template <typename T>
Val<T> emax(Val<T> a, Val<T> b) {
  Tape<T>& t = *a.tape;
  const bool ng = t.wants_grad(a.id) || t.wants_grad(b.id);
  int ia = a.id, ib = b.id;
  return make_val(t, t.make(Mat<T>(a.m().cwiseMax(b.m())), ng, [ia, ib](Tape<T>& tp, const Mat<T>& g) {
    const Mat<T>&av = tp.val(ia), &bv = tp.val(ib);
    Mat<T> ga = Mat<T>::Zero(g.rows(), g.cols()), gb = ga;
    for (Eigen::Index i = 0; i < g.size(); ++i)
      (av(i) >= bv(i) ? ga(i) : gb(i)) = g(i);
    tp.accum(ia, ga);
    tp.accum(ib, gb);
  }));
}

template <typename T>
Val<T> abs_v(Val<T> a) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  return make_val(t, t.make(Mat<T>(a.m().cwiseAbs()), t.wants_grad(ia), [ia](Tape<T>& tp, const Mat<T>& g) {
    const Mat<T>& x = tp.val(ia);
    Mat<T> ga = g;
    for (Eigen::Index i = 0; i < ga.size(); ++i)
      ga(i) *= (x(i) > T(0)) ? T(1) : (x(i) < T(0) ? T(-1) : T(0));
    tp.accum(ia, ga);
  }));
}

template <typename T>
Val<T> sum_all(Val<T> a) {
  Tape<T>& t = *a.tape;
  int ia = a.id;
  const Eigen::Index nr = a.rows(), nc = a.cols();
  Mat<T> v(1, 1);
  v(0, 0) = a.m().sum();
  return make_val(t, t.make(std::move(v), t.wants_grad(ia), [ia, nr, nc](Tape<T>& tp, const Mat<T>& g) {
    tp.accum(ia, Mat<T>(Mat<T>::Constant(nr, nc, g(0, 0))));
  }));
}

template <typename T>
Val<T> mean_all(Val<T> a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.rows() * a.cols()));
}

template <typename T>
Val<T> square(Val<T> a) {
  return mul(a, a);
}

template <typename T>
Val<T> neg(Val<T> a) {
  return scale(a, T(-1));
}

template <typename T>
Val<T> operator+(Val<T> a, Val<T> b) { return add(a, b); }
template <typename T>
Val<T> operator-(Val<T> a, Val<T> b) { return sub(a, b); }
template <typename T>
Val<T> operator*(Val<T> a, Val<T> b) { return mul(a, b); }

}  // namespace uret
