#pragma once

#include "uret/data.hpp"
#include "uret/nn.hpp"

namespace uret {

// Decoded prediction maps over the search grid, plain values for inference.
struct ScoreMaps {
  int grid_h = 0;
  int grid_w = 0;
  int cell_px = 0;     // patch_size: pixels per grid cell
  int patch_side = 0;  // search patch side in pixels
  std::vector<double> cls;     // grid_h*grid_w, row-major, in [0,1]
  std::vector<double> off_x;   // sub-cell offsets in [0,1)
  std::vector<double> off_y;
  std::vector<double> size_w;  // normalized box size in (0,1]
  std::vector<double> size_h;
};

struct LossWeights {
  double lambda_iou = 2.0;
  double lambda_l1 = 5.0;
  double alpha_kl = 0.001;
};

struct LossBundle {
  double cls = 0;
  double iou = 0;
  double l1 = 0;
  double branch_total = 0;
};

inline double branch_total(const LossBundle& b, const LossWeights& w) {
  return b.cls + w.lambda_iou * b.iou + w.lambda_l1 * b.l1;
}

// total = L_f + L_cm + L_v + alpha * (kl_v + kl_cm)
inline double total_loss(double branch_f, double branch_cm, double branch_v, double kl_v,
                         double kl_cm, double alpha) {
  const double v = branch_f + branch_cm + branch_v + alpha * (kl_v + kl_cm);
  if (!std::isfinite(v)) throw NumericError("total_loss: non-finite value");
  return v;
}

// --- graph-side head -------------------------------------------------------

// 3x3 convolution over row-major grid tokens via shifted column blocks.
template <typename T>
Val<T> conv3x3(Ctx<T>& ctx, Val<T> x, int h, int w, const LinearP<T>& p) {
  std::vector<Val<T>> taps;
  taps.reserve(9);
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) taps.push_back(shift_grid(x, h, w, dy, dx));
  return linear(ctx, concat_cols(taps), p);
}

template <typename T>
struct TowerP {
  LinearP<T> conv1;  // 3x3, dim -> channels
  LinearP<T> conv2;  // 3x3, channels -> channels
  LinearP<T> out;    // 1x1, channels -> out_dim
};

template <typename T>
TowerP<T> make_tower(ParamStore<T>& store, const std::string& name, int dim, int channels,
                     int out_dim, Rng& rng) {
  TowerP<T> p;
  p.conv1 = make_linear(store, name + ".conv1", 9 * dim, channels, rng);
  p.conv2 = make_linear(store, name + ".conv2", 9 * channels, channels, rng);
  // zero-initialized prediction layer: maps start flat at sigmoid(0)
  p.out = make_linear(store, name + ".out", channels, out_dim, rng, T(0));
  return p;
}

template <typename T>
Val<T> tower(Ctx<T>& ctx, Val<T> x, int h, int w, const TowerP<T>& p) {
  Val<T> a = gelu(conv3x3(ctx, x, h, w, p.conv1));
  Val<T> b = gelu(conv3x3(ctx, a, h, w, p.conv2));
  return linear(ctx, b, p.out);
}

// Three small convolutional towers over the search grid: classification,
// sub-cell offset, and normalized size, all squashed by sigmoid.
template <typename T>
struct HeadP {
  TowerP<T> cls;
  TowerP<T> offset;
  TowerP<T> size;
};

template <typename T>
HeadP<T> make_head(ParamStore<T>& store, const std::string& name, int dim, int channels, Rng& rng) {
  HeadP<T> p;
  p.cls = make_tower(store, name + ".cls", dim, channels, 1, rng);
  p.offset = make_tower(store, name + ".offset", dim, channels, 2, rng);
  p.size = make_tower(store, name + ".size", dim, channels, 2, rng);
  return p;
}

template <typename T>
struct MapsOut {
  Val<T> cls;   // (h*w x 1)
  Val<T> off;   // (h*w x 2)
  Val<T> size;  // (h*w x 2)
};

// grid_tokens: (h*w x dim) with eliminated positions already re-inserted as
// zero rows.
template <typename T>
MapsOut<T> predict_maps(Ctx<T>& ctx, Val<T> grid_tokens, int h, int w, const HeadP<T>& p) {
  if (grid_tokens.rows() != static_cast<Eigen::Index>(h) * w)
    throw std::invalid_argument("predict_maps: token count is not the full grid");
  MapsOut<T> out;
  out.cls = sigmoid(tower(ctx, grid_tokens, h, w, p.cls));
  out.off = sigmoid(tower(ctx, grid_tokens, h, w, p.offset));
  out.size = sigmoid(tower(ctx, grid_tokens, h, w, p.size));
  return out;
}

// Box through the offset/size maps at a fixed cell, in patch pixels,
// (x, y, w, h) as a 1x4 row. Used at the groundtruth cell during training.
template <typename T>
Val<T> box_at_cell(Ctx<T>& ctx, const MapsOut<T>& maps, int cell, int grid_w, int cell_px,
                   int patch_side) {
  Val<T> off = rows(maps.off, cell, 1);
  Val<T> sz = scale(rows(maps.size, cell, 1), static_cast<T>(patch_side));
  const T cx0 = static_cast<T>(cell % grid_w) * cell_px;
  const T cy0 = static_cast<T>(cell / grid_w) * cell_px;
  Mat<T> base(1, 2);
  base << cx0, cy0;
  Val<T> center = add(ctx.c(base), scale(off, static_cast<T>(cell_px)));
  Val<T> top_left = sub(center, scale(sz, static_cast<T>(0.5)));
  return concat_cols(std::vector<Val<T>>{top_left, sz});
}

// CornerNet-style weighted focal loss, normalized by the positive count:
// positives (target==1) weigh (1-p)^2 log p, negatives (1-t)^4 p^2 log(1-p).
template <typename T>
Val<T> focal_loss(Ctx<T>& ctx, Val<T> pred, const Mat<T>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("focal_loss: shape mismatch");
  const T eps = static_cast<T>(1e-6);
  Val<T> p = clamp(pred, eps, T(1) - eps);
  Mat<T> pos_mask(target.rows(), target.cols());
  Mat<T> neg_weight(target.rows(), target.cols());
  int n_pos = 0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const bool is_pos = target(i) >= T(1);
    pos_mask(i) = is_pos ? T(1) : T(0);
    const T one_minus_t = T(1) - target(i);
    neg_weight(i) = is_pos ? T(0) : one_minus_t * one_minus_t * one_minus_t * one_minus_t;
    if (is_pos) ++n_pos;
  }
  Val<T> one = ctx.c(Mat<T>(Mat<T>::Ones(target.rows(), target.cols())));
  Val<T> one_minus_p = sub(one, p);
  Val<T> pos_term = mul(ctx.c(pos_mask), mul(square(one_minus_p), log_v(p)));
  Val<T> neg_term = mul(ctx.c(neg_weight), mul(square(p), log_v(one_minus_p)));
  Val<T> total = sum_all(add(pos_term, neg_term));
  return scale(total, T(-1) / static_cast<T>(std::max(1, n_pos)));
}

// 1 - GIoU for (x, y, w, h) rows; GIoU = IoU - |C \ (A u B)| / |C| with C the
// smallest enclosing box. A pair of zero-area boxes is defined as GIoU 0,
// i.e. loss 1.
template <typename T>
Val<T> giou_loss(Ctx<T>& ctx, Val<T> pred, Val<T> gt) {
  if (pred.m()(0, 2) * pred.m()(0, 3) == T(0) && gt.m()(0, 2) * gt.m()(0, 3) == T(0))
    return scalar_const<T>(*pred.tape, T(1));
  const T eps = static_cast<T>(1e-9);
  auto piece = [&](Val<T> b, int k) { return cols(b, k, 1); };
  Val<T> ax0 = piece(pred, 0), ay0 = piece(pred, 1), aw = piece(pred, 2), ah = piece(pred, 3);
  Val<T> bx0 = piece(gt, 0), by0 = piece(gt, 1), bw = piece(gt, 2), bh = piece(gt, 3);
  Val<T> ax1 = add(ax0, aw), ay1 = add(ay0, ah);
  Val<T> bx1 = add(bx0, bw), by1 = add(by0, bh);
  Val<T> zero = ctx.c(Mat<T>(Mat<T>::Zero(1, 1)));

  Val<T> iw = emax(sub(emin(ax1, bx1), emax(ax0, bx0)), zero);
  Val<T> ih = emax(sub(emin(ay1, by1), emax(ay0, by0)), zero);
  Val<T> inter = mul(iw, ih);
  Val<T> uni = sub(add(mul(aw, ah), mul(bw, bh)), inter);
  Val<T> iou = divide(inter, add_scalar(uni, eps));

  Val<T> cw = sub(emax(ax1, bx1), emin(ax0, bx0));
  Val<T> ch = sub(emax(ay1, by1), emin(ay0, by0));
  Val<T> c_area = mul(cw, ch);
  Val<T> giou = sub(iou, divide(sub(c_area, uni), add_scalar(c_area, eps)));
  return sub(scalar_const<T>(*pred.tape, T(1)), giou);
}

// Mean absolute difference of (cx, cy, w, h) normalized by the patch side.
template <typename T>
Val<T> l1_center_size(Ctx<T>& ctx, Val<T> pred_box, Val<T> gt_box, int patch_side) {
  Mat<T> to_center(4, 4);
  // (x, y, w, h) -> (cx, cy, w, h)
  to_center << 1, 0, 0, 0,
               0, 1, 0, 0,
               T(0.5), 0, 1, 0,
               0, T(0.5), 0, 1;
  Val<T> m = ctx.c(to_center);
  Val<T> pc = matmul(pred_box, m);
  Val<T> gc = matmul(gt_box, m);
  return scale(mean_all(abs_v(sub(pc, gc))), T(1) / static_cast<T>(patch_side));
}

// --- plain-value helpers ----------------------------------------------------

double giou(const BoundingBox& a, const BoundingBox& b);

// CornerNet Gaussian target: 1 at the groundtruth center cell, Gaussian
// falloff with radius from the box size (clamped to at least one cell).
// Throws DataError when the center is outside the grid (skip the sample).
std::vector<double> gt_response_map(const BoundingBox& gt_in_patch, int grid_h, int grid_w,
                                    int cell_px);
int gt_center_cell(const BoundingBox& gt_in_patch, int grid_h, int grid_w, int cell_px);

// Peak decoding: argmax of (optionally Hanning-penalized) cls, box from the
// offset/size maps at the peak. Ties break toward the lower row-major index.
BoundingBox decode_box(const ScoreMaps& maps, bool window_penalty, double* peak_score = nullptr);

std::vector<double> hanning_window(int grid_h, int grid_w);

double gaussian_radius(double cells_h, double cells_w, double min_overlap = 0.7);

}  // namespace uret
