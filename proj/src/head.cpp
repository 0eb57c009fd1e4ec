#include "uret/head.hpp"

#include <algorithm>
#include <cmath>

namespace uret {

double giou(const BoundingBox& a, const BoundingBox& b) {
  if (a.area() == 0 && b.area() == 0) return 0.0;  // degenerate pair
  // all areas from corner coordinates so GIoU(A, A) is exactly 1
  const double ax1 = a.x + a.w, ay1 = a.y + a.h;
  const double bx1 = b.x + b.w, by1 = b.y + b.h;
  const double area_a = (ax1 - a.x) * (ay1 - a.y);
  const double area_b = (bx1 - b.x) * (by1 - b.y);
  const double ix = std::max(0.0, std::min(ax1, bx1) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(ay1, by1) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = area_a + area_b - inter;
  const double iou = uni > 0 ? inter / uni : 0.0;
  const double c_area = (std::max(ax1, bx1) - std::min(a.x, b.x)) *
                        (std::max(ay1, by1) - std::min(a.y, b.y));
  return iou - (c_area > 0 ? (c_area - uni) / c_area : 0.0);
}

// Largest radius such that a corner shifted by it still overlaps the box with
// at least min_overlap IoU (the three CornerNet cases).
double gaussian_radius(double h, double w, double min_overlap) {
  const double a1 = 1.0;
  const double b1 = h + w;
  const double c1 = w * h * (1 - min_overlap) / (1 + min_overlap);
  const double r1 = (b1 - std::sqrt(std::max(0.0, b1 * b1 - 4 * a1 * c1))) / (2 * a1);

  const double a2 = 4.0;
  const double b2 = 2 * (h + w);
  const double c2 = (1 - min_overlap) * w * h;
  const double r2 = (b2 - std::sqrt(std::max(0.0, b2 * b2 - 4 * a2 * c2))) / (2 * a2);

  const double a3 = 4 * min_overlap;
  const double b3 = -2 * min_overlap * (h + w);
  const double c3 = (min_overlap - 1) * w * h;
  const double r3 = (-b3 + std::sqrt(std::max(0.0, b3 * b3 - 4 * a3 * c3))) / (2 * a3);
  return std::min({r1, r2, r3});
}

int gt_center_cell(const BoundingBox& gt, int grid_h, int grid_w, int cell_px) {
  const int cx = static_cast<int>(std::floor(gt.cx() / cell_px));
  const int cy = static_cast<int>(std::floor(gt.cy() / cell_px));
  if (cx < 0 || cx >= grid_w || cy < 0 || cy >= grid_h)
    throw DataError("gt_response_map: groundtruth center outside the search grid");
  return cy * grid_w + cx;
}

std::vector<double> gt_response_map(const BoundingBox& gt, int grid_h, int grid_w, int cell_px) {
  const int center = gt_center_cell(gt, grid_h, grid_w, cell_px);
  const int cx = center % grid_w;
  const int cy = center / grid_w;
  const double radius =
      std::max(1.0, std::floor(gaussian_radius(gt.h / cell_px, gt.w / cell_px)));
  const double sigma = (2 * radius + 1) / 6.0;
  std::vector<double> map(static_cast<size_t>(grid_h) * grid_w, 0.0);
  for (int y = 0; y < grid_h; ++y)
    for (int x = 0; x < grid_w; ++x) {
      const double d2 = static_cast<double>((x - cx) * (x - cx) + (y - cy) * (y - cy));
      map[static_cast<size_t>(y) * grid_w + x] = std::exp(-d2 / (2 * sigma * sigma));
    }
  map[static_cast<size_t>(center)] = 1.0;
  return map;
}

std::vector<double> hanning_window(int grid_h, int grid_w) {
  auto axis = [](int n) {
    std::vector<double> v(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
      v[static_cast<size_t>(i)] =
          n == 1 ? 1.0 : 0.5 * (1 - std::cos(2 * 3.14159265358979323846 * i / (n - 1)));
    return v;
  };
  const auto wy = axis(grid_h);
  const auto wx = axis(grid_w);
  std::vector<double> out(static_cast<size_t>(grid_h) * grid_w);
  for (int y = 0; y < grid_h; ++y)
    for (int x = 0; x < grid_w; ++x)
      out[static_cast<size_t>(y) * grid_w + x] = wy[static_cast<size_t>(y)] * wx[static_cast<size_t>(x)];
  return out;
}

BoundingBox decode_box(const ScoreMaps& maps, bool window_penalty, double* peak_score) {
  const size_t n = maps.cls.size();
  std::vector<double> hann;
  if (window_penalty) hann = hanning_window(maps.grid_h, maps.grid_w);
  size_t best = 0;
  double best_score = -1.0;
  for (size_t i = 0; i < n; ++i) {
    const double s = window_penalty ? maps.cls[i] * (0.51 + 0.49 * hann[i]) : maps.cls[i];
    if (s > best_score) {  // strict: ties keep the lower row-major index
      best_score = s;
      best = i;
    }
  }
  if (peak_score != nullptr) *peak_score = maps.cls[best];
  const int cx_cell = static_cast<int>(best) % maps.grid_w;
  const int cy_cell = static_cast<int>(best) / maps.grid_w;
  const double cx = (cx_cell + maps.off_x[best]) * maps.cell_px;
  const double cy = (cy_cell + maps.off_y[best]) * maps.cell_px;
  const double w = maps.size_w[best] * maps.patch_side;
  const double h = maps.size_h[best] * maps.patch_side;
  return BoundingBox{cx - w / 2, cy - h / 2, w, h};
}

}  // namespace uret
