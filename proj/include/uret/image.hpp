#pragma once

#include <filesystem>
#include <vector>

#include "uret/common.hpp"

namespace uret {

// Planar image, values typically in [0,1]. Index order (channel, row, col).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c),
                               data(static_cast<size_t>(w) * h * c, 0.0) {}

  double& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  size_t size() const { return data.size(); }
};

// Bilinear value at continuous index-space position (x, y); taps outside the
// image read `fill`.
double bilinear_sample(const Image& img, int channel, double x, double y, double fill);

// Half-pixel-center bilinear resize; edge taps clamp to the border so a
// constant image stays constant at any scale.
Image resize_bilinear(const Image& img, int out_w, int out_h);

double channel_mean(const Image& img, int channel);

// Sample the square region [x0, x0+side) x [y0, y0+side) into an
// out_side x out_side patch. Out-of-image taps read the per-channel mean.
Image sample_square_region(const Image& img, double x0, double y0, double side, int out_side);

// Binary PPM (P6, 8-bit). Channels: 3. Values clamped to [0,1] on write.
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

}  // namespace uret
