#include "uret/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace uret {

double bilinear_sample(const Image& img, int channel, double x, double y, double fill) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  auto tap = [&](int xi, int yi) -> double {
    if (xi < 0 || xi >= img.width || yi < 0 || yi >= img.height) return fill;
    return img.at(channel, yi, xi);
  };
  const double top = tap(x0, y0) * (1 - fx) + tap(x0 + 1, y0) * fx;
  const double bot = tap(x0, y0 + 1) * (1 - fx) + tap(x0 + 1, y0 + 1) * fx;
  return top * (1 - fy) + bot * fy;
}

Image resize_bilinear(const Image& img, int out_w, int out_h) {
  if (out_w <= 0 || out_h <= 0)
    throw std::invalid_argument("resize_bilinear: target dimensions must be positive");
  Image out(out_w, out_h, img.channels);
  const double sx = static_cast<double>(img.width) / out_w;
  const double sy = static_cast<double>(img.height) / out_h;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      const double src_y = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
      for (int x = 0; x < out_w; ++x) {
        const double src_x = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
        // clamped coordinates keep all four taps inside the image
        out.at(c, y, x) = bilinear_sample(img, c, src_x, src_y, 0.0);
      }
    }
  }
  return out;
}

double channel_mean(const Image& img, int channel) {
  double sum = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) sum += img.at(channel, y, x);
  return img.width * img.height > 0 ? sum / (static_cast<double>(img.width) * img.height) : 0.0;
}

Image sample_square_region(const Image& img, double x0, double y0, double side, int out_side) {
  if (side <= 0 || out_side <= 0)
    throw std::invalid_argument("sample_square_region: degenerate region");
  Image out(out_side, out_side, img.channels);
  const double step = side / out_side;
  for (int c = 0; c < img.channels; ++c) {
    const double fill = channel_mean(img, c);
    for (int y = 0; y < out_side; ++y) {
      const double sy = y0 + (y + 0.5) * step - 0.5;
      for (int x = 0; x < out_side; ++x) {
        const double sx = x0 + (x + 0.5) * step - 0.5;
        out.at(c, y, x) = bilinear_sample(img, c, sx, sy, fill);
      }
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3) throw DataError("write_ppm: expected 3 channels");
  std::string buf;
  buf.reserve(static_cast<size_t>(img.width) * img.height * 3 + 64);
  buf += "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        buf.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
  write_file_atomic(path, buf);
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw DataError("unsupported image format in " + path.string());
  auto next_token = [&]() -> long {
    // skip whitespace and '#' comment lines
    while (true) {
      int ch = in.peek();
      if (ch == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(ch)) {
        in.get();
      } else {
        break;
      }
    }
    long v;
    in >> v;
    return v;
  };
  const long w = next_token();
  const long h = next_token();
  const long maxval = next_token();
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError("bad PPM header in " + path.string());
  in.get();  // single whitespace after maxval
  Image img(static_cast<int>(w), static_cast<int>(h), 3);
  std::vector<char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(row.data(), static_cast<std::streamsize>(row.size()));
    if (!in) throw DataError("truncated PPM: " + path.string());
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<unsigned char>(row[static_cast<size_t>(x) * 3 + c]) / 255.0;
  }
  return img;
}

}  // namespace uret
