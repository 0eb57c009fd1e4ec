#include "uret/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace uret {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse number '" + s + "' in " + what);
  }
}

int64_t parse_int64(const std::string& s, const std::string& what) {
  int64_t v = 0;
  const char* b = s.data();
  auto res = std::from_chars(b, b + s.size(), v);
  if (res.ec != std::errc() || res.ptr != b + s.size())
    throw DataError("cannot parse integer '" + s + "' in " + what);
  return v;
}

}  // namespace

const std::vector<std::string>& attribute_vocabulary() {
  static const std::vector<std::string> kCodes = {
      "CM", "ROT", "DEF", "FOC", "LI", "OV", "POC", "VC", "SV",
      "BC", "MB", "ARC", "FM", "NM", "IV", "OE", "BOM"};
  return kCodes;
}

bool is_valid_attribute(const std::string& code) {
  const auto& v = attribute_vocabulary();
  return std::find(v.begin(), v.end(), code) != v.end();
}

Image SequenceRecord::frame_image(size_t index) const {
  const SequenceFrame& f = rgb_frames.at(index);
  if (f.image) return *f.image;
  return read_ppm(f.path);
}

double luminance(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

SequenceRecord load_sequence(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  SequenceRecord rec;
  rec.name = dir.filename().string();

  const fs::path rgb_dir = dir / "rgb";
  if (!fs::is_directory(rgb_dir))
    throw DataError("sequence integrity error: missing rgb/ in " + dir.string());
  std::vector<fs::path> frame_paths;
  for (const auto& e : fs::directory_iterator(rgb_dir))
    if (e.is_regular_file()) frame_paths.push_back(e.path());
  std::sort(frame_paths.begin(), frame_paths.end());
  if (frame_paths.empty())
    throw DataError("sequence integrity error: 0 frames in " + dir.string());

  const std::string ts_text = read_text_file(dir / "timestamps.txt");
  std::vector<int64_t> timestamps;
  for (const auto& line : split(ts_text, '\n')) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    timestamps.push_back(parse_int64(t, "timestamps.txt"));
  }
  if (timestamps.size() != frame_paths.size())
    throw DataError("sequence integrity error: " + std::to_string(timestamps.size()) +
                    " timestamps for " + std::to_string(frame_paths.size()) + " frames in " +
                    dir.string());
  for (size_t i = 0; i < frame_paths.size(); ++i)
    rec.rgb_frames.push_back(SequenceFrame{timestamps[i], frame_paths[i], nullptr});

  const std::string gt_text = read_text_file(dir / "groundtruth.txt");
  for (const auto& line : split(gt_text, '\n')) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    auto fields = split(t, ',');
    if (fields.size() != 4)
      throw DataError("sequence integrity error: groundtruth row '" + t + "' in " + dir.string());
    bool is_absent = false;
    for (auto& f : fields)
      if (trim(f) == "nan") is_absent = true;
    if (is_absent) {
      rec.groundtruth.push_back(BoundingBox{});
      rec.absent.push_back(true);
    } else {
      rec.groundtruth.push_back(BoundingBox{parse_double(trim(fields[0]), "groundtruth.txt"),
                                            parse_double(trim(fields[1]), "groundtruth.txt"),
                                            parse_double(trim(fields[2]), "groundtruth.txt"),
                                            parse_double(trim(fields[3]), "groundtruth.txt")});
      rec.absent.push_back(false);
    }
  }
  if (rec.groundtruth.size() != rec.rgb_frames.size())
    throw DataError("sequence integrity error: " + std::to_string(rec.groundtruth.size()) +
                    " groundtruth rows for " + std::to_string(rec.rgb_frames.size()) +
                    " frames in " + dir.string());

  if (fs::exists(dir / "attributes.txt")) {
    for (const auto& line : split(read_text_file(dir / "attributes.txt"), '\n')) {
      const std::string code = trim(line);
      if (code.empty()) continue;
      if (!is_valid_attribute(code))
        throw DataError("attribute vocabulary error: unknown code '" + code + "' in " +
                        dir.string());
      rec.attributes.insert(code);
    }
  }

  if (fs::exists(dir / "events.csv")) {
    rec.events = parse_event_stream_file(dir / "events.csv", EventFormat::kCsv);
  } else if (fs::exists(dir / "events.bin")) {
    rec.events = parse_event_stream_file(dir / "events.bin", EventFormat::kBinaryPacked);
  } else {
    throw DataError("sequence integrity error: no events.csv or events.bin in " + dir.string());
  }

  // First frame image defines the sequence resolution.
  Image first = read_ppm(frame_paths[0]);
  rec.rgb_width = first.width;
  rec.rgb_height = first.height;

  if (fs::exists(dir / "meta.txt")) {
    for (const auto& line : split(read_text_file(dir / "meta.txt"), '\n')) {
      const std::string t = trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (key == "split") {
        rec.split = value == "test" ? Split::kTest : Split::kTrain;
      } else if (key == "event_width") {
        rec.events.sensor_width = static_cast<int>(parse_int64(value, "meta.txt"));
      } else if (key == "event_height") {
        rec.events.sensor_height = static_cast<int>(parse_int64(value, "meta.txt"));
      } else if (key == "misalign") {
        auto parts = split(value, ',');
        if (parts.size() == 3)
          rec.misalignment = std::array<double, 3>{parse_double(trim(parts[0]), "meta.txt"),
                                                   parse_double(trim(parts[1]), "meta.txt"),
                                                   parse_double(trim(parts[2]), "meta.txt")};
      }
    }
  }
  if (rec.events.sensor_width <= 0 || rec.events.sensor_height <= 0) {
    rec.events.sensor_width = rec.rgb_width;
    rec.events.sensor_height = rec.rgb_height;
  }
  // Event groundtruth extent must fit its sensor.
  for (const Event& e : rec.events.events)
    if (e.x >= rec.events.sensor_width || e.y >= rec.events.sensor_height)
      throw DataError("sequence integrity error: event outside sensor in " + dir.string());
  return rec;
}

void write_sequence(const SequenceRecord& record, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "rgb");

  std::string timestamps;
  for (size_t i = 0; i < record.rgb_frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.ppm", i);
    write_ppm(dir / "rgb" / name, record.frame_image(i));
    timestamps += std::to_string(record.rgb_frames[i].t) + "\n";
  }
  write_file_atomic(dir / "timestamps.txt", timestamps);

  std::string gt;
  for (size_t i = 0; i < record.groundtruth.size(); ++i) {
    if (record.absent[i]) {
      gt += "nan,nan,nan,nan\n";
    } else {
      const BoundingBox& b = record.groundtruth[i];
      gt += format_double(b.x) + "," + format_double(b.y) + "," + format_double(b.w) + "," +
            format_double(b.h) + "\n";
    }
  }
  write_file_atomic(dir / "groundtruth.txt", gt);

  if (!record.attributes.empty()) {
    std::string attrs;
    for (const auto& a : record.attributes) attrs += a + "\n";
    write_file_atomic(dir / "attributes.txt", attrs);
  }

  serialize_event_stream_file(record.events, dir / "events.csv", EventFormat::kCsv);

  std::string meta;
  meta += std::string("split = ") + (record.split == Split::kTest ? "test" : "train") + "\n";
  meta += "event_width = " + std::to_string(record.events.sensor_width) + "\n";
  meta += "event_height = " + std::to_string(record.events.sensor_height) + "\n";
  if (record.misalignment) {
    const auto& m = *record.misalignment;
    meta += "misalign = " + format_double(m[0]) + "," + format_double(m[1]) + "," +
            format_double(m[2]) + "\n";
  }
  write_file_atomic(dir / "meta.txt", meta);
}

FramePair pair_frame_with_events(const SequenceRecord& seq, int frame_index) {
  if (frame_index < 0 || frame_index >= static_cast<int>(seq.n_frames()))
    throw std::invalid_argument("pair_frame_with_events: frame index " +
                                std::to_string(frame_index) + " out of range");
  FramePair pair;
  pair.frame_index = frame_index;
  pair.rgb = seq.frame_image(static_cast<size_t>(frame_index));
  const int64_t t1 = seq.rgb_frames[static_cast<size_t>(frame_index)].t;
  const int64_t t0 = frame_index == 0 ? std::min(seq.events.t_begin, t1)
                                      : seq.rgb_frames[static_cast<size_t>(frame_index) - 1].t;
  EventStream window = slice_events(seq.events, t0, t1);
  EventFrame stacked = stack_events(window, seq.events.sensor_width, seq.events.sensor_height);
  pair.event_frame = (stacked.width == pair.rgb.width && stacked.height == pair.rgb.height)
                         ? std::move(stacked)
                         : resize_event_frame(stacked, pair.rgb.width, pair.rgb.height);
  if (seq.misalignment)
    pair.misalignment = std::array<double, 2>{(*seq.misalignment)[0], (*seq.misalignment)[1]};
  return pair;
}

CropResult crop_region(const Image& image, const BoundingBox& box, double context_factor,
                       int out_side) {
  if (box.area() <= 0) throw std::invalid_argument("crop_region: degenerate box");
  if (context_factor < 1.0) throw std::invalid_argument("crop_region: context factor < 1");
  if (out_side <= 0) throw std::invalid_argument("crop_region: bad output side");
  const double side = context_factor * std::sqrt(box.w * box.h);
  CropResult res;
  res.origin_x = box.cx() - side / 2;
  res.origin_y = box.cy() - side / 2;
  res.scale = out_side / side;
  res.patch = sample_square_region(image, res.origin_x, res.origin_y, side, out_side);
  res.target_in_patch = res.to_patch(box);
  return res;
}

namespace {

// Smooth per-channel clutter: coarse random grid upsampled bilinearly plus a
// little fine-grained texture.
Image make_background(int width, int height, Rng& rng) {
  const int grid = 8;
  Image coarse(grid, grid, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < grid; ++y)
      for (int x = 0; x < grid; ++x) coarse.at(c, y, x) = 0.35 + 0.3 * rng.uniform();
  Image bg = resize_bilinear(coarse, width, height);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double v = bg.at(c, y, x) + 0.02 * rng.normal();
        bg.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
  return bg;
}

struct ObjectAppearance {
  std::array<double, 3> color_a;
  std::array<double, 3> color_b;
  double checker = 8.0;  // checker cell size, px
};

// Analytic object path: constant speed, bouncing off the frame with margin.
struct ObjectPath {
  double x0, y0, vx, vy;  // px, px per frame
  double min_x, max_x, min_y, max_y;

  std::array<double, 2> center_at(double frame_time) const {
    auto bounce = [](double p0, double v, double t, double lo, double hi) {
      if (hi <= lo) return lo;
      const double span = hi - lo;
      double p = std::fmod(p0 - lo + v * t, 2 * span);
      if (p < 0) p += 2 * span;
      return lo + (p <= span ? p : 2 * span - p);
    };
    return {bounce(x0, vx, frame_time, min_x, max_x), bounce(y0, vy, frame_time, min_y, max_y)};
  }
};

}  // namespace

SequenceRecord generate_synthetic_sequence(const SynthConfig& cfg, uint64_t seed) {
  if (cfg.n_frames < 2) throw std::invalid_argument("generate_synthetic_sequence: n_frames < 2");
  if (cfg.width <= 0 || cfg.height <= 0 || cfg.object_size <= 0 || cfg.event_threshold <= 0 ||
      cfg.sub_frames < 1 || cfg.event_scale <= 0)
    throw std::invalid_argument("generate_synthetic_sequence: bad config");

  Rng rng(seed);
  Image bg = make_background(cfg.width, cfg.height, rng);

  // High-contrast checker texture so the event blob is dominated by the
  // object interior rather than the object/background boundary.
  ObjectAppearance app;
  for (int c = 0; c < 3; ++c) {
    app.color_a[c] = 0.75 + 0.2 * rng.uniform();
    app.color_b[c] = 0.05 + 0.1 * rng.uniform();
  }
  app.checker = std::max(3.0, cfg.object_size / 6.0);

  // Path margins keep the object's event footprint inside the event sensor
  // even after the misalignment shift.
  const double half = cfg.object_size / 2;
  ObjectPath path;
  path.min_x = half + 2 + std::max(0.0, -cfg.misalign_dx);
  path.max_x = cfg.width - half - 2 - std::max(0.0, cfg.misalign_dx);
  path.min_y = half + 2 + std::max(0.0, -cfg.misalign_dy);
  path.max_y = cfg.height - half - 2 - std::max(0.0, cfg.misalign_dy);
  if (path.max_x <= path.min_x || path.max_y <= path.min_y)
    throw std::invalid_argument("generate_synthetic_sequence: object too large for frame");
  path.x0 = rng.uniform(path.min_x, path.max_x);
  path.y0 = rng.uniform(path.min_y, path.max_y);
  const double angle = rng.uniform(0.0, 2 * 3.14159265358979323846);
  path.vx = cfg.speed * std::cos(angle);
  path.vy = cfg.speed * std::sin(angle);

  auto render = [&](double frame_time, Image& out, Rng* noise_rng) {
    out = bg;
    const auto center = path.center_at(frame_time);
    const int x_lo = std::max(0, static_cast<int>(std::floor(center[0] - half)));
    const int x_hi = std::min(cfg.width - 1, static_cast<int>(std::ceil(center[0] + half)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(center[1] - half)));
    const int y_hi = std::min(cfg.height - 1, static_cast<int>(std::ceil(center[1] + half)));
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x) {
        const double lx = x + 0.5 - (center[0] - half);
        const double ly = y + 0.5 - (center[1] - half);
        if (lx < 0 || lx >= cfg.object_size || ly < 0 || ly >= cfg.object_size) continue;
        const int cell = (static_cast<int>(lx / app.checker) + static_cast<int>(ly / app.checker)) % 2;
        const auto& color = cell == 0 ? app.color_a : app.color_b;
        for (int c = 0; c < 3; ++c) out.at(c, y, x) = color[c];
      }
    if (noise_rng != nullptr && cfg.noise > 0)
      for (double& v : out.data) v = std::clamp(v + cfg.noise * noise_rng->normal(), 0.0, 1.0);
  };

  SequenceRecord rec;
  rec.name = cfg.name;
  rec.split = cfg.split;
  rec.rgb_width = cfg.width;
  rec.rgb_height = cfg.height;
  for (const auto& a : cfg.attributes) {
    if (!is_valid_attribute(a))
      throw DataError("attribute vocabulary error: unknown code '" + a + "'");
    rec.attributes.insert(a);
  }
  rec.misalignment = std::array<double, 3>{cfg.misalign_dx, cfg.misalign_dy,
                                           static_cast<double>(cfg.misalign_dt)};

  const int ev_w = std::max(1, static_cast<int>(std::lround(cfg.width * cfg.event_scale)));
  const int ev_h = std::max(1, static_cast<int>(std::lround(cfg.height * cfg.event_scale)));
  const double kLogEps = 1e-3;

  // Per-pixel memorized log intensity on the event sensor grid.
  auto sample_log_luma = [&](const Image& frame, std::vector<double>& out) {
    out.resize(static_cast<size_t>(ev_w) * ev_h);
    const double sx = static_cast<double>(cfg.width) / ev_w;
    const double sy = static_cast<double>(cfg.height) / ev_h;
    for (int y = 0; y < ev_h; ++y)
      for (int x = 0; x < ev_w; ++x) {
        const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, cfg.width - 1.0);
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, cfg.height - 1.0);
        const double lum = luminance(bilinear_sample(frame, 0, fx, fy, 0),
                                     bilinear_sample(frame, 1, fx, fy, 0),
                                     bilinear_sample(frame, 2, fx, fy, 0));
        out[static_cast<size_t>(y) * ev_w + x] = std::log(lum + kLogEps);
      }
  };

  Rng noise_rng(seed ^ 0x9e3779b97f4a7c15ull);
  Image work;
  render(0.0, work, cfg.noise > 0 ? &noise_rng : nullptr);
  std::vector<double> ref_log;
  sample_log_luma(work, ref_log);
  std::vector<double> cur_log;

  auto quantize = [](Image img) {
    for (double& v : img.data)
      v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return img;
  };

  rec.rgb_frames.push_back(
      SequenceFrame{0, {}, std::make_shared<Image>(quantize(work))});
  {
    const auto c0 = path.center_at(0.0);
    rec.groundtruth.push_back(BoundingBox{c0[0] - half, c0[1] - half, cfg.object_size,
                                          cfg.object_size});
    rec.absent.push_back(false);
  }

  for (int i = 1; i < cfg.n_frames; ++i) {
    for (int k = 1; k <= cfg.sub_frames; ++k) {
      const double ft = (i - 1) + static_cast<double>(k) / cfg.sub_frames;
      const int64_t t_us =
          static_cast<int64_t>(std::llround(ft * static_cast<double>(cfg.frame_interval_us)));
      render(ft, work, cfg.noise > 0 ? &noise_rng : nullptr);
      sample_log_luma(work, cur_log);
      for (int y = 0; y < ev_h; ++y)
        for (int x = 0; x < ev_w; ++x) {
          const size_t idx = static_cast<size_t>(y) * ev_w + x;
          const double d = cur_log[idx] - ref_log[idx];
          const int n = static_cast<int>(std::floor(std::abs(d) / cfg.event_threshold));
          if (n == 0) continue;
          const int pol = d > 0 ? 1 : -1;
          ref_log[idx] += pol * n * cfg.event_threshold;
          const int ex = x + static_cast<int>(std::lround(cfg.misalign_dx));
          const int ey = y + static_cast<int>(std::lround(cfg.misalign_dy));
          if (ex < 0 || ex >= ev_w || ey < 0 || ey >= ev_h) continue;
          for (int rep = 0; rep < n; ++rep)
            rec.events.events.push_back(Event{ex, ey, pol, t_us + cfg.misalign_dt});
        }
    }
    // the saved frame re-renders at the frame time (sub-frame k == sub_frames)
    rec.rgb_frames.push_back(SequenceFrame{
        static_cast<int64_t>(i) * cfg.frame_interval_us, {}, std::make_shared<Image>(quantize(work))});
    const auto c = path.center_at(static_cast<double>(i));
    rec.groundtruth.push_back(
        BoundingBox{c[0] - half, c[1] - half, cfg.object_size, cfg.object_size});
    rec.absent.push_back(false);
  }

  std::stable_sort(rec.events.events.begin(), rec.events.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  rec.events.sensor_width = ev_w;
  rec.events.sensor_height = ev_h;
  rec.events.t_begin = 0;
  rec.events.t_end = static_cast<int64_t>(cfg.n_frames - 1) * cfg.frame_interval_us +
                     cfg.misalign_dt;
  return rec;
}

}  // namespace uret
