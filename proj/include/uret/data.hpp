#pragma once

#include <optional>
#include <set>
#include <string>

#include "uret/event.hpp"
#include "uret/image.hpp"

namespace uret {

struct BoundingBox {
  double x = 0;  // top-left column
  double y = 0;  // top-left row
  double w = 0;
  double h = 0;

  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }
  double area() const { return w * h; }

  bool operator==(const BoundingBox&) const = default;
};

// The 17 sequence attribute codes, in the order they are numbered.
const std::vector<std::string>& attribute_vocabulary();
bool is_valid_attribute(const std::string& code);

enum class Split { kTrain, kTest };

struct SequenceFrame {
  int64_t t = 0;                        // microseconds
  std::filesystem::path path;          // empty for in-memory frames
  std::shared_ptr<const Image> image;  // set for in-memory frames
};

struct SequenceRecord {
  std::string name;
  std::vector<SequenceFrame> rgb_frames;
  EventStream events;
  std::vector<BoundingBox> groundtruth;  // one entry per frame
  std::vector<bool> absent;              // true when groundtruth is missing
  std::set<std::string> attributes;
  Split split = Split::kTrain;
  int rgb_width = 0;
  int rgb_height = 0;
  // Misalignment metadata when known (synthetic data); unset otherwise.
  std::optional<std::array<double, 3>> misalignment;  // dx px, dy px, dt us

  size_t n_frames() const { return rgb_frames.size(); }
  // Loads from disk when the frame is path-backed; cheap copy otherwise.
  Image frame_image(size_t index) const;
};

struct FramePair {
  Image rgb;
  EventFrame event_frame;  // resized to rgb resolution
  int frame_index = 0;
  std::optional<std::array<double, 2>> misalignment;  // (dx, dy) when known
};

struct CropResult {
  Image patch;                 // square, side out_side
  double scale = 1.0;          // patch px per source px
  double origin_x = 0;         // crop square top-left in source coords
  double origin_y = 0;
  BoundingBox target_in_patch;

  BoundingBox to_source(const BoundingBox& in_patch) const {
    return BoundingBox{in_patch.x / scale + origin_x, in_patch.y / scale + origin_y,
                       in_patch.w / scale, in_patch.h / scale};
  }
  BoundingBox to_patch(const BoundingBox& in_source) const {
    return BoundingBox{(in_source.x - origin_x) * scale, (in_source.y - origin_y) * scale,
                       in_source.w * scale, in_source.h * scale};
  }
};

// Directory layout: rgb/NNNNNN.ppm, timestamps.txt (one integer per frame),
// events.csv or events.bin, groundtruth.txt ("x,y,w,h" per line, "nan" row =
// absent), optional attributes.txt (one code per line), optional meta.txt.
SequenceRecord load_sequence(const std::filesystem::path& dir);
void write_sequence(const SequenceRecord& record, const std::filesystem::path& dir);

// Event stacking window for frame i: [t(F_{i-1}), t(F_i)), with the first
// frame using [events.t_begin, t(F_0)). The event frame is resized to the
// RGB resolution; no spatial registration is attempted.
FramePair pair_frame_with_events(const SequenceRecord& seq, int frame_index);

// Square crop centered on the box, side = context_factor * sqrt(w*h),
// resampled to out_side with per-channel mean padding.
CropResult crop_region(const Image& image, const BoundingBox& box, double context_factor,
                       int out_side);

struct SynthConfig {
  int n_frames = 64;
  int width = 192;
  int height = 192;
  double object_size = 40;     // box side, px
  double speed = 3.0;          // px per frame
  double event_threshold = 0.12;  // log-intensity step per event
  double misalign_dx = 0;      // event sensor px
  double misalign_dy = 0;
  int64_t misalign_dt = 0;     // us
  double noise = 0.0;          // photometric noise stddev
  double event_scale = 1.0;    // event sensor resolution relative to rgb
  int sub_frames = 4;          // rendered sub-frames per rgb frame interval
  int64_t frame_interval_us = 20000;
  std::string name = "synth";
  std::vector<std::string> attributes;
  Split split = Split::kTrain;
};

// Deterministic per seed; groundtruth boxes exact by construction. Events are
// emitted where |log-intensity change| between rendered sub-frames exceeds
// event_threshold, then shifted by (dx, dy) and delayed by dt.
SequenceRecord generate_synthetic_sequence(const SynthConfig& cfg, uint64_t seed);

double luminance(double r, double g, double b);

}  // namespace uret
