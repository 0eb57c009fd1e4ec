#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "uret/image.hpp"

namespace uret {

// One sensor event: (x, y) pixel, polarity +1/-1, timestamp in microseconds.
struct Event {
  int x = 0;
  int y = 0;
  int polarity = 1;
  int64_t t = 0;
};

struct EventStream {
  std::vector<Event> events;  // sorted non-decreasing by timestamp
  int sensor_width = 0;
  int sensor_height = 0;
  int64_t t_begin = 0;
  int64_t t_end = 0;

  size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
};

// Per-pixel event counts over a time window, split by polarity. Counts are
// real-valued so resampled frames stay in the same type.
struct EventFrame {
  std::vector<double> on_channel;   // row-major height x width
  std::vector<double> off_channel;
  int width = 0;
  int height = 0;
  int64_t t_start = 0;
  int64_t t_end = 0;

  EventFrame() = default;
  EventFrame(int w, int h) : on_channel(static_cast<size_t>(w) * h, 0.0),
                             off_channel(static_cast<size_t>(w) * h, 0.0),
                             width(w), height(h) {}

  double& on(int y, int x) { return on_channel[static_cast<size_t>(y) * width + x]; }
  double on(int y, int x) const { return on_channel[static_cast<size_t>(y) * width + x]; }
  double& off(int y, int x) { return off_channel[static_cast<size_t>(y) * width + x]; }
  double off(int y, int x) const { return off_channel[static_cast<size_t>(y) * width + x]; }
};

enum class EventFormat { kCsv, kBinaryPacked };

// csv: header-less lines "t,x,y,p" with p in {1,-1} or {0,1}.
// binary-packed: little-endian records (u64 t, u16 x, u16 y, i8 p).
// Out-of-order rows are stably sorted by timestamp. Sensor dimensions default
// to the coordinate extent (max+1) unless overridden afterwards.
EventStream parse_event_stream(std::istream& source, EventFormat format);
EventStream parse_event_stream_file(const std::filesystem::path& path, EventFormat format);

void serialize_event_stream(const EventStream& stream, std::ostream& out, EventFormat format);
void serialize_event_stream_file(const EventStream& stream, const std::filesystem::path& path,
                                 EventFormat format);

// Events with t0 <= t < t1. The result keeps sensor metadata and sets
// [t_begin, t_end] = [t0, t1].
EventStream slice_events(const EventStream& stream, int64_t t0, int64_t t1);

// Count events per pixel by polarity into a width x height frame.
EventFrame stack_events(const EventStream& stream, int width, int height);

EventFrame resize_event_frame(const EventFrame& frame, int target_w, int target_h);

// 3-channel image: ON counts, OFF counts, ON+OFF, each max-normalized to
// [0,1] (an all-zero channel stays zero).
Image normalize_event_frame(const EventFrame& frame);

}  // namespace uret
