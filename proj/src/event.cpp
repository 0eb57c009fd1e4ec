#include "uret/event.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace uret {

namespace {

void finalize_stream(EventStream& s) {
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  if (s.events.empty()) {
    s.t_begin = 0;
    s.t_end = 0;
    return;
  }
  s.t_begin = s.events.front().t;
  s.t_end = s.events.back().t;
  int max_x = 0, max_y = 0;
  for (const Event& e : s.events) {
    max_x = std::max(max_x, e.x);
    max_y = std::max(max_y, e.y);
  }
  s.sensor_width = max_x + 1;
  s.sensor_height = max_y + 1;
}

int remap_polarity(long p, size_t line_no) {
  // accepted encodings: {-1, +1} and {0, 1}
  if (p == 1) return 1;
  if (p == -1 || p == 0) return -1;
  throw DataError("event format error: polarity " + std::to_string(p) + " at line " +
                  std::to_string(line_no) + " (expected -1/1 or 0/1)");
}

long parse_long(const std::string& field, size_t line_no, const char* what) {
  long v = 0;
  const char* b = field.data();
  const char* e = b + field.size();
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    throw DataError(std::string("event parse error: bad ") + what + " '" + field + "' at line " +
                    std::to_string(line_no));
  return v;
}

}  // namespace

EventStream parse_event_stream(std::istream& source, EventFormat format) {
  EventStream s;
  if (format == EventFormat::kCsv) {
    std::string line;
    size_t line_no = 0;
    while (std::getline(source, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (trim(line).empty()) continue;
      auto fields = split(line, ',');
      if (fields.size() != 4)
        throw DataError("event parse error: expected 4 fields at line " + std::to_string(line_no) +
                        ", got " + std::to_string(fields.size()));
      Event e;
      e.t = parse_long(trim(fields[0]), line_no, "timestamp");
      e.x = static_cast<int>(parse_long(trim(fields[1]), line_no, "x"));
      e.y = static_cast<int>(parse_long(trim(fields[2]), line_no, "y"));
      e.polarity = remap_polarity(parse_long(trim(fields[3]), line_no, "polarity"), line_no);
      if (e.x < 0 || e.y < 0)
        throw DataError("event parse error: negative coordinate at line " + std::to_string(line_no));
      s.events.push_back(e);
    }
  } else {
    // little-endian records: u64 t, u16 x, u16 y, i8 p
    char rec[13];
    size_t offset = 0;
    while (source.read(rec, sizeof(rec))) {
      uint64_t t;
      uint16_t x, y;
      int8_t p;
      std::memcpy(&t, rec, 8);
      std::memcpy(&x, rec + 8, 2);
      std::memcpy(&y, rec + 10, 2);
      std::memcpy(&p, rec + 12, 1);
      Event e;
      e.t = static_cast<int64_t>(t);
      e.x = x;
      e.y = y;
      e.polarity = remap_polarity(p, offset);
      s.events.push_back(e);
      ++offset;
    }
    if (source.gcount() != 0)
      throw DataError("event parse error: trailing partial record at index " +
                      std::to_string(offset));
  }
  finalize_stream(s);
  return s;
}

EventStream parse_event_stream_file(const std::filesystem::path& path, EventFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open event file: " + path.string());
  return parse_event_stream(in, format);
}

void serialize_event_stream(const EventStream& stream, std::ostream& out, EventFormat format) {
  if (format == EventFormat::kCsv) {
    for (const Event& e : stream.events)
      out << e.t << ',' << e.x << ',' << e.y << ',' << e.polarity << '\n';
  } else {
    for (const Event& e : stream.events) {
      char rec[13];
      const uint64_t t = static_cast<uint64_t>(e.t);
      const uint16_t x = static_cast<uint16_t>(e.x);
      const uint16_t y = static_cast<uint16_t>(e.y);
      const int8_t p = static_cast<int8_t>(e.polarity);
      std::memcpy(rec, &t, 8);
      std::memcpy(rec + 8, &x, 2);
      std::memcpy(rec + 10, &y, 2);
      std::memcpy(rec + 12, &p, 1);
      out.write(rec, sizeof(rec));
    }
  }
}

void serialize_event_stream_file(const EventStream& stream, const std::filesystem::path& path,
                                 EventFormat format) {
  std::ostringstream ss(std::ios::binary);
  serialize_event_stream(stream, ss, format);
  write_file_atomic(path, ss.str());
}

EventStream slice_events(const EventStream& stream, int64_t t0, int64_t t1) {
  if (t0 > t1) throw std::invalid_argument("slice_events: t0 > t1");
  EventStream out;
  out.sensor_width = stream.sensor_width;
  out.sensor_height = stream.sensor_height;
  out.t_begin = t0;
  out.t_end = t1;
  auto lo = std::lower_bound(stream.events.begin(), stream.events.end(), t0,
                             [](const Event& e, int64_t t) { return e.t < t; });
  auto hi = std::lower_bound(lo, stream.events.end(), t1,
                             [](const Event& e, int64_t t) { return e.t < t; });
  out.events.assign(lo, hi);
  return out;
}

EventFrame stack_events(const EventStream& stream, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("stack_events: bad frame size");
  EventFrame frame(width, height);
  frame.t_start = stream.t_begin;
  frame.t_end = stream.t_end;
  for (size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height)
      throw std::out_of_range("stack_events: event " + std::to_string(i) + " at (" +
                              std::to_string(e.x) + "," + std::to_string(e.y) +
                              ") outside " + std::to_string(width) + "x" + std::to_string(height));
    if (e.polarity > 0) {
      frame.on(e.y, e.x) += 1.0;
    } else {
      frame.off(e.y, e.x) += 1.0;
    }
  }
  return frame;
}

EventFrame resize_event_frame(const EventFrame& frame, int target_w, int target_h) {
  if (target_w <= 0 || target_h <= 0)
    throw std::invalid_argument("resize_event_frame: target dimensions must be positive");
  Image tmp(frame.width, frame.height, 2);
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      tmp.at(0, y, x) = frame.on(y, x);
      tmp.at(1, y, x) = frame.off(y, x);
    }
  Image resized = resize_bilinear(tmp, target_w, target_h);
  EventFrame out(target_w, target_h);
  out.t_start = frame.t_start;
  out.t_end = frame.t_end;
  for (int y = 0; y < target_h; ++y)
    for (int x = 0; x < target_w; ++x) {
      out.on(y, x) = resized.at(0, y, x);
      out.off(y, x) = resized.at(1, y, x);
    }
  return out;
}

Image normalize_event_frame(const EventFrame& frame) {
  Image img(frame.width, frame.height, 3);
  double max_on = 0.0, max_off = 0.0, max_sum = 0.0;
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      max_on = std::max(max_on, frame.on(y, x));
      max_off = std::max(max_off, frame.off(y, x));
      max_sum = std::max(max_sum, frame.on(y, x) + frame.off(y, x));
    }
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      img.at(0, y, x) = max_on > 0 ? frame.on(y, x) / max_on : 0.0;
      img.at(1, y, x) = max_off > 0 ? frame.off(y, x) / max_off : 0.0;
      img.at(2, y, x) = max_sum > 0 ? (frame.on(y, x) + frame.off(y, x)) / max_sum : 0.0;
    }
  return img;
}

}  // namespace uret
