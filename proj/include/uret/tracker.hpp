#pragma once

#include <chrono>

#include "uret/model.hpp"

namespace uret {

// Online tracker state. Template crops are taken once at init and cached;
// the search region follows the previously predicted box.
template <typename T>
struct TrackerState {
  const TrackModel<T>* model = nullptr;
  Mat<T> rgb_template;  // cached template pixel matrices
  Mat<T> ev_template;
  BoundingBox prev_box;
  int frame_w = 0;
  int frame_h = 0;
  uint64_t template_hash = 0;

  uint64_t compute_template_hash() const {
    uint64_t h = fnv1a64(rgb_template.data(), static_cast<size_t>(rgb_template.size()) * sizeof(T));
    return fnv1a64(ev_template.data(), static_cast<size_t>(ev_template.size()) * sizeof(T), h);
  }
};

template <typename T>
TrackerState<T> tracker_init(const TrackModel<T>& model, const FramePair& pair,
                             const BoundingBox& init_box) {
  if (init_box.area() <= 0) throw std::invalid_argument("tracker_init: degenerate box");
  if (init_box.x < 0 || init_box.y < 0 || init_box.x + init_box.w > pair.rgb.width ||
      init_box.y + init_box.h > pair.rgb.height)
    throw std::invalid_argument("tracker_init: box outside frame");
  TrackerState<T> st;
  st.model = &model;
  st.frame_w = pair.rgb.width;
  st.frame_h = pair.rgb.height;
  const Image ev_img = normalize_event_frame(pair.event_frame);
  const auto& mc = model.cfg;
  CropResult rgb_crop = crop_region(pair.rgb, init_box, mc.template_factor,
                                    mc.backbone.template_side);
  CropResult ev_crop = crop_region(ev_img, init_box, mc.template_factor, mc.backbone.template_side);
  st.rgb_template = image_to_pixel_matrix<T>(rgb_crop.patch);
  st.ev_template = image_to_pixel_matrix<T>(ev_crop.patch);
  st.prev_box = init_box;
  st.template_hash = st.compute_template_hash();
  return st;
}

// One tracking step: search crops centered on the previous box, forward
// through the fusion branch, decode, map back to image coordinates.
template <typename T>
BoundingBox tracker_step(TrackerState<T>& st, const FramePair& pair, double* confidence = nullptr) {
  const auto& mc = st.model->cfg;
  const Image ev_img = normalize_event_frame(pair.event_frame);
  CropResult rgb_search = crop_region(pair.rgb, st.prev_box, mc.search_factor,
                                      mc.backbone.search_side);
  CropResult ev_search = crop_region(ev_img, st.prev_box, mc.search_factor,
                                     mc.backbone.search_side);
  ModelInputs<T> in;
  in.rgb_template = st.rgb_template;
  in.ev_template = st.ev_template;
  in.rgb_search = image_to_pixel_matrix<T>(rgb_search.patch);
  in.ev_search = image_to_pixel_matrix<T>(ev_search.patch);

  InferenceOut io = st.model->forward_infer(in);
  const BoundingBox in_patch = decode_box(io.maps, mc.window_penalty);
  BoundingBox box = rgb_search.to_source(in_patch);

  // clip into frame bounds, keeping positive area
  box.w = std::clamp(box.w, 1.0, static_cast<double>(st.frame_w));
  box.h = std::clamp(box.h, 1.0, static_cast<double>(st.frame_h));
  box.x = std::clamp(box.x, 0.0, st.frame_w - box.w);
  box.y = std::clamp(box.y, 0.0, st.frame_h - box.h);

  st.prev_box = box;
  if (confidence != nullptr) *confidence = io.confidence;
  return box;
}

struct SequenceRun {
  std::vector<BoundingBox> trajectory;  // one box per frame
  std::vector<double> confidence;
  std::vector<double> ms_total;  // per-frame wall time incl. event stacking
  std::vector<double> ms_model;  // model forward + decode only
};

// One-pass protocol: initialize on frame 0 groundtruth, then one box per
// frame. Frame 0 reports the init box.
template <typename T>
SequenceRun run_sequence(const TrackModel<T>& model, const SequenceRecord& seq) {
  using clock = std::chrono::steady_clock;
  if (seq.n_frames() == 0) throw DataError("run_sequence: empty sequence " + seq.name);
  if (seq.absent[0] || seq.groundtruth[0].area() <= 0)
    throw DataError("run_sequence: sequence " + seq.name + " has no groundtruth for frame 0");

  SequenceRun run;
  const auto t0 = clock::now();
  FramePair first = pair_frame_with_events(seq, 0);
  TrackerState<T> st = tracker_init(model, first, seq.groundtruth[0]);
  run.trajectory.push_back(seq.groundtruth[0]);
  run.confidence.push_back(1.0);
  run.ms_total.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
  run.ms_model.push_back(run.ms_total.back());

  for (size_t i = 1; i < seq.n_frames(); ++i) {
    const auto f0 = clock::now();
    FramePair pair = pair_frame_with_events(seq, static_cast<int>(i));
    const auto f1 = clock::now();
    double conf = 0;
    run.trajectory.push_back(tracker_step(st, pair, &conf));
    const auto f2 = clock::now();
    run.confidence.push_back(conf);
    run.ms_total.push_back(std::chrono::duration<double, std::milli>(f2 - f0).count());
    run.ms_model.push_back(std::chrono::duration<double, std::milli>(f2 - f1).count());
    if (st.template_hash != st.compute_template_hash())
      throw NumericError("run_sequence: template cache mutated during tracking");
  }
  return run;
}

}  // namespace uret
