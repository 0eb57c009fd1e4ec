#include "uret/trainer.hpp"

namespace uret {

std::optional<TrainingPair> sample_training_pair(const SequenceRecord& seq, Rng& rng,
                                                 const TrainConfig& tc, const ModelConfig& mc) {
  // frames usable as the search end of a pair: present gt plus at least one
  // present frame within max_gap before it
  std::vector<int> present;
  for (size_t i = 0; i < seq.n_frames(); ++i)
    if (!seq.absent[i] && seq.groundtruth[i].area() > 0) present.push_back(static_cast<int>(i));
  if (present.size() < 2) return std::nullopt;

  std::vector<std::pair<int, int>> candidates;  // (template, search)
  for (size_t a = 0; a < present.size(); ++a)
    for (size_t b = a + 1; b < present.size(); ++b) {
      if (present[b] - present[a] > tc.max_gap) break;
      candidates.emplace_back(present[a], present[b]);
    }
  if (candidates.empty()) return std::nullopt;

  const auto [ti, si] = candidates[static_cast<size_t>(
      rng.uniform_int(static_cast<int64_t>(candidates.size())))];

  TrainingPair pair;
  pair.template_index = ti;
  pair.search_index = si;

  const FramePair tmpl = pair_frame_with_events(seq, ti);
  const FramePair search = pair_frame_with_events(seq, si);
  const Image tmpl_ev = normalize_event_frame(tmpl.event_frame);
  const Image search_ev = normalize_event_frame(search.event_frame);

  const BoundingBox tmpl_gt = seq.groundtruth[static_cast<size_t>(ti)];
  const BoundingBox search_gt = seq.groundtruth[static_cast<size_t>(si)];

  pair.rgb_template = crop_region(tmpl.rgb, tmpl_gt, mc.template_factor,
                                  mc.backbone.template_side);
  pair.ev_template = crop_region(tmpl_ev, tmpl_gt, mc.template_factor, mc.backbone.template_side);

  // search crop centered on a jittered groundtruth; retry jitter a few times
  // if the true center leaves the crop
  for (int attempt = 0; attempt < 8; ++attempt) {
    BoundingBox jittered = search_gt;
    if (tc.center_jitter > 0) {
      jittered.x += rng.uniform(-tc.center_jitter, tc.center_jitter) * search_gt.w;
      jittered.y += rng.uniform(-tc.center_jitter, tc.center_jitter) * search_gt.h;
    }
    if (tc.scale_jitter > 1.0) {
      const double lo = std::log(1.0 / tc.scale_jitter), hi = std::log(tc.scale_jitter);
      const double f = std::exp(rng.uniform(lo, hi));
      const double cx = jittered.cx(), cy = jittered.cy();
      jittered.w *= f;
      jittered.h *= f;
      jittered.x = cx - jittered.w / 2;
      jittered.y = cy - jittered.h / 2;
    }
    CropResult rgb_search = crop_region(search.rgb, jittered, mc.search_factor,
                                        mc.backbone.search_side);
    const BoundingBox gt_in_patch = rgb_search.to_patch(search_gt);
    const double cx = gt_in_patch.cx(), cy = gt_in_patch.cy();
    if (cx < 0 || cy < 0 || cx >= mc.backbone.search_side || cy >= mc.backbone.search_side)
      continue;
    pair.rgb_search = std::move(rgb_search);
    pair.ev_search = crop_region(search_ev, jittered, mc.search_factor, mc.backbone.search_side);
    pair.gt_in_search = gt_in_patch;
    return pair;
  }
  return std::nullopt;
}

}  // namespace uret
