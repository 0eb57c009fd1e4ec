#pragma once

#include <map>

#include "uret/data.hpp"

namespace uret {

double box_iou(const BoundingBox& a, const BoundingBox& b);
double center_error(const BoundingBox& pred, const BoundingBox& gt);
// Center offset divided per axis by the groundtruth size, then the Euclidean
// norm of the normalized offset.
double normalized_center_error(const BoundingBox& pred, const BoundingBox& gt);

// One-pass evaluation curves and headline numbers. Comparisons are inclusive
// (err <= threshold, IoU >= threshold) so perfect tracking scores exactly 1.
struct OPEResult {
  double pr_at_20 = 0;   // fraction of frames with center error <= 20 px
  double npr = 0;        // AUC of normalized precision over [0, 0.5]
  double sr_auc = 0;     // AUC of the success curve (mean over thresholds)
  std::vector<double> precision_curve;       // 51 points, thresholds 0..50 px
  std::vector<double> norm_precision_curve;  // 51 points, thresholds 0..0.5
  std::vector<double> success_curve;         // 21 points, IoU 0..1 step 0.05
  size_t n_frames = 0;   // frames with present groundtruth
};

using Trajectory = std::vector<BoundingBox>;

// Frame-level aggregation over all sequences; absent-groundtruth frames are
// excluded from every denominator.
OPEResult ope_evaluate(const std::vector<Trajectory>& trajectories,
                       const std::vector<const SequenceRecord*>& sequences);

// Metrics recomputed per attribute code over the sequences carrying it.
// Codes held by no sequence are omitted.
std::map<std::string, OPEResult> attribute_report(
    const std::vector<Trajectory>& trajectories,
    const std::vector<const SequenceRecord*>& sequences);

// Writes precision_plot.svg, success_plot.svg and curves_<name>.csv
// ("metric,threshold,value" rows) per tracker. Legends are ranked by AUC.
void emit_plots(const std::map<std::string, OPEResult>& per_tracker,
                const std::filesystem::path& out_dir);

// Round-trips the curve CSV back into the three curves of an OPEResult.
OPEResult read_curve_file(const std::filesystem::path& path);

}  // namespace uret
