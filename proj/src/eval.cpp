#include "uret/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace uret {

double box_iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double center_error(const BoundingBox& pred, const BoundingBox& gt) {
  const double dx = pred.cx() - gt.cx();
  const double dy = pred.cy() - gt.cy();
  return std::sqrt(dx * dx + dy * dy);
}

double normalized_center_error(const BoundingBox& pred, const BoundingBox& gt) {
  if (gt.w <= 0 || gt.h <= 0) throw std::invalid_argument("normalized_center_error: zero-size gt");
  const double dx = (pred.cx() - gt.cx()) / gt.w;
  const double dy = (pred.cy() - gt.cy()) / gt.h;
  return std::sqrt(dx * dx + dy * dy);
}

namespace {

OPEResult evaluate_frames(const std::vector<double>& errs, const std::vector<double>& norm_errs,
                          const std::vector<double>& ious) {
  OPEResult r;
  r.n_frames = errs.size();
  r.precision_curve.assign(51, 0.0);
  r.norm_precision_curve.assign(51, 0.0);
  r.success_curve.assign(21, 0.0);
  if (errs.empty()) return r;
  const double n = static_cast<double>(errs.size());
  for (int i = 0; i <= 50; ++i) {
    const double thr = static_cast<double>(i);
    const double nthr = static_cast<double>(i) * 0.01;
    size_t hit = 0, nhit = 0;
    for (size_t f = 0; f < errs.size(); ++f) {
      if (errs[f] <= thr) ++hit;
      if (norm_errs[f] <= nthr) ++nhit;
    }
    r.precision_curve[static_cast<size_t>(i)] = hit / n;
    r.norm_precision_curve[static_cast<size_t>(i)] = nhit / n;
  }
  for (int i = 0; i <= 20; ++i) {
    // tiny slack absorbs the rounding of (x+w)-x so identical boxes land in
    // the IoU=1 bucket
    const double thr = i * 0.05 - 1e-9;
    size_t hit = 0;
    for (double v : ious)
      if (v >= thr) ++hit;
    r.success_curve[static_cast<size_t>(i)] = hit / n;
  }
  r.pr_at_20 = r.precision_curve[20];
  double npr_sum = 0, sr_sum = 0;
  for (double v : r.norm_precision_curve) npr_sum += v;
  for (double v : r.success_curve) sr_sum += v;
  r.npr = npr_sum / static_cast<double>(r.norm_precision_curve.size());
  r.sr_auc = sr_sum / static_cast<double>(r.success_curve.size());
  return r;
}

void check_monotone(const OPEResult& r) {
  for (size_t i = 1; i < r.precision_curve.size(); ++i)
    if (r.precision_curve[i] + 1e-12 < r.precision_curve[i - 1])
      throw NumericError("precision curve not non-decreasing");
  for (size_t i = 1; i < r.success_curve.size(); ++i)
    if (r.success_curve[i] - 1e-12 > r.success_curve[i - 1])
      throw NumericError("success curve not non-increasing");
}

void collect(const std::vector<Trajectory>& trajectories,
             const std::vector<const SequenceRecord*>& sequences,
             std::vector<double>& errs, std::vector<double>& norm_errs,
             std::vector<double>& ious) {
  if (trajectories.size() != sequences.size())
    throw DataError("ope_evaluate: " + std::to_string(trajectories.size()) + " trajectories for " +
                    std::to_string(sequences.size()) + " sequences");
  for (size_t s = 0; s < sequences.size(); ++s) {
    const SequenceRecord& seq = *sequences[s];
    const Trajectory& traj = trajectories[s];
    if (traj.size() != seq.n_frames())
      throw DataError("ope_evaluate: trajectory for '" + seq.name + "' has " +
                      std::to_string(traj.size()) + " boxes for " +
                      std::to_string(seq.n_frames()) + " frames");
    for (size_t f = 0; f < traj.size(); ++f) {
      if (seq.absent[f]) continue;
      const BoundingBox& gt = seq.groundtruth[f];
      if (gt.w <= 0 || gt.h <= 0) continue;  // zero-size gt frames are excluded
      errs.push_back(center_error(traj[f], gt));
      norm_errs.push_back(normalized_center_error(traj[f], gt));
      ious.push_back(box_iou(traj[f], gt));
    }
  }
}

}  // namespace

OPEResult ope_evaluate(const std::vector<Trajectory>& trajectories,
                       const std::vector<const SequenceRecord*>& sequences) {
  std::vector<double> errs, norm_errs, ious;
  collect(trajectories, sequences, errs, norm_errs, ious);
  OPEResult r = evaluate_frames(errs, norm_errs, ious);
  check_monotone(r);
  return r;
}

std::map<std::string, OPEResult> attribute_report(
    const std::vector<Trajectory>& trajectories,
    const std::vector<const SequenceRecord*>& sequences) {
  std::map<std::string, OPEResult> out;
  for (const auto& code : attribute_vocabulary()) {
    std::vector<Trajectory> sub_t;
    std::vector<const SequenceRecord*> sub_s;
    for (size_t i = 0; i < sequences.size(); ++i) {
      if (sequences[i]->attributes.count(code)) {
        sub_t.push_back(trajectories[i]);
        sub_s.push_back(sequences[i]);
      }
    }
    if (sub_s.empty()) continue;
    out[code] = ope_evaluate(sub_t, sub_s);
  }
  return out;
}

namespace {

std::string svg_color(size_t i) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                   "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  return kPalette[i % 8];
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// Minimal line-plot SVG: axes, one polyline per tracker, AUC-ranked legend.
std::string render_plot(const std::string& title, const std::string& x_label, double x_max,
                        const std::vector<std::pair<std::string, const std::vector<double>*>>& lines,
                        const std::vector<double>& ranks) {
  const int w = 640, h = 480, ml = 60, mr = 200, mt = 40, mb = 50;
  const int pw = w - ml - mr, ph = h - mt - mb;
  std::ostringstream s;
  s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  s << "<rect width='" << w << "' height='" << h << "' fill='white'/>\n";
  s << "<text x='" << ml + pw / 2 << "' y='20' text-anchor='middle' font-size='16'>" << title
    << "</text>\n";
  for (int g = 0; g <= 10; ++g) {
    const int gx = ml + g * pw / 10;
    const int gy = mt + ph - g * ph / 10;
    s << "<line x1='" << gx << "' y1='" << mt << "' x2='" << gx << "' y2='" << mt + ph
      << "' stroke='#eeeeee'/>\n";
    s << "<line x1='" << ml << "' y1='" << gy << "' x2='" << ml + pw << "' y2='" << gy
      << "' stroke='#eeeeee'/>\n";
    char lbl[32];
    std::snprintf(lbl, sizeof(lbl), "%.2f", x_max * g / 10.0);
    s << "<text x='" << gx << "' y='" << mt + ph + 18 << "' text-anchor='middle' font-size='10'>"
      << lbl << "</text>\n";
    std::snprintf(lbl, sizeof(lbl), "%.1f", g / 10.0);
    s << "<text x='" << ml - 8 << "' y='" << gy + 4 << "' text-anchor='end' font-size='10'>" << lbl
      << "</text>\n";
  }
  s << "<rect x='" << ml << "' y='" << mt << "' width='" << pw << "' height='" << ph
    << "' fill='none' stroke='black'/>\n";
  s << "<text x='" << ml + pw / 2 << "' y='" << h - 12 << "' text-anchor='middle' font-size='12'>"
    << x_label << "</text>\n";

  // legend order: descending AUC
  std::vector<size_t> order(lines.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return ranks[a] > ranks[b]; });

  for (size_t li = 0; li < lines.size(); ++li) {
    const auto& curve = *lines[li].second;
    s << "<polyline fill='none' stroke='" << svg_color(li) << "' stroke-width='2' points='";
    for (size_t i = 0; i < curve.size(); ++i) {
      const double fx = ml + static_cast<double>(i) / (curve.size() - 1) * pw;
      const double fy = mt + (1.0 - curve[i]) * ph;
      s << fx << "," << fy << " ";
    }
    s << "'/>\n";
  }
  int ly = mt + 10;
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const size_t li = order[oi];
    char lbl[160];
    std::snprintf(lbl, sizeof(lbl), "[%.3f] %s", ranks[li], lines[li].first.c_str());
    s << "<line x1='" << ml + pw + 10 << "' y1='" << ly << "' x2='" << ml + pw + 34 << "' y2='" << ly
      << "' stroke='" << svg_color(li) << "' stroke-width='2'/>\n";
    s << "<text x='" << ml + pw + 40 << "' y='" << ly + 4 << "' font-size='11'>" << lbl
      << "</text>\n";
    ly += 18;
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

void emit_plots(const std::map<std::string, OPEResult>& per_tracker,
                const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw DataError("emit_plots: cannot create " + out_dir.string());

  for (const auto& [name, r] : per_tracker) {
    std::string csv;
    for (size_t i = 0; i < r.precision_curve.size(); ++i)
      csv += "precision," + format_value(static_cast<double>(i)) + "," +
             format_value(r.precision_curve[i]) + "\n";
    for (size_t i = 0; i < r.norm_precision_curve.size(); ++i)
      csv += "norm_precision," + format_value(i * 0.01) + "," +
             format_value(r.norm_precision_curve[i]) + "\n";
    for (size_t i = 0; i < r.success_curve.size(); ++i)
      csv += "success," + format_value(i * 0.05) + "," + format_value(r.success_curve[i]) + "\n";
    write_file_atomic(out_dir / ("curves_" + name + ".csv"), csv);
  }

  std::vector<std::pair<std::string, const std::vector<double>*>> prec_lines, succ_lines;
  std::vector<double> prec_rank, succ_rank;
  for (const auto& [name, r] : per_tracker) {
    prec_lines.push_back({name, &r.precision_curve});
    prec_rank.push_back(r.pr_at_20);
    succ_lines.push_back({name, &r.success_curve});
    succ_rank.push_back(r.sr_auc);
  }
  write_file_atomic(out_dir / "precision_plot.svg",
                    render_plot("Precision plot", "center error threshold (px)", 50.0, prec_lines,
                                prec_rank));
  write_file_atomic(out_dir / "success_plot.svg",
                    render_plot("Success plot", "IoU threshold", 1.0, succ_lines, succ_rank));
}

OPEResult read_curve_file(const std::filesystem::path& path) {
  OPEResult r;
  for (const auto& line : split(read_text_file(path), '\n')) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    auto fields = split(t, ',');
    if (fields.size() != 3) throw DataError("bad curve row '" + t + "' in " + path.string());
    const double value = std::stod(fields[2]);
    if (fields[0] == "precision") {
      r.precision_curve.push_back(value);
    } else if (fields[0] == "norm_precision") {
      r.norm_precision_curve.push_back(value);
    } else if (fields[0] == "success") {
      r.success_curve.push_back(value);
    } else {
      throw DataError("unknown curve metric '" + fields[0] + "' in " + path.string());
    }
  }
  if (!r.precision_curve.empty()) r.pr_at_20 = r.precision_curve[std::min<size_t>(20, r.precision_curve.size() - 1)];
  double npr_sum = 0, sr_sum = 0;
  for (double v : r.norm_precision_curve) npr_sum += v;
  for (double v : r.success_curve) sr_sum += v;
  if (!r.norm_precision_curve.empty()) r.npr = npr_sum / static_cast<double>(r.norm_precision_curve.size());
  if (!r.success_curve.empty()) r.sr_auc = sr_sum / static_cast<double>(r.success_curve.size());
  return r;
}

}  // namespace uret
