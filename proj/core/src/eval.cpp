#include "rlf/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "rlf/errors.hpp"
#include "rlf/iou.hpp"

namespace rlf::eval {

bool Region::contains(const Box3D& b) const {
  if (!bounded) return true;
  return b.cx >= x_min && b.cx <= x_max && b.cy >= y_min && b.cy <= y_max;
}

void EvalConfig::validate() const {
  for (double t : iou_threshold)
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("IoU thresholds must lie in (0, 1]");
  if (recall_points < 2) throw ConfigError("recall_points must be >= 2");
}

EvalFrame filter_region(const EvalFrame& frame, const Region& region) {
  EvalFrame out;
  out.frame_id = frame.frame_id;
  for (const auto& d : frame.detections)
    if (region.contains(d.box)) out.detections.push_back(d);
  for (const auto& g : frame.ground_truth)
    if (region.contains(g)) out.ground_truth.push_back(g);
  return out;
}

std::vector<PrPoint> precision_recall(std::span<const EvalFrame> frames, int class_id, const EvalConfig& cfg) {
  struct Ref {
    double score;
    std::size_t frame;
    std::size_t det;
  };
  std::vector<Ref> order;
  std::size_t total_gt = 0;
  std::vector<std::vector<std::size_t>> gt_idx(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t i = 0; i < frames[f].detections.size(); ++i)
      if (frames[f].detections[i].box.class_id == class_id) order.push_back({frames[f].detections[i].score, f, i});
    for (std::size_t j = 0; j < frames[f].ground_truth.size(); ++j)
      if (frames[f].ground_truth[j].class_id == class_id) gt_idx[f].push_back(j);
    total_gt += gt_idx[f].size();
  }
  std::stable_sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });

  const double thr = cfg.iou_threshold.at(static_cast<std::size_t>(class_id));
  std::vector<std::vector<bool>> taken(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) taken[f].assign(gt_idx[f].size(), false);

  std::vector<PrPoint> curve;
  curve.reserve(order.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Ref& r = order[k];
    const Box3D& det = frames[r.frame].detections[r.det].box;
    double best = -1.0;
    std::ptrdiff_t best_j = -1;
    for (std::size_t j = 0; j < gt_idx[r.frame].size(); ++j) {
      if (taken[r.frame][j]) continue;
      const double iou = rotated_iou_bev(det, frames[r.frame].ground_truth[gt_idx[r.frame][j]]);
      if (iou >= thr && iou > best) {
        best = iou;
        best_j = static_cast<std::ptrdiff_t>(j);
      }
    }
    if (best_j >= 0) {
      taken[r.frame][static_cast<std::size_t>(best_j)] = true;
      ++tp;
    }
    curve.push_back({static_cast<double>(tp) / static_cast<double>(k + 1),
                     total_gt ? static_cast<double>(tp) / static_cast<double>(total_gt) : 0.0});
  }
  return curve;
}

std::optional<double> average_precision(std::span<const EvalFrame> frames, int class_id, const EvalConfig& cfg) {
  std::size_t total_gt = 0;
  for (const auto& f : frames)
    for (const auto& g : f.ground_truth)
      if (g.class_id == class_id) ++total_gt;
  if (total_gt == 0) return std::nullopt;

  const auto curve = precision_recall(frames, class_id, cfg);
  // Interpolated precision: max precision at recall >= r.
  std::vector<double> envelope(curve.size());
  double run = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    run = std::max(run, curve[i].precision);
    envelope[i] = run;
  }
  double ap = 0.0;
  const std::size_t n = cfg.recall_points;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double r = static_cast<double>(k) / static_cast<double>(n - 1);
    while (pos < curve.size() && curve[pos].recall < r - 1e-12) ++pos;
    if (pos < curve.size()) ap += envelope[pos];
  }
  return ap / static_cast<double>(n);
}

RegionReport map_over_classes(std::span<const EvalFrame> frames, const Region& region, const EvalConfig& cfg,
                              std::vector<std::string>* warnings) {
  cfg.validate();
  std::vector<EvalFrame> filtered;
  filtered.reserve(frames.size());
  for (const auto& f : frames) filtered.push_back(filter_region(f, region));

  RegionReport rep;
  rep.region = region.name;
  double sum = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto ap = average_precision(filtered, c, cfg);
    if (!ap) {
      const std::string msg = "no ground truth for class '" + std::string(class_name(c)) + "' in region '" +
                              region.name + "'; AP undefined and excluded from mAP";
      if (warnings) warnings->push_back(msg);
      std::cerr << "warning: " << msg << '\n';
      continue;
    }
    rep.ap[std::string(class_name(c))] = *ap;
    sum += *ap;
  }
  if (!rep.ap.empty()) rep.map = sum / static_cast<double>(rep.ap.size());
  return rep;
}

MapReport evaluate(std::span<const EvalFrame> frames, const EvalConfig& cfg) {
  MapReport report;
  report.regions.push_back(map_over_classes(frames, Region::all(), cfg, &report.warnings));
  report.regions.push_back(map_over_classes(frames, cfg.corridor, cfg, &report.warnings));
  return report;
}

std::string MapReport::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& r : regions) {
    nlohmann::ordered_json rj = nlohmann::ordered_json::object();
    for (int c = 0; c < kNumClasses; ++c) {
      const std::string name(class_name(c));
      auto it = r.ap.find(name);
      rj[name] = it == r.ap.end() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(it->second);
    }
    rj["mAP"] = r.map ? nlohmann::ordered_json(*r.map) : nlohmann::ordered_json(nullptr);
    j[r.region] = std::move(rj);
  }
  return j.dump(2);
}

std::string MapReport::to_table() const {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-10s %8s %11s %8s %8s\n", "region", "car", "pedestrian", "cyclist", "mAP");
  os << buf;
  auto cell = [](const std::optional<double>& v) {
    char b[16];
    if (v) std::snprintf(b, sizeof b, "%.2f", 100.0 * *v);
    else std::snprintf(b, sizeof b, "-");
    return std::string(b);
  };
  for (const auto& r : regions) {
    std::array<std::optional<double>, kNumClasses> v;
    for (int c = 0; c < kNumClasses; ++c) {
      auto it = r.ap.find(std::string(class_name(c)));
      if (it != r.ap.end()) v[static_cast<std::size_t>(c)] = it->second;
    }
    std::snprintf(buf, sizeof buf, "%-10s %8s %11s %8s %8s\n", r.region.c_str(), cell(v[0]).c_str(),
                  cell(v[1]).c_str(), cell(v[2]).c_str(), cell(r.map).c_str());
    os << buf;
  }
  return os.str();
}

}  // namespace rlf::eval
