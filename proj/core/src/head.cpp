#include "rlf/head.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "rlf/errors.hpp"
#include "rlf/iou.hpp"
#include "rlf/ops.hpp"

namespace rlf::head {

using ad::Var;

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double smooth_l1(double x, double beta) {
  const double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
  const double a = std::abs(x);
  if (a < beta) return x / beta;
  return x > 0.0 ? 1.0 : -1.0;
}

}  // namespace

void AnchorConfig::validate() const {
  for (const auto& c : classes) {
    if (!(c.l > 0 && c.w > 0 && c.h > 0)) throw ConfigError("anchor sizes must be positive");
    if (!(c.match_iou > c.unmatch_iou)) throw ConfigError("anchor match IoU must exceed unmatch IoU");
  }
}

AnchorGrid make_anchors(const GridConfig& grid, const AnchorConfig& cfg) {
  cfg.validate();
  AnchorGrid out;
  out.per_cell = AnchorConfig::per_cell();
  out.height = static_cast<std::size_t>(grid.rows());
  out.width = static_cast<std::size_t>(grid.cols());
  out.anchors.reserve(out.per_cell * out.height * out.width);
  for (std::size_t a = 0; a < out.per_cell; ++a) {
    const int cls = static_cast<int>(a / 2);
    const ClassAnchor& ca = cfg.classes[static_cast<std::size_t>(cls)];
    for (std::size_t r = 0; r < out.height; ++r) {
      for (std::size_t c = 0; c < out.width; ++c) {
        Box3D b;
        b.cx = grid.cell_center_x(static_cast<int>(c));
        b.cy = grid.cell_center_y(static_cast<int>(r));
        b.cz = ca.z_center;
        b.l = ca.l;
        b.w = ca.w;
        b.h = ca.h;
        b.yaw = cfg.yaws[a % 2];
        b.class_id = cls;
        out.anchors.push_back(b);
      }
    }
  }
  return out;
}

Deltas encode_box(const Box3D& gt, const Box3D& a) {
  const double diag = std::hypot(a.l, a.w);
  return {(gt.cx - a.cx) / diag,        (gt.cy - a.cy) / diag,   (gt.cz - a.cz) / a.h,
          std::log(gt.l / a.l),         std::log(gt.w / a.w),    std::log(gt.h / a.h),
          normalize_yaw(gt.yaw - a.yaw)};
}

Box3D decode_box(const Deltas& d, const Box3D& a) {
  const double diag = std::hypot(a.l, a.w);
  Box3D b;
  b.cx = a.cx + d[0] * diag;
  b.cy = a.cy + d[1] * diag;
  b.cz = a.cz + d[2] * a.h;
  b.l = a.l * std::exp(d[3]);
  b.w = a.w * std::exp(d[4]);
  b.h = a.h * std::exp(d[5]);
  b.yaw = normalize_yaw(a.yaw + d[6]);
  b.class_id = a.class_id;
  return b;
}

int direction_bin(double yaw) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double r = std::fmod(yaw, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  return r >= std::numbers::pi ? 1 : 0;
}

AnchorTargets assign_targets(std::span<const Box3D> anchors, std::span<const Box3D> gt, const AnchorConfig& cfg) {
  const std::size_t n = anchors.size();
  AnchorTargets t;
  t.labels.assign(n, 0);
  t.box.assign(n, Deltas{});
  t.dir.assign(n, 0);
  t.matched_gt.assign(n, -1);
  if (gt.empty()) return t;

  std::vector<double> best_iou(n, 0.0);
  std::vector<int> best_gt(n, -1);
  std::vector<double> gt_best(gt.size(), 0.0);
  std::vector<std::vector<std::pair<std::size_t, double>>> overlaps(gt.size());

  for (std::size_t j = 0; j < gt.size(); ++j) {
    const Box3D& g = gt[j];
    const double rg = 0.5 * std::hypot(g.l, g.w);
    for (std::size_t i = 0; i < n; ++i) {
      const Box3D& a = anchors[i];
      if (a.class_id != g.class_id) continue;
      const double reach = rg + 0.5 * std::hypot(a.l, a.w);
      const double dx = a.cx - g.cx, dy = a.cy - g.cy;
      if (dx * dx + dy * dy >= reach * reach) continue;
      const double iou = rotated_iou_bev(a, g);
      if (iou <= 0.0) continue;
      overlaps[j].emplace_back(i, iou);
      if (iou > best_iou[i]) {
        best_iou[i] = iou;
        best_gt[i] = static_cast<int>(j);
      }
      gt_best[j] = std::max(gt_best[j], iou);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const ClassAnchor& ca = cfg.classes[static_cast<std::size_t>(anchors[i].class_id)];
    if (best_iou[i] >= ca.match_iou) {
      t.labels[i] = 1;
      t.matched_gt[i] = best_gt[i];
    } else if (best_iou[i] >= ca.unmatch_iou) {
      t.labels[i] = -1;
    }
  }
  for (std::size_t j = 0; j < gt.size(); ++j) {
    if (gt_best[j] <= 0.0) continue;
    for (const auto& [i, iou] : overlaps[j]) {
      if (iou == gt_best[j]) {
        t.labels[i] = 1;
        t.matched_gt[i] = static_cast<int>(j);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (t.labels[i] != 1) continue;
    const Box3D& g = gt[static_cast<std::size_t>(t.matched_gt[i])];
    t.box[i] = encode_box(g, anchors[i]);
    t.dir[i] = static_cast<std::uint8_t>(direction_bin(g.yaw));
    ++t.num_positive;
  }
  return t;
}

void init_params(ParameterStore& store, std::size_t in_channels, Initializer& init) {
  const std::size_t A = AnchorConfig::per_cell();
  auto small = [&](std::size_t out) {
    Tensor w = init.he_uniform({out, in_channels, 1, 1}, in_channels);
    for (double& v : w.data()) v *= 0.1;
    return w;
  };
  store.add("head.cls.w", small(A));
  // Prior probability 0.01 for every anchor.
  store.add("head.cls.b", init.constant({A}, -std::log((1.0 - 0.01) / 0.01)));
  store.add("head.box.w", small(A * 7));
  store.add("head.box.b", init.constant({A * 7}, 0.0));
  store.add("head.dir.w", small(A * 2));
  store.add("head.dir.b", init.constant({A * 2}, 0.0));
}

HeadOutput head_forward(const bev::BevFeatureMap& fused, ad::Graph& g, ParameterStore& store) {
  auto conv = [&](const char* name) {
    const std::string n(name);
    return ad::conv2d(fused.features, ad::bind(g, store, n + ".w"), ad::bind(g, store, n + ".b"), 1, 0);
  };
  return {conv("head.cls"), conv("head.box"), conv("head.dir")};
}

Var focal_classification_loss(Var cls, const std::vector<std::int8_t>& labels, double alpha, double gamma,
                              double normalizer) {
  const Tensor& x = cls.value();
  if (x.size() != labels.size()) {
    throw DimensionError("focal_classification_loss: " + std::to_string(labels.size()) + " labels for " +
                         shape_str(x.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (labels[i] < 0) continue;
    const double p = 1.0 / (1.0 + std::exp(-x[i]));
    if (labels[i] == 1) {
      total += alpha * std::pow(1.0 - p, gamma) * softplus(-x[i]);
    } else {
      total += (1.0 - alpha) * std::pow(p, gamma) * softplus(x[i]);
    }
  }
  const double inv = 1.0 / normalizer;
  return cls.graph->record("focal_cls_loss", Tensor::scalar(total * inv), {cls},
                           [cls, labels, alpha, gamma, inv](ad::Graph& g, const Tensor& go) {
                             const Tensor& x = g.value(cls);
                             Tensor grad(x.shape(), 0.0);
                             for (std::size_t i = 0; i < x.size(); ++i) {
                               if (labels[i] < 0) continue;
                               const double p = 1.0 / (1.0 + std::exp(-x[i]));
                               double d;
                               if (labels[i] == 1) {
                                 d = alpha * std::pow(1.0 - p, gamma) * (-gamma * p * softplus(-x[i]) - (1.0 - p));
                               } else {
                                 d = -(1.0 - alpha) * std::pow(p, gamma) * (-gamma * (1.0 - p) * softplus(x[i]) - p);
                               }
                               grad[i] = d * inv * go[0];
                             }
                             g.accumulate(cls, grad);
                           });
}

Var box_regression_loss(Var box, const AnchorTargets& targets, double beta, double normalizer) {
  const Tensor& x = box.value();
  const std::size_t n = targets.labels.size();
  if (x.size() != n * 7) throw DimensionError("box_regression_loss: shape " + shape_str(x.shape()));
  const std::size_t hw = x.dim(1) * x.dim(2);
  const std::size_t per_cell = x.dim(0) / 7;
  if (per_cell * hw != n) throw DimensionError("box_regression_loss: anchor count mismatch");
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < n; ++i)
    if (targets.labels[i] == 1) pos.push_back(i);

  auto at = [hw](std::size_t anchor, std::size_t k) { return ((anchor / hw) * 7 + k) * hw + anchor % hw; };
  double total = 0.0;
  for (std::size_t i : pos) {
    for (std::size_t k = 0; k < 7; ++k) {
      const double p = x[at(i, k)];
      const double diff = k < 6 ? p - targets.box[i][k] : std::sin(p - targets.box[i][k]);
      total += smooth_l1(diff, beta);
    }
  }
  const double inv = 1.0 / normalizer;
  std::vector<Deltas> tgt;
  tgt.reserve(pos.size());
  for (std::size_t i : pos) tgt.push_back(targets.box[i]);
  return box.graph->record("box_loss", Tensor::scalar(total * inv), {box},
                           [box, pos, tgt, at, beta, inv](ad::Graph& g, const Tensor& go) {
                             const Tensor& x = g.value(box);
                             Tensor grad(x.shape(), 0.0);
                             for (std::size_t q = 0; q < pos.size(); ++q) {
                               for (std::size_t k = 0; k < 7; ++k) {
                                 const std::size_t idx = at(pos[q], k);
                                 const double p = x[idx];
                                 if (k < 6) {
                                   grad[idx] = smooth_l1_grad(p - tgt[q][k], beta) * inv * go[0];
                                 } else {
                                   const double a = p - tgt[q][k];
                                   grad[idx] = smooth_l1_grad(std::sin(a), beta) * std::cos(a) * inv * go[0];
                                 }
                               }
                             }
                             g.accumulate(box, grad);
                           });
}

Var direction_loss(Var dir, const AnchorTargets& targets, double normalizer) {
  const Tensor& x = dir.value();
  const std::size_t n = targets.labels.size();
  if (x.size() != n * 2) throw DimensionError("direction_loss: shape " + shape_str(x.shape()));
  const std::size_t hw = x.dim(1) * x.dim(2);
  auto at = [hw](std::size_t anchor, std::size_t k) { return ((anchor / hw) * 2 + k) * hw + anchor % hw; };
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < n; ++i)
    if (targets.labels[i] == 1) pos.push_back(i);
  double total = 0.0;
  std::vector<std::uint8_t> bins;
  for (std::size_t i : pos) {
    const double a = x[at(i, 0)], b = x[at(i, 1)];
    const double m = std::max(a, b);
    const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
    total += lse - (targets.dir[i] ? b : a);
    bins.push_back(targets.dir[i]);
  }
  const double inv = 1.0 / normalizer;
  return dir.graph->record("dir_loss", Tensor::scalar(total * inv), {dir},
                           [dir, pos, bins, at, inv](ad::Graph& g, const Tensor& go) {
                             const Tensor& x = g.value(dir);
                             Tensor grad(x.shape(), 0.0);
                             for (std::size_t q = 0; q < pos.size(); ++q) {
                               const std::size_t ia = at(pos[q], 0), ib = at(pos[q], 1);
                               const double p1 = 1.0 / (1.0 + std::exp(x[ia] - x[ib]));
                               const double p0 = 1.0 - p1;
                               grad[ia] = (p0 - (bins[q] == 0 ? 1.0 : 0.0)) * inv * go[0];
                               grad[ib] = (p1 - (bins[q] == 1 ? 1.0 : 0.0)) * inv * go[0];
                             }
                             g.accumulate(dir, grad);
                           });
}

RpnLoss rpn_loss(const HeadOutput& out, const AnchorTargets& targets, const LossWeights& w) {
  const double norm = static_cast<double>(std::max<std::size_t>(targets.num_positive, 1));
  RpnLoss l;
  l.cls = focal_classification_loss(out.cls, targets.labels, w.focal_alpha, w.focal_gamma, norm);
  l.box = box_regression_loss(out.box, targets, w.smooth_l1_beta, norm);
  l.dir = direction_loss(out.dir, targets, norm);
  l.total = ad::add(ad::add(ad::scale(l.cls, w.cls), ad::scale(l.box, w.box)), ad::scale(l.dir, w.dir));
  return l;
}

Var final_loss(Var rpn, Var shape, double alpha) { return ad::add(rpn, ad::scale(shape, alpha)); }

std::vector<std::size_t> nms_sorted(std::span<const Detection> sorted, double iou_threshold) {
  std::vector<std::size_t> keep;
  std::vector<bool> suppressed(sorted.size(), false);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t j = i + 1; j < sorted.size(); ++j) {
      if (!suppressed[j] && rotated_iou_bev(sorted[i].box, sorted[j].box) > iou_threshold) suppressed[j] = true;
    }
  }
  return keep;
}

std::vector<Detection> decode_and_nms(const Tensor& cls, const Tensor& box, const Tensor& dir, const AnchorGrid& grid,
                                      const DecodeConfig& cfg) {
  const std::size_t n = grid.anchors.size();
  if (cls.size() != n || box.size() != 7 * n || dir.size() != 2 * n) {
    throw DimensionError("decode_and_nms: head outputs do not match the anchor grid");
  }
  const std::size_t hw = grid.height * grid.width;
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-cls[i]));
    if (s >= cfg.score_threshold) cand.emplace_back(s, i);
  }
  std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  if (cand.size() > cfg.pre_nms_top_k) cand.resize(cfg.pre_nms_top_k);

  std::vector<Detection> dets;
  dets.reserve(cand.size());
  for (const auto& [score, i] : cand) {
    const std::size_t a = i / hw, cell = i % hw;
    Deltas d;
    for (std::size_t k = 0; k < 7; ++k) d[k] = box[(a * 7 + k) * hw + cell];
    Box3D b = decode_box(d, grid.anchors[i]);
    const int bin = dir[(a * 2 + 1) * hw + cell] > dir[(a * 2) * hw + cell] ? 1 : 0;
    double base = b.yaw - std::numbers::pi * std::floor(b.yaw / std::numbers::pi);
    b.yaw = normalize_yaw(base + std::numbers::pi * bin);
    dets.push_back({b, score});
  }
  std::vector<Detection> out;
  for (std::size_t k : nms_sorted(dets, cfg.nms_iou)) {
    if (out.size() >= cfg.max_detections) break;
    out.push_back(dets[k]);
  }
  return out;
}

}  // namespace rlf::head
