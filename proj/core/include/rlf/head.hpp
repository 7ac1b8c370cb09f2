#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rlf/bev.hpp"
#include "rlf/box.hpp"
#include "rlf/graph.hpp"
#include "rlf/parameters.hpp"
#include "rlf/pillarize.hpp"

// Anchor-based detection head: per cell, per class, two yaw hypotheses.
namespace rlf::head {

struct ClassAnchor {
  double l, w, h;
  double z_center;
  double match_iou;
  double unmatch_iou;
};

struct AnchorConfig {
  std::array<ClassAnchor, kNumClasses> classes{{
      {4.2, 1.8, 1.6, 0.8, 0.6, 0.45},
      {0.6, 0.6, 1.7, 0.85, 0.5, 0.35},
      {1.8, 0.6, 1.7, 0.85, 0.5, 0.35},
  }};
  std::array<double, 2> yaws{0.0, 1.5707963267948966};

  void validate() const;
  static constexpr std::size_t per_cell() { return kNumClasses * 2; }
};

// Anchor index = a * H * W + row * W + col with a = class * 2 + yaw.
struct AnchorGrid {
  std::vector<Box3D> anchors;
  std::size_t per_cell = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

AnchorGrid make_anchors(const GridConfig& grid, const AnchorConfig& cfg);

// (dx, dy, dz, dl, dw, dh, dtheta): planar offsets over the anchor diagonal,
// dz over anchor height, log size ratios, and the wrapped yaw difference.
using Deltas = std::array<double, 7>;
Deltas encode_box(const Box3D& gt, const Box3D& anchor);
Box3D decode_box(const Deltas& deltas, const Box3D& anchor);

// Direction bin of a yaw: 0 for [0, pi), 1 for [pi, 2pi) after wrapping.
int direction_bin(double yaw);

struct AnchorTargets {
  std::vector<std::int8_t> labels;  // 1 positive, 0 negative, -1 ignored
  std::vector<Deltas> box;          // valid for positives
  std::vector<std::uint8_t> dir;    // valid for positives
  std::vector<int> matched_gt;      // -1 when unmatched
  std::size_t num_positive = 0;
};

// Anchors compare only against ground truth of their own class. Positive when
// IoU >= match or the anchor is (one of) the best for some box; negative when
// IoU < unmatch; ignored otherwise.
AnchorTargets assign_targets(std::span<const Box3D> anchors, std::span<const Box3D> gt, const AnchorConfig& cfg);

void init_params(ParameterStore& store, std::size_t in_channels, Initializer& init);

struct HeadOutput {
  ad::Var cls;  // [A, H, W]
  ad::Var box;  // [A * 7, H, W]
  ad::Var dir;  // [A * 2, H, W]
};

// Three 1x1 convolutions over the fused BEV map.
HeadOutput head_forward(const bev::BevFeatureMap& fused, ad::Graph& g, ParameterStore& store);

struct LossWeights {
  double cls = 1.0;
  double box = 2.0;
  double dir = 0.2;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double smooth_l1_beta = 1.0 / 9.0;
};

struct RpnLoss {
  ad::Var total;
  ad::Var cls;
  ad::Var box;
  ad::Var dir;
};

// Sigmoid focal loss over non-ignored anchors; anchor layout as above.
ad::Var focal_classification_loss(ad::Var cls, const std::vector<std::int8_t>& labels, double alpha, double gamma,
                                  double normalizer);
// Smooth-L1 over positive anchors; the yaw channel enters as sin(pred - target).
ad::Var box_regression_loss(ad::Var box, const AnchorTargets& targets, double beta, double normalizer);
// Two-way softmax cross-entropy over positive anchors.
ad::Var direction_loss(ad::Var dir, const AnchorTargets& targets, double normalizer);

// L = w_cls L_cls + w_box L_box + w_dir L_dir, normalized by max(1, #positives).
RpnLoss rpn_loss(const HeadOutput& out, const AnchorTargets& targets, const LossWeights& weights);

// L_final = L_RPN + alpha L_shape
ad::Var final_loss(ad::Var rpn, ad::Var shape, double alpha);

struct DecodeConfig {
  double score_threshold = 0.1;
  double nms_iou = 0.25;
  std::size_t max_detections = 100;
  std::size_t pre_nms_top_k = 1000;
};

// Greedy rotated-BEV NMS over detections sorted by descending score; returns
// kept indices in order.
std::vector<std::size_t> nms_sorted(std::span<const Detection> sorted, double iou_threshold);

std::vector<Detection> decode_and_nms(const Tensor& cls, const Tensor& box, const Tensor& dir, const AnchorGrid& anchors,
                                      const DecodeConfig& cfg);

}  // namespace rlf::head
