#pragma once

// Loop-level reference implementations used as independent oracles. They read
// plain tensors and never touch the autodiff graph.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rlf/eval.hpp"
#include "rlf/head.hpp"
#include "rlf/iou.hpp"
#include "rlf/parameters.hpp"
#include "rlf/tensor.hpp"

namespace rlf::oracle {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y = act(x W + b) for one row
inline std::vector<double> dense(const std::vector<double>& x, const Tensor& w, const Tensor& b, bool relu) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  std::vector<double> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double acc = b[o];
    for (std::size_t i = 0; i < in; ++i) acc += x[i] * w[i * out + o];
    y[o] = relu ? std::max(0.0, acc) : acc;
  }
  return y;
}

inline std::vector<double> row(const Tensor& t, std::size_t a, std::size_t b) {
  const std::size_t c = t.dim(2);
  std::vector<double> r(c);
  for (std::size_t k = 0; k < c; ++k) r[k] = t.at({a, b, k});
  return r;
}

struct RrResult {
  Tensor f, w, p;
};

inline RrResult rr(const Tensor& prs, const Tensor& prc, const ParameterStore& s) {
  const std::size_t N = prs.dim(0), P = prs.dim(1);
  const Tensor& rw = s.get("irb.radar_mlp.w").value;
  const std::size_t d = rw.dim(1);
  RrResult r{Tensor({N, P, d}), Tensor({N, P, d}), Tensor({N, P, d})};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < P; ++p) {
      const auto f = dense(row(prs, n, p), rw, s.get("irb.radar_mlp.b").value, true);
      std::vector<double> joint = row(prc, n, p);
      joint.insert(joint.end(), f.begin(), f.end());
      const auto h = dense(joint, s.get("irb.weight_mlp.w1").value, s.get("irb.weight_mlp.b1").value, true);
      const auto w = dense(h, s.get("irb.weight_mlp.w2").value, s.get("irb.weight_mlp.b2").value, false);
      for (std::size_t k = 0; k < d; ++k) {
        r.f.at({n, p, k}) = f[k];
        r.w.at({n, p, k}) = w[k];
        r.p.at({n, p, k}) = sigmoid(w[k]) * f[k];
      }
    }
  return r;
}

inline Tensor rl(const Tensor& pl, const Tensor& wr, const ParameterStore& s, bool softmax) {
  const std::size_t M = pl.dim(0), N = wr.dim(0), d = pl.dim(1);
  Tensor out = pl;
  if (N == 0) return out;
  const Tensor& qw = s.get("irb.query.w").value;
  const Tensor& qb = s.get("irb.query.b").value;
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> x(d);
    for (std::size_t k = 0; k < d; ++k) x[k] = pl.at({m, k});
    const auto q = dense(x, qw, qb, false);
    std::vector<double> a(N);
    for (std::size_t n = 0; n < N; ++n) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += q[k] * wr.at({n, k});
      a[n] = dot / std::sqrt(static_cast<double>(d));
    }
    if (softmax) {
      double z = 0.0;
      for (double v : a) z += std::exp(v);
      for (double& v : a) v = std::exp(v) / z;
    }
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t n = 0; n < N; ++n) out.at({m, k}) += a[n] * wr.at({n, k});
  }
  return out;
}

inline Tensor pool(const Tensor& x, const std::vector<int>& counts) {
  const std::size_t n = x.dim(0), d = x.dim(2);
  Tensor out({n, d}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      if (counts[i] == 0) continue;
      double m = x.at({i, 0, c});
      for (int p = 1; p < counts[i]; ++p) m = std::max(m, x.at({i, static_cast<std::size_t>(p), c}));
      out.at({i, c}) = m;
    }
  return out;
}

inline double focal_shape(const Tensor& G, const Tensor& T, double gamma = 2.0, double beta = 4.0) {
  double total = 0.0;
  int centers = 0;
  for (std::size_t i = 0; i < G.size(); ++i) {
    const double g = std::min(std::max(G[i], 1e-6), 1.0 - 1e-6);
    if (T[i] == 1.0) {
      ++centers;
      total -= std::pow(1.0 - g, gamma) * std::log(g);
    } else {
      total -= std::pow(1.0 - T[i], beta) * std::pow(g, gamma) * std::log(1.0 - g);
    }
  }
  return total / std::max(centers, 1);
}

// Contrastive loss straight from its definition: rows h pair S(h,:) with
// S'(h,:); negatives are S'(w,:) for w != h. emb[k] is an embedding vector.
inline double mccont(const std::vector<std::vector<double>>& emb, const std::vector<std::vector<int>>& S,
                     const std::vector<std::vector<int>>& Sp, const std::vector<bool>& valid) {
  std::vector<std::size_t> rows;
  for (std::size_t h = 0; h < valid.size(); ++h)
    if (valid[h]) rows.push_back(h);
  if (rows.size() < 2) return 0.0;
  const double M = static_cast<double>(S[rows[0]].size());
  auto d = [&](std::size_t h, std::size_t w) {
    double acc = 0.0;
    for (std::size_t m = 0; m < S[h].size(); ++m)
      for (std::size_t c = 0; c < emb[0].size(); ++c)
        acc += emb[static_cast<std::size_t>(S[h][m])][c] * emb[static_cast<std::size_t>(Sp[w][m])][c];
    return acc;
  };
  double L = 0.0;
  for (std::size_t h : rows) {
    double denom = 0.0;
    for (std::size_t w : rows)
      if (w != h) denom += std::exp(d(h, w) / (M * M));
    L += std::log(std::exp(d(h, h) / (M * M)) / denom);
  }
  return -L / static_cast<double>(rows.size());
}

inline double smooth_l1(double x, double beta) {
  const double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

struct RpnTerms {
  double cls = 0, box = 0, dir = 0, total = 0;
};

// cls [A,H,W], box [A*7,H,W], dir [A*2,H,W]; anchor index a*H*W + cell.
inline RpnTerms rpn(const Tensor& cls, const Tensor& box, const Tensor& dir, const head::AnchorTargets& t,
                    const head::LossWeights& w) {
  const std::size_t hw = cls.dim(1) * cls.dim(2);
  RpnTerms r;
  const double norm = static_cast<double>(std::max<std::size_t>(t.num_positive, 1));
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    if (t.labels[i] < 0) continue;
    const double p = sigmoid(cls[i]);
    if (t.labels[i] == 1) {
      r.cls -= w.focal_alpha * std::pow(1.0 - p, w.focal_gamma) * std::log(p);
      const std::size_t a = i / hw, cell = i % hw;
      for (std::size_t k = 0; k < 7; ++k) {
        const double pred = box[(a * 7 + k) * hw + cell];
        const double diff = k == 6 ? std::sin(pred - t.box[i][k]) : pred - t.box[i][k];
        r.box += smooth_l1(diff, w.smooth_l1_beta);
      }
      const double l0 = dir[(a * 2) * hw + cell], l1 = dir[(a * 2 + 1) * hw + cell];
      const double pt = std::exp(t.dir[i] ? l1 : l0) / (std::exp(l0) + std::exp(l1));
      r.dir -= std::log(pt);
    } else {
      r.cls -= (1.0 - w.focal_alpha) * std::pow(p, w.focal_gamma) * std::log(1.0 - p);
    }
  }
  r.cls /= norm;
  r.box /= norm;
  r.dir /= norm;
  r.total = w.cls * r.cls + w.box * r.box + w.dir * r.dir;
  return r;
}

// Exhaustive IoU assignment: every anchor against every same-class box.
inline head::AnchorTargets assign(const std::vector<Box3D>& anchors, const std::vector<Box3D>& gt,
                                  const head::AnchorConfig& cfg) {
  head::AnchorTargets t;
  const std::size_t n = anchors.size();
  t.labels.assign(n, 0);
  t.box.assign(n, head::Deltas{});
  t.dir.assign(n, 0);
  t.matched_gt.assign(n, -1);
  std::vector<std::vector<double>> iou(n, std::vector<double>(gt.size(), 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < gt.size(); ++j)
      if (anchors[i].class_id == gt[j].class_id) iou[i][j] = rotated_iou_bev(anchors[i], gt[j]);
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t j = 0; j < gt.size(); ++j)
      if (iou[i][j] > best) best = iou[i][j], arg = static_cast<int>(j);
    const auto& ca = cfg.classes[static_cast<std::size_t>(anchors[i].class_id)];
    if (best >= ca.match_iou) t.labels[i] = 1, t.matched_gt[i] = arg;
    else if (best >= ca.unmatch_iou) t.labels[i] = -1;
  }
  for (std::size_t j = 0; j < gt.size(); ++j) {
    double best = 0.0;
    for (std::size_t i = 0; i < n; ++i) best = std::max(best, iou[i][j]);
    if (best <= 0.0) continue;
    for (std::size_t i = 0; i < n; ++i)
      if (iou[i][j] == best) t.labels[i] = 1, t.matched_gt[i] = static_cast<int>(j);
  }
  for (std::size_t i = 0; i < n; ++i)
    if (t.labels[i] == 1) {
      ++t.num_positive;
      t.box[i] = head::encode_box(gt[static_cast<std::size_t>(t.matched_gt[i])], anchors[i]);
    }
  return t;
}

// Keeps a box when it overlaps no already-kept box above the threshold.
inline std::vector<std::size_t> nms(const std::vector<Detection>& sorted, double thr) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    bool ok = true;
    for (std::size_t k : keep) ok = ok && rotated_iou_bev(sorted[i].box, sorted[k].box) <= thr;
    if (ok) keep.push_back(i);
  }
  return keep;
}

// Brute-force PR evaluator: score-ordered greedy matching, then the
// interpolated precision at each recall level taken as the maximum over the
// whole tail of the curve.
inline double average_precision(const std::vector<eval::EvalFrame>& frames, int cls, double thr, int points = 41) {
  struct Item {
    double score;
    std::size_t frame, det;
  };
  std::vector<Item> items;
  std::size_t npos = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t d = 0; d < frames[f].detections.size(); ++d)
      if (frames[f].detections[d].box.class_id == cls) items.push_back({frames[f].detections[d].score, f, d});
    for (const auto& g : frames[f].ground_truth) npos += g.class_id == cls;
  }
  if (npos == 0) return -1.0;
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
  std::vector<std::vector<bool>> used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) used[f].assign(frames[f].ground_truth.size(), false);
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& fr = frames[items[k].frame];
    const Box3D& b = fr.detections[items[k].det].box;
    double best = -1.0;
    int arg = -1;
    for (std::size_t g = 0; g < fr.ground_truth.size(); ++g) {
      if (used[items[k].frame][g] || fr.ground_truth[g].class_id != cls) continue;
      const double iou = rotated_iou_bev(b, fr.ground_truth[g]);
      if (iou >= thr && iou > best) best = iou, arg = static_cast<int>(g);
    }
    if (arg >= 0) used[items[k].frame][static_cast<std::size_t>(arg)] = true, ++tp;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(npos));
  }
  double ap = 0.0;
  for (int i = 0; i < points; ++i) {
    const double r = static_cast<double>(i) / (points - 1);
    double p = 0.0;
    for (std::size_t k = 0; k < prec.size(); ++k)
      if (rec[k] >= r - 1e-12) p = std::max(p, prec[k]);
    ap += p;
  }
  return ap / points;
}

}  // namespace rlf::oracle
