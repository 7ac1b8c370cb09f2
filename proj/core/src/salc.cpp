#include "rlf/salc.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "rlf/errors.hpp"
#include "rlf/ops.hpp"
#include "rlf/random.hpp"

namespace rlf::salc {

using ad::Var;

namespace {

constexpr double kClampEps = 1e-6;

Var conv(ad::Graph& g, ParameterStore& store, const std::string& name, Var x) {
  return ad::conv2d(x, ad::bind(g, store, name + ".w"), ad::bind(g, store, name + ".b"), 1, 1);
}

void warn(std::vector<std::string>* sink, const std::string& msg) {
  if (sink) sink->push_back(msg);
  std::cerr << "warning: " << msg << '\n';
}

}  // namespace

void init_params(ParameterStore& store, const SalcConfig& cfg, Initializer& init) {
  const std::size_t h = cfg.hidden, n = cfg.num_classes;
  store.add("salc.shape.conv0.w", init.he_uniform({h, cfg.in_channels, 3, 3}, cfg.in_channels * 9));
  store.add("salc.shape.conv0.b", init.constant({h}, 0.0));
  store.add("salc.shape.conv1.w", init.he_uniform({h, h, 3, 3}, h * 9));
  store.add("salc.shape.conv1.b", init.constant({h}, 0.0));
  Tensor last = init.he_uniform({n, h, 3, 3}, h * 9);
  for (double& v : last.data()) v *= 0.1;
  store.add("salc.shape.conv2.w", std::move(last));
  // Background prior so that the initial heatmaps start near zero.
  store.add("salc.shape.conv2.b", init.constant({n}, -2.19));
  const std::size_t cr = cfg.radar_channels;
  store.add("salc.fuse.w", init.he_uniform({cr, cr + n, 3, 3}, (cr + n) * 9));
  store.add("salc.fuse.b", init.constant({cr}, 0.0));
}

ShapeHeatmaps shape_network(const bev::BevFeatureMap& lidar_bev, ad::Graph& g, ParameterStore& store,
                            const SalcConfig& cfg) {
  Var x = ad::relu(conv(g, store, "salc.shape.conv0", lidar_bev.features));
  x = ad::relu(conv(g, store, "salc.shape.conv1", x));
  Var f = conv(g, store, "salc.shape.conv2", x);
  return {f, ad::sigmoid(f), cfg.tau};
}

std::size_t ShapeTargets::num_instances() const {
  std::size_t n = 0;
  for (const auto& c : centers) n += c.size();
  return n;
}

ShapeTargets make_shape_targets(std::span<const Box3D> labels, const GridConfig& grid, std::size_t num_classes,
                                std::vector<std::string>* warnings) {
  const int H = grid.rows(), W = grid.cols();
  const double ps = grid.pillar_size;
  ShapeTargets t;
  t.heat = Tensor({num_classes, static_cast<std::size_t>(H), static_cast<std::size_t>(W)}, 0.0);
  t.centers.assign(num_classes, {});
  const std::size_t plane = static_cast<std::size_t>(H) * static_cast<std::size_t>(W);

  for (const Box3D& box : labels) {
    if (box.class_id < 0 || static_cast<std::size_t>(box.class_id) >= num_classes) {
      throw IndexError("label class " + std::to_string(box.class_id) + " outside [0, num_classes)");
    }
    if (!(box.l > 0.0) || !(box.w > 0.0)) {
      warn(warnings, "skipping degenerate box with zero extent");
      continue;
    }
    double* channel = t.heat.data().data() + static_cast<std::size_t>(box.class_id) * plane;
    const double sigma = std::hypot(box.l, box.w) / ps / 6.0;
    const double r_ext = 0.5 * std::hypot(box.l, box.w);
    const int c0 = std::max(0, static_cast<int>(std::floor((box.cx - r_ext - grid.x_min) / ps)));
    const int c1 = std::min(W - 1, static_cast<int>(std::floor((box.cx + r_ext - grid.x_min) / ps)));
    const int r0 = std::max(0, static_cast<int>(std::floor((box.cy - r_ext - grid.y_min) / ps)));
    const int r1 = std::min(H - 1, static_cast<int>(std::floor((box.cy + r_ext - grid.y_min) / ps)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double x = grid.cell_center_x(c), y = grid.cell_center_y(r);
        if (!bev_contains(box, x, y)) continue;
        const double dr = std::hypot(x - box.cx, y - box.cy) / ps;
        const double v = std::max(0.5, std::exp(-dr * dr / (2.0 * sigma * sigma)));
        double& cell = channel[static_cast<std::size_t>(r) * W + c];
        cell = std::max(cell, std::min(v, std::nextafter(1.0, 0.0)));
      }
    }
    const int cc = static_cast<int>(std::floor((box.cx - grid.x_min) / ps));
    const int cr = static_cast<int>(std::floor((box.cy - grid.y_min) / ps));
    if (cc < 0 || cc >= W || cr < 0 || cr >= H) {
      warn(warnings, "box center outside grid; footprint clipped, no center emitted");
      continue;
    }
    double& center = channel[static_cast<std::size_t>(cr) * W + cc];
    auto& list = t.centers[static_cast<std::size_t>(box.class_id)];
    const PillarCoord pc{cr, cc};
    if (std::find(list.begin(), list.end(), pc) == list.end()) list.push_back(pc);
    center = 1.0;
  }
  return t;
}

std::vector<std::uint8_t> threshold_filter(const Tensor& heat, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ContractError("tau must lie in (0, 1)");
  std::vector<std::uint8_t> mask(heat.size());
  for (std::size_t i = 0; i < heat.size(); ++i) mask[i] = heat[i] >= tau ? 1 : 0;
  return mask;
}

std::size_t mask_count(const std::vector<std::uint8_t>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

Var focal_shape_loss(Var heat, const Tensor& targets, double gamma, double beta) {
  const Tensor& gv = heat.value();
  if (gv.shape() != targets.shape()) {
    throw DimensionError("focal_shape_loss: " + shape_str(gv.shape()) + " vs " + shape_str(targets.shape()));
  }
  std::size_t positives = 0;
  for (double t : targets.data())
    if (t >= 1.0) ++positives;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(positives, 1));

  double total = 0.0;
  for (std::size_t i = 0; i < gv.size(); ++i) {
    const double g = std::clamp(gv[i], kClampEps, 1.0 - kClampEps);
    const double t = targets[i];
    if (t >= 1.0) {
      total += -std::pow(1.0 - g, gamma) * std::log(g);
    } else {
      total += -std::pow(1.0 - t, beta) * std::pow(g, gamma) * std::log(1.0 - g);
    }
  }
  ad::Graph& graph = *heat.graph;
  return graph.record("focal_shape_loss", Tensor::scalar(total * norm), {heat},
                      [heat, targets, gamma, beta, norm](ad::Graph& g, const Tensor& go) {
                        const Tensor& gv = g.value(heat);
                        Tensor grad(gv.shape(), 0.0);
                        for (std::size_t i = 0; i < gv.size(); ++i) {
                          const double x = gv[i];
                          if (x < kClampEps || x > 1.0 - kClampEps) continue;
                          const double t = targets[i];
                          double d;
                          if (t >= 1.0) {
                            d = gamma * std::pow(1.0 - x, gamma - 1.0) * std::log(x) - std::pow(1.0 - x, gamma) / x;
                          } else {
                            const double w = std::pow(1.0 - t, beta);
                            d = -w * (gamma * std::pow(x, gamma - 1.0) * std::log(1.0 - x) -
                                      std::pow(x, gamma) / (1.0 - x));
                          }
                          grad[i] = d * norm * go[0];
                        }
                        g.accumulate(heat, grad);
                      });
}

std::size_t InstanceMatrix::valid_rows() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

InstanceMatrix gather_instance_indicators(Var logits, const ShapeTargets& targets, std::uint64_t seed,
                                          bool normalize) {
  const Shape& s = logits.shape();
  if (s.size() != 3 || s[0] != targets.centers.size()) {
    throw DimensionError("gather_instance_indicators: logits " + shape_str(s) + " for " +
                         std::to_string(targets.centers.size()) + " classes");
  }
  const std::size_t C = s[0], H = s[1], W = s[2];
  InstanceMatrix m;
  m.source = logits;
  std::vector<std::size_t> cells;
  std::vector<std::vector<int>> members(C);
  for (std::size_t n = 0; n < C; ++n) {
    for (const PillarCoord& pc : targets.centers[n]) {
      members[n].push_back(static_cast<int>(cells.size()));
      cells.push_back(static_cast<std::size_t>(pc.row) * W + static_cast<std::size_t>(pc.col));
    }
    m.max_centers = std::max(m.max_centers, members[n].size());
  }
  Var per_cell = ad::transpose(ad::reshape(logits, {C, H * W}));  // [HW, C]
  m.embeddings = ad::gather(per_cell, cells);
  if (normalize && !cells.empty()) m.embeddings = ad::normalize_rows(m.embeddings);

  const std::size_t M = m.max_centers;
  m.S.assign(C, std::vector<int>(M, -1));
  m.S_prime.assign(C, std::vector<int>(M, -1));
  m.valid.assign(C, false);
  for (std::size_t n = 0; n < C; ++n) {
    const auto& ids = members[n];
    if (ids.empty()) continue;
    m.valid[n] = true;
    Rng rng(derive_seed(seed, n));
    for (std::size_t j = 0; j < M; ++j) m.S[n][j] = j < ids.size() ? ids[j] : ids[rng.index(ids.size())];
    for (std::size_t j = 0; j < M; ++j) m.S_prime[n][j] = m.S[n][(j + 1) % M];
  }
  return m;
}

Var mccont_loss(const InstanceMatrix& m) {
  ad::Graph& graph = *m.source.graph;
  std::vector<std::size_t> rows;
  for (std::size_t n = 0; n < m.valid.size(); ++n)
    if (m.valid[n]) rows.push_back(n);
  if (rows.size() < 2) return graph.constant(Tensor::scalar(0.0));

  const Tensor& E = m.embeddings.value();
  const std::size_t dim = E.dim(1);
  const std::size_t M = m.max_centers;
  const std::size_t nv = rows.size();
  const double inv_m2 = 1.0 / static_cast<double>(M * M);

  auto emb = [&E, dim](int id) { return E.data().data() + static_cast<std::size_t>(id) * dim; };
  std::vector<double> z(nv * nv, 0.0);
  for (std::size_t a = 0; a < nv; ++a) {
    for (std::size_t b = 0; b < nv; ++b) {
      double d = 0.0;
      for (std::size_t j = 0; j < M; ++j) {
        const double* u = emb(m.S[rows[a]][j]);
        const double* v = emb(m.S_prime[rows[b]][j]);
        for (std::size_t c = 0; c < dim; ++c) d += u[c] * v[c];
      }
      z[a * nv + b] = d * inv_m2;
    }
  }
  // Row-wise softmax over negatives and the per-row loss.
  std::vector<double> p(nv * nv, 0.0);
  double loss = 0.0;
  for (std::size_t a = 0; a < nv; ++a) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < nv; ++b)
      if (b != a) mx = std::max(mx, z[a * nv + b]);
    double sum = 0.0;
    for (std::size_t b = 0; b < nv; ++b)
      if (b != a) sum += (p[a * nv + b] = std::exp(z[a * nv + b] - mx));
    for (std::size_t b = 0; b < nv; ++b)
      if (b != a) p[a * nv + b] /= sum;
    loss += -z[a * nv + a] + mx + std::log(sum);
  }
  loss /= static_cast<double>(nv);

  return graph.record(
      "mccont_loss", Tensor::scalar(loss), {m.embeddings},
      [emb_var = m.embeddings, S = m.S, Sp = m.S_prime, rows, p, M, dim, nv, inv_m2](ad::Graph& g, const Tensor& go) {
        const Tensor& E = g.value(emb_var);
        Tensor grad(E.shape(), 0.0);
        const double scale = go[0] / static_cast<double>(nv) * inv_m2;
        for (std::size_t a = 0; a < nv; ++a) {
          for (std::size_t b = 0; b < nv; ++b) {
            const double dz = (a == b ? -1.0 : p[a * nv + b]) * scale;
            if (dz == 0.0) continue;
            for (std::size_t j = 0; j < M; ++j) {
              const std::size_t u = static_cast<std::size_t>(S[rows[a]][j]);
              const std::size_t v = static_cast<std::size_t>(Sp[rows[b]][j]);
              for (std::size_t c = 0; c < dim; ++c) {
                grad[u * dim + c] += dz * E[v * dim + c];
                grad[v * dim + c] += dz * E[u * dim + c];
              }
            }
          }
        }
        g.accumulate(emb_var, grad);
      });
}

ShapeLoss shape_loss(const ShapeHeatmaps& maps, const ShapeTargets& targets, std::uint64_t seed,
                     const SalcConfig& cfg) {
  ShapeLoss out;
  out.focal = focal_shape_loss(maps.heat, targets.heat, cfg.focal_gamma, cfg.focal_beta);
  const InstanceMatrix m = gather_instance_indicators(maps.logits, targets, seed, cfg.normalize_embeddings);
  out.mccont_active = m.valid_rows() >= 2;
  out.mccont = mccont_loss(m);
  out.total = ad::add(out.focal, out.mccont);
  return out;
}

bev::BevFeatureMap fuse_radar_bev(const bev::BevFeatureMap& radar, const ShapeHeatmaps& maps, ad::Graph& g,
                                  ParameterStore& store) {
  const Shape& rs = radar.features.shape();
  const Shape& hs = maps.heat.shape();
  if (rs.size() != 3 || hs.size() != 3 || rs[1] != hs[1] || rs[2] != hs[2]) {
    throw DimensionError("fuse_radar_bev: spatial mismatch " + shape_str(rs) + " vs " + shape_str(hs));
  }
  Var joint = ad::concat({radar.features, maps.heat}, 0);
  Var out = ad::relu(ad::conv2d(joint, ad::bind(g, store, "salc.fuse.w"), ad::bind(g, store, "salc.fuse.b"), 1, 1));
  return {out, radar.modality};
}

}  // namespace rlf::salc
