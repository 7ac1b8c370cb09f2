#include "rlf/gradient_suite.hpp"

#include <cmath>
#include <functional>
#include <numbers>

#include "rlf/bev.hpp"
#include "rlf/head.hpp"
#include "rlf/irb.hpp"
#include "rlf/model.hpp"
#include "rlf/ops.hpp"
#include "rlf/random.hpp"
#include "rlf/salc.hpp"

namespace rlf::gradients {

using ad::Graph;
using ad::Var;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

// sum(y * R) for a fixed random R, so that every output element carries a
// distinct weight.
Var weighted_sum(Graph& g, Var y, const Tensor& r) { return ad::sum(ad::mul(y, g.constant(r))); }

CaseResult check_case(const std::string& name, ParameterStore& store, const ScalarFn& fn, double tol,
                      std::size_t elements = 0, std::uint64_t seed = 0) {
  GradCheckOptions opts;
  opts.max_elements_per_param = elements;
  opts.seed = seed;
  CaseResult r{name, grad_check(store, fn, opts), false};
  r.passed = r.check.max_rel_error < tol;
  return r;
}

using Builder = std::function<Var(Graph&, ParameterStore&)>;

// One or two random inputs "a", "b" plus a random readout of the op's output.
CaseResult unary(const std::string& name, Rng& rng, Shape in, const std::function<Var(Var)>& op, double tol) {
  ParameterStore s;
  s.add("a", random_tensor(rng, in));
  Graph probe;
  probe.set_grad_enabled(false);
  const Shape out = op(probe.constant(s.get("a").value)).shape();
  const Tensor r = random_tensor(rng, out);
  return check_case(name, s, [&, r](Graph& g, ParameterStore& st) { return weighted_sum(g, op(ad::bind(g, st, "a")), r); },
                    tol);
}

CaseResult binary(const std::string& name, Rng& rng, Shape sa, Shape sb, const std::function<Var(Var, Var)>& op,
                  double tol) {
  ParameterStore s;
  s.add("a", random_tensor(rng, sa));
  s.add("b", random_tensor(rng, sb));
  Graph probe;
  probe.set_grad_enabled(false);
  const Shape out = op(probe.constant(s.get("a").value), probe.constant(s.get("b").value)).shape();
  const Tensor r = random_tensor(rng, out);
  return check_case(
      name, s,
      [&, r](Graph& g, ParameterStore& st) {
        return weighted_sum(g, op(ad::bind(g, st, "a"), ad::bind(g, st, "b")), r);
      },
      tol);
}

CaseResult conv_case(const std::string& name, Rng& rng, Shape x, std::size_t cout, std::size_t k, int stride, int pad,
                     double tol) {
  ParameterStore s;
  s.add("x", random_tensor(rng, x));
  s.add("w", random_tensor(rng, {cout, x[0], k, k}));
  s.add("b", random_tensor(rng, {cout}));
  Graph probe;
  probe.set_grad_enabled(false);
  const Shape out = ad::conv2d(probe.constant(s.get("x").value), probe.constant(s.get("w").value),
                               probe.constant(s.get("b").value), stride, pad)
                        .shape();
  const Tensor r = random_tensor(rng, out);
  return check_case(
      name, s,
      [=](Graph& g, ParameterStore& st) {
        return weighted_sum(
            g, ad::conv2d(ad::bind(g, st, "x"), ad::bind(g, st, "w"), ad::bind(g, st, "b"), stride, pad), r);
      },
      tol);
}

PillarSet fake_pillars(Rng& rng, Modality m, std::size_t n, std::size_t P, std::size_t rows, std::size_t cols) {
  PillarSet ps;
  ps.modality = m;
  const std::size_t C = m == Modality::radar ? kRadarSpatialChannels : kLidarChannels;
  ps.spatial = Tensor({n, P, C});
  if (m == Modality::radar) ps.indicative = Tensor({n, P, kIndicativeChannels});
  std::vector<std::size_t> cells(rows * cols);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  for (std::size_t i = 0; i < n; ++i) std::swap(cells[i], cells[i + rng.index(cells.size() - i)]);
  std::vector<std::size_t> chosen(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t i = 0; i < n; ++i) {
    ps.coords.push_back({static_cast<int>(chosen[i] / cols), static_cast<int>(chosen[i] % cols)});
    const int k = 1 + static_cast<int>(rng.index(P));
    ps.num_points.push_back(k);
    for (int p = 0; p < k; ++p) {
      for (std::size_t c = 0; c < C; ++c) ps.spatial.storage()[(i * P + static_cast<std::size_t>(p)) * C + c] = rng.uniform(-1, 1);
      if (m == Modality::radar) {
        for (std::size_t c = 0; c < kIndicativeChannels; ++c) {
          ps.indicative.storage()[(i * P + static_cast<std::size_t>(p)) * kIndicativeChannels + c] = rng.uniform(-1, 1);
        }
      }
    }
  }
  return ps;
}

}  // namespace

void jitter_params(ParameterStore& store, std::uint64_t seed, double amplitude) {
  Rng rng(seed);
  for (auto& [name, p] : store.items()) {
    for (double& v : p.value.storage()) v += rng.uniform(-amplitude, amplitude);
  }
}

Config small_config() {
  Config c;
  c.name = "gradient-suite";
  c.grid.x_min = 0.0;
  c.grid.x_max = 12.8;
  c.grid.y_min = -6.4;
  c.grid.y_max = 6.4;
  c.grid.max_points_per_pillar = 8;
  c.model.d = 8;
  c.model.weight_hidden = 8;
  c.model.lidar_block_channels = 8;
  c.model.lidar_out_channels = 8;
  c.model.radar_block_channels = 8;
  c.model.radar_out_channels = 8;
  c.model.shape_hidden = 4;
  return c;
}

synth::Frame two_object_frame(std::uint64_t seed) {
  synth::SceneSpec spec;
  spec.seed = seed;
  spec.classes[kCar].min_count = spec.classes[kCar].max_count = 1;
  spec.classes[kPedestrian].min_count = spec.classes[kPedestrian].max_count = 1;
  spec.classes[kCyclist].min_count = spec.classes[kCyclist].max_count = 0;
  spec.area_x_min = 1.0;
  spec.area_x_max = 12.4;
  spec.area_y_min = -6.0;
  spec.area_y_max = 6.0;
  spec.sparse_fraction = 0.0;
  spec.lidar_ground_points = 120;
  spec.clutter_rate = 6;
  return synth::generate_frame(spec, 0);
}

std::vector<CaseResult> run_op_suite(std::uint64_t seed, double tol) {
  Rng rng(derive_seed(seed, 11));
  std::vector<CaseResult> out;
  out.push_back(binary("matmul", rng, {5, 4}, {4, 3}, [](Var a, Var b) { return ad::matmul(a, b); }, tol));
  out.push_back(unary("transpose", rng, {3, 5}, [](Var a) { return ad::transpose(a); }, tol));
  out.push_back(binary("add", rng, {4, 3}, {4, 3}, [](Var a, Var b) { return ad::add(a, b); }, tol));
  out.push_back(binary("sub", rng, {4, 3}, {4, 3}, [](Var a, Var b) { return ad::sub(a, b); }, tol));
  out.push_back(binary("mul", rng, {4, 3}, {4, 3}, [](Var a, Var b) { return ad::mul(a, b); }, tol));
  out.push_back(unary("scale", rng, {4, 3}, [](Var a) { return ad::scale(a, -1.7); }, tol));
  out.push_back(binary("add_bias", rng, {2, 3, 4}, {4}, [](Var a, Var b) { return ad::add_bias(a, b); }, tol));
  out.push_back(unary("sigmoid", rng, {6, 5}, [](Var a) { return ad::sigmoid(a); }, tol));
  out.push_back(unary("relu", rng, {6, 5}, [](Var a) { return ad::relu(a); }, tol));
  out.push_back(unary("reshape", rng, {2, 3, 4}, [](Var a) { return ad::reshape(a, {6, 4}); }, tol));
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Shape sb{2, 3, 4};
    sb[axis] = 2;
    out.push_back(binary("concat/axis" + std::to_string(axis), rng, {2, 3, 4}, sb,
                         [axis](Var a, Var b) { return ad::concat({a, b}, axis); }, tol));
  }
  out.push_back(unary("slice", rng, {3, 5, 2}, [](Var a) { return ad::slice(a, 1, 1, 4); }, tol));
  out.push_back(unary("reduce_max/axis0", rng, {4, 5}, [](Var a) { return ad::reduce_max(a, 0); }, tol));
  out.push_back(unary("reduce_max/axis1", rng, {3, 4, 5}, [](Var a) { return ad::reduce_max(a, 1); }, tol));
  out.push_back(unary("softmax/axis0", rng, {4, 3}, [](Var a) { return ad::softmax(a, 0); }, tol));
  out.push_back(unary("softmax/axis1", rng, {4, 3}, [](Var a) { return ad::softmax(a, 1); }, tol));
  out.push_back(unary("normalize_rows", rng, {4, 3}, [](Var a) { return ad::normalize_rows(a); }, tol));
  out.push_back(unary("sum", rng, {4, 3}, [](Var a) { return ad::sum(a); }, tol));
  out.push_back(unary("mean", rng, {4, 3}, [](Var a) { return ad::mean(a); }, tol));
  out.push_back(unary("gather", rng, {5, 3}, [](Var a) { return ad::gather(a, {4, 0, 4, 2}); }, tol));
  out.push_back(unary("scatter_add", rng, {4, 3}, [](Var a) { return ad::scatter_add(a, {1, 3, 1, 0}, 5); }, tol));
  out.push_back(unary("pool_max", rng, {4, 3, 5}, [](Var a) { return ad::pool_max(a, {3, 0, 1, 2}); }, tol));
  out.push_back(conv_case("conv2d/k3s1p1", rng, {2, 8, 8}, 4, 3, 1, 1, tol));
  out.push_back(conv_case("conv2d/k3s2p1", rng, {2, 7, 7}, 3, 3, 2, 1, tol));
  out.push_back(conv_case("conv2d/k3s2p0", rng, {2, 9, 9}, 3, 3, 2, 0, tol));
  out.push_back(conv_case("conv2d/k3s1p0", rng, {2, 6, 5}, 2, 3, 1, 0, tol));
  out.push_back(conv_case("conv2d/k1s1p0", rng, {3, 4, 5}, 2, 1, 1, 0, tol));
  out.push_back(unary("zero_pad_end", rng, {2, 4, 4}, [](Var a) { return ad::zero_pad_end(a); }, tol));
  out.push_back(unary("upsample_nearest", rng, {2, 3, 4}, [](Var a) { return ad::upsample_nearest(a, 2); }, tol));
  {
    ParameterStore s;
    s.add("x", random_tensor(rng, {5, 4}));
    s.add("w", random_tensor(rng, {4, 3}));
    s.add("b", random_tensor(rng, {3}));
    const Tensor r = random_tensor(rng, {5, 3});
    out.push_back(check_case(
        "linear", s,
        [r](Graph& g, ParameterStore& st) {
          return weighted_sum(g, ad::linear(ad::bind(g, st, "x"), ad::bind(g, st, "w"), ad::bind(g, st, "b")), r);
        },
        tol));
  }
  return out;
}

std::vector<CaseResult> run_module_suite(std::uint64_t seed, double tol) {
  Rng rng(derive_seed(seed, 12));
  std::vector<CaseResult> out;
  const std::size_t rows = 8, cols = 8, P = 4;
  const PillarSet radar = fake_pillars(rng, Modality::radar, 5, P, rows, cols);
  const PillarSet lidar = fake_pillars(rng, Modality::lidar, 9, P, rows, cols);

  irb::IrbConfig icfg;
  icfg.d = 6;
  icfg.weight_hidden = 5;
  {
    ParameterStore s;
    Initializer init(derive_seed(seed, 1));
    irb::init_params(s, icfg, init);
    jitter_params(s, derive_seed(seed, 2), 0.1);
    const Tensor r = random_tensor(rng, {radar.size(), icfg.d});
    out.push_back(check_case("irb/rr_branch+pool", s, [&, r](Graph& g, ParameterStore& st) {
      const auto w = irb::IrbWeights::bind(g, st);
      const auto rr = irb::rr_branch(g.constant(radar.spatial), g.constant(radar.indicative), w);
      return weighted_sum(g, irb::pool_pillars(rr.p_r, radar.num_points), r);
    }, tol));
    for (bool softmax : {true, false}) {
      const Tensor rl = random_tensor(rng, {lidar.size(), icfg.d});
      out.push_back(check_case(std::string("irb/full softmax=") + (softmax ? "on" : "off"), s,
                               [&, rl, softmax](Graph& g, ParameterStore& st) {
                                 const auto w = irb::IrbWeights::bind(g, st);
                                 const auto rr = irb::rr_branch(g.constant(radar.spatial), g.constant(radar.indicative), w);
                                 Var wp = irb::pool_pillars(rr.w_r_c, radar.num_points);
                                 Var pl = irb::pool_pillars(irb::point_mlp(g.constant(lidar.spatial), w.lidar_w, w.lidar_b),
                                                            lidar.num_points);
                                 return weighted_sum(g, irb::rl_branch(pl, wp, w, softmax), rl);
                               }, tol));
    }
  }

  GridConfig grid;
  grid.x_min = 0.0;
  grid.x_max = 3.2;
  grid.y_min = -1.6;
  grid.y_max = 1.6;
  {
    ParameterStore s;
    Initializer init(derive_seed(seed, 3));
    const bev::BackboneConfig bc{4, 4, 6};
    bev::init_backbone(s, "bb", bc, init);
    s.add("emb", random_tensor(rng, {lidar.size(), 4}));
    jitter_params(s, derive_seed(seed, 4), 0.1);
    const Tensor r = random_tensor(rng, {6, rows, cols});
    out.push_back(check_case("bev/scatter+backbone", s, [&, r](Graph& g, ParameterStore& st) {
      auto map = bev::scatter_to_bev(ad::bind(g, st, "emb"), lidar.coords, grid, Modality::lidar);
      return weighted_sum(g, bev::backbone_forward(map, g, st, "bb").features, r);
    }, tol));
  }

  salc::SalcConfig scfg;
  scfg.in_channels = 4;
  scfg.hidden = 3;
  scfg.radar_channels = 3;
  std::vector<Box3D> labels;
  {
    Box3D a;
    a.cx = 0.9, a.cy = -0.5, a.cz = 0.8, a.l = 1.2, a.w = 0.8, a.h = 1.6, a.yaw = 0.3, a.class_id = kCar;
    Box3D b = a;
    b.cx = 2.3, b.cy = 0.7, b.l = 0.6, b.w = 0.6, b.yaw = -1.1, b.class_id = kPedestrian;
    Box3D c = a;
    c.cx = 0.7, c.cy = 1.0, c.l = 0.9, c.w = 0.5, c.yaw = 2.0, c.class_id = kCyclist;
    Box3D d = b;
    d.cx = 2.6, d.cy = -1.0;
    labels = {a, b, c, d};
  }
  const salc::ShapeTargets targets = salc::make_shape_targets(labels, grid, kNumClasses);
  {
    ParameterStore s;
    Initializer init(derive_seed(seed, 5));
    salc::init_params(s, scfg, init);
    s.add("lidar_bev", random_tensor(rng, {4, rows, cols}));
    s.add("radar_bev", random_tensor(rng, {3, rows, cols}));
    jitter_params(s, derive_seed(seed, 6), 0.1);
    // Larger last-layer weights give the shape losses a non-trivial gradient.
    for (double& v : s.get("salc.shape.conv2.w").value.storage()) v *= 10.0;
    out.push_back(check_case("salc/shape_network+focal", s, [&](Graph& g, ParameterStore& st) {
      const auto maps = salc::shape_network({ad::bind(g, st, "lidar_bev"), Modality::lidar}, g, st, scfg);
      return salc::focal_shape_loss(maps.heat, targets.heat);
    }, tol));
    out.push_back(check_case("salc/gather+mccont", s, [&](Graph& g, ParameterStore& st) {
      const auto maps = salc::shape_network({ad::bind(g, st, "lidar_bev"), Modality::lidar}, g, st, scfg);
      return salc::mccont_loss(salc::gather_instance_indicators(maps.logits, targets, seed));
    }, tol));
    const Tensor r = random_tensor(rng, {3, rows, cols});
    out.push_back(check_case("salc/fuse_radar_bev", s, [&, r](Graph& g, ParameterStore& st) {
      const auto maps = salc::shape_network({ad::bind(g, st, "lidar_bev"), Modality::lidar}, g, st, scfg);
      const auto fused = salc::fuse_radar_bev({ad::bind(g, st, "radar_bev"), Modality::radar}, maps, g, st);
      return weighted_sum(g, fused.features, r);
    }, tol));
  }
  {
    ParameterStore s;
    Initializer init(derive_seed(seed, 7));
    head::init_params(s, 5, init);
    s.add("bev", random_tensor(rng, {5, rows, cols}));
    jitter_params(s, derive_seed(seed, 8), 0.1);
    const head::AnchorConfig acfg;
    const auto anchors = head::make_anchors(grid, acfg);
    const auto at = head::assign_targets(anchors.anchors, labels, acfg);
    const head::LossWeights lw;
    out.push_back(check_case("head/forward+rpn_loss", s, [&](Graph& g, ParameterStore& st) {
      const auto ho = head::head_forward({ad::bind(g, st, "bev"), Modality::lidar}, g, st);
      return head::rpn_loss(ho, at, lw).total;
    }, tol));
  }
  return out;
}

CaseResult run_end_to_end(const Config& cfg, const synth::Frame& frame, std::uint64_t seed, double tol,
                          std::size_t elements_per_param) {
  const model::FusionModel m(cfg);
  ParameterStore store;
  m.init_params(store, seed);
  jitter_params(store, derive_seed(seed, 21), 0.05);
  const model::FrameInputs in = m.prepare_inputs(frame);
  const model::FrameTargets t = m.prepare_targets(in);
  return check_case("end_to_end/final_loss", store, [&](Graph& g, ParameterStore& st) {
    return m.loss(m.forward(g, st, in), t, in.frame_id).total;
  }, tol, elements_per_param, seed);
}

std::vector<CaseResult> run_full_suite(std::uint64_t seed, double tol) {
  std::vector<CaseResult> all = run_op_suite(seed, tol);
  for (auto& r : run_module_suite(seed, tol)) all.push_back(std::move(r));
  all.push_back(run_end_to_end(small_config(), two_object_frame(seed), seed, tol));
  return all;
}

}  // namespace rlf::gradients
