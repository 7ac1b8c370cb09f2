// Acceptance harness: one PASS/FAIL line per criterion.
//   acceptance [--only N] [--work DIR]

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ap_cases.hpp"
#include "oracles.hpp"
#include "rlf/bev.hpp"
#include "rlf/config.hpp"
#include "rlf/eval.hpp"
#include "rlf/experiment.hpp"
#include "rlf/frame_io.hpp"
#include "rlf/gradient_suite.hpp"
#include "rlf/head.hpp"
#include "rlf/iou.hpp"
#include "rlf/irb.hpp"
#include "rlf/model.hpp"
#include "rlf/ops.hpp"
#include "rlf/random.hpp"
#include "rlf/salc.hpp"
#include "rlf/synth.hpp"
#include "rlf/train.hpp"

namespace fs = std::filesystem;
using namespace rlf;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t failed = 0, total = 0;
  for (const auto& c : gradients::run_full_suite(0, 1e-4)) {
    ++total;
    failed += !c.passed;
    if (c.check.max_rel_error >= worst) worst = c.check.max_rel_error, worst_name = c.name;
  }
  const double secs = seconds_since(t0);
  return {failed == 0 && worst < 1e-4 && secs < 300.0,
          fmt("%zu cases, %zu failed, max rel err %.2e (%s), %.1fs", total, failed, worst, worst_name.c_str(), secs)};
}

// ---------------------------------------------------------------- 2

ParameterStore irb_toy(std::uint64_t seed) {
  irb::IrbConfig c;
  c.d = 6;
  c.weight_hidden = 5;
  ParameterStore s;
  Initializer init(seed);
  irb::init_params(s, c, init);
  Rng rng(seed + 100);
  for (auto& [name, p] : s.items())
    for (double& v : p.value.storage()) v += rng.uniform(-0.2, 0.2);
  return s;
}

salc::ShapeTargets toy_centers(const std::vector<std::array<int, 3>>& cells) {
  salc::ShapeTargets t;
  t.heat = Tensor({3, 4, 4}, 0.0);
  t.centers.resize(3);
  for (const auto& [c, r, q] : cells) {
    t.centers[static_cast<std::size_t>(c)].push_back({r, q});
    t.heat.at({static_cast<std::size_t>(c), static_cast<std::size_t>(r), static_cast<std::size_t>(q)}) = 1.0;
  }
  return t;
}

std::vector<std::vector<double>> normalized_rows(const Tensor& F, const salc::ShapeTargets& t, bool normalize) {
  std::vector<std::vector<double>> out;
  const std::size_t C = F.dim(0);
  for (std::size_t c = 0; c < t.centers.size(); ++c)
    for (const auto& pc : t.centers[c]) {
      std::vector<double> v(C);
      double n2 = 0.0;
      for (std::size_t k = 0; k < C; ++k) {
        v[k] = F.at({k, static_cast<std::size_t>(pc.row), static_cast<std::size_t>(pc.col)});
        n2 += v[k] * v[k];
      }
      if (normalize)
        for (double& x : v) x /= std::sqrt(n2 + 1e-12);
      out.push_back(v);
    }
  return out;
}

Outcome equation_oracles() {
  std::map<std::string, double> worst;
  auto note = [&](const std::string& k, double e) { worst[k] = std::max(worst[k], e); };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    {
      ParameterStore s = irb_toy(seed);
      const Tensor prs = random_tensor(rng, {2, 3, kRadarSpatialChannels});
      const Tensor prc = random_tensor(rng, {2, 3, 3});
      ad::Graph g;
      const auto out = irb::rr_branch(g.constant(prs), g.constant(prc), irb::IrbWeights::bind(g, s));
      const auto ref = oracle::rr(prs, prc, s);
      note("R-R", std::max({max_abs_diff(out.f_r_s.value(), ref.f), max_abs_diff(out.w_r_c.value(), ref.w),
                            max_abs_diff(out.p_r.value(), ref.p)}));
      const Tensor pl = random_tensor(rng, {3, 6});
      const Tensor wr = random_tensor(rng, {2, 6});
      for (bool softmax : {true, false}) {
        ad::Graph h;
        const Tensor o = irb::rl_branch(h.constant(pl), h.constant(wr), irb::IrbWeights::bind(h, s), softmax).value();
        note(softmax ? "R-L softmax" : "R-L raw", max_abs_diff(o, oracle::rl(pl, wr, s, softmax)));
      }
    }
    {
      const Tensor G = random_tensor(rng, {3, 4, 4}, 0.0, 1.0);
      Tensor T = random_tensor(rng, {3, 4, 4}, 0.0, 0.9);
      for (int k = 0; k < 3; ++k) T[rng.index(T.size())] = 1.0;
      ad::Graph g;
      note("focal", std::abs(salc::focal_shape_loss(g.constant(G), T).value().item() - oracle::focal_shape(G, T)));
    }
    {
      const Tensor F = random_tensor(rng, {3, 4, 4}, -2.0, 2.0);
      const auto t = toy_centers({{0, 0, 0}, {0, 2, 1}, {1, 1, 1}, {2, 3, 3}, {2, 0, 3}, {2, 1, 2}});
      for (bool normalize : {false, true}) {
        ad::Graph g;
        const auto m = salc::gather_instance_indicators(g.constant(F), t, seed, normalize);
        const double ref = oracle::mccont(normalized_rows(F, t, normalize), m.S, m.S_prime, m.valid);
        note("MCcont", std::abs(salc::mccont_loss(m).value().item() - ref));
      }
      // shape and final loss composition
      ad::Graph g;
      const Tensor G = random_tensor(rng, {3, 4, 4}, 0.01, 0.99);
      salc::ShapeHeatmaps maps{g.constant(F), g.constant(G), 0.1};
      salc::SalcConfig cfg;
      const auto sl = salc::shape_loss(maps, t, seed, cfg);
      const auto m = salc::gather_instance_indicators(g.constant(F), t, seed, cfg.normalize_embeddings);
      const double focal = oracle::focal_shape(G, t.heat);
      const double mc = oracle::mccont(normalized_rows(F, t, cfg.normalize_embeddings), m.S, m.S_prime, m.valid);
      note("L_shape", std::abs(sl.total.value().item() - (focal + mc)));
      const double rpn = rng.uniform(0.0, 3.0), alpha = rng.uniform(0.0, 2.0);
      const double fin = head::final_loss(g.constant(Tensor::scalar(rpn)), sl.total, alpha).value().item();
      note("L_final", std::abs(fin - (rpn + alpha * (focal + mc))));
    }
  }
  double w = 0.0;
  std::string detail = "20 seeds; max abs err";
  for (const auto& [k, e] : worst) {
    w = std::max(w, e);
    detail += fmt(" %s %.1e", k.c_str(), e);
  }
  return {w < 1e-10, detail};
}

// ---------------------------------------------------------------- 3

bool inside(const Box3D& b, double x, double y) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return std::abs(c * dx + s * dy) <= b.l / 2 && std::abs(-s * dx + c * dy) <= b.w / 2;
}

double monte_carlo_iou(const Box3D& a, const Box3D& b, std::size_t samples, Rng& rng) {
  const double r = std::max(std::hypot(a.l, a.w), std::hypot(b.l, b.w)) / 2;
  const double x0 = std::min(a.cx, b.cx) - r, x1 = std::max(a.cx, b.cx) + r;
  const double y0 = std::min(a.cy, b.cy) - r, y1 = std::max(a.cy, b.cy) + r;
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = rng.uniform(x0, x1), y = rng.uniform(y0, y1);
    const bool ia = inside(a, x, y), ib = inside(b, x, y);
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  const double uni = static_cast<double>(na + nb - both);
  return uni > 0 ? static_cast<double>(both) / uni : 0.0;
}

Box3D random_box(Rng& rng, double spread, int cls = 0) {
  Box3D b;
  b.cx = rng.uniform(-spread, spread);
  b.cy = rng.uniform(-spread, spread);
  b.l = rng.uniform(0.5, 5.0);
  b.w = rng.uniform(0.4, 2.5);
  b.yaw = rng.uniform(-M_PI, M_PI);
  b.class_id = cls;
  return b;
}

Outcome geometry_oracles() {
  Rng rng(2024);
  double iou_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Box3D a = random_box(rng, 1.5), b = random_box(rng, 1.5);
    iou_err = std::max(iou_err, std::abs(rotated_iou_bev(a, b) - monte_carlo_iou(a, b, 1000000, rng)));
  }

  std::size_t nms_mismatch = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Detection> dets(40);
    for (auto& d : dets) d = {random_box(rng, 4.0), rng.uniform()};
    std::sort(dets.begin(), dets.end(), [](const Detection& x, const Detection& y) { return x.score > y.score; });
    for (double thr : {0.1, 0.25, 0.5})
      nms_mismatch += head::nms_sorted(dets, thr) != oracle::nms(dets, thr);
  }

  std::size_t assign_mismatch = 0;
  const head::AnchorConfig acfg;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Box3D> gt, anchors;
    for (int j = 0; j < 3; ++j) gt.push_back(random_box(rng, 3.0, static_cast<int>(rng.index(kNumClasses))));
    for (int i = 0; i < 30; ++i) {
      Box3D a = gt[rng.index(gt.size())];
      a.cx += rng.uniform(-1.5, 1.5);
      a.cy += rng.uniform(-1.5, 1.5);
      a.yaw = rng.bernoulli(0.5) ? 0.0 : M_PI / 2;
      if (rng.bernoulli(0.2)) a.class_id = static_cast<int>(rng.index(kNumClasses));
      anchors.push_back(a);
    }
    const auto got = head::assign_targets(anchors, gt, acfg);
    const auto ref = oracle::assign(anchors, gt, acfg);
    assign_mismatch += got.labels != ref.labels || got.matched_gt != ref.matched_gt || got.num_positive != ref.num_positive;
  }

  std::size_t ap_mismatch = 0;
  const auto cases = testing::hand_ap_cases();
  const eval::EvalConfig ecfg;
  for (const auto& c : cases) {
    const auto got = eval::average_precision(c.frames, c.class_id, ecfg);
    const double ref = oracle::average_precision(c.frames, c.class_id, ecfg.iou_threshold[static_cast<std::size_t>(c.class_id)]);
    const bool ok = got.has_value() && std::abs(*got - ref) < 1e-12 && (c.expected < 0 || std::abs(*got - c.expected) < 1e-9);
    ap_mismatch += !ok;
  }
  return {iou_err < 1e-2 && nms_mismatch == 0 && assign_mismatch == 0 && ap_mismatch == 0 && cases.size() == 10,
          fmt("IoU max |exact - MC| %.2e over 100 pairs; NMS mismatches %zu/150; assignment mismatches %zu/50; AP "
              "mismatches %zu/%zu",
              iou_err, nms_mismatch, assign_mismatch, ap_mismatch, cases.size())};
}

// ---------------------------------------------------------------- 4

Outcome overfit(const fs::path& work) {
  const fs::path data = work / "overfit_data";
  fs::remove_all(data);
  synth::SceneSpec spec;
  spec.seed = 0;
  const auto manifest = synth::write_dataset(data, spec, 8, 0);
  const auto frames = synth::read_split(data, manifest.train);
  const Config cfg;
  const model::FusionModel m(cfg);
  ParameterStore store;
  m.init_params(store, cfg.train.seed);
  const auto t0 = Clock::now();
  const auto r = train::train_model(m, store, frames);
  const double secs = seconds_since(t0);
  if (r.numeric_failure) return {false, "numeric failure: " + r.failure};
  const double map = train::overall_map(train::evaluate_outputs(train::run_inference(m, store, frames), frames, cfg.eval));
  return {map >= 0.90 && r.steps_completed <= 2000 && secs < 1800.0,
          fmt("mAP %.4f on the 8 training frames after %zu steps, %.0fs", map, r.steps_completed, secs)};
}

// ---------------------------------------------------------------- 5

Outcome ablation_direction(const fs::path& work) {
  const fs::path data = work / "ablation_data";
  fs::remove_all(data);
  synth::SceneSpec spec;
  spec.seed = 0;
  const auto manifest = synth::write_dataset(data, spec, 250, 50);
  const auto train_frames = synth::read_split(data, manifest.train);
  const auto val_frames = synth::read_split(data, manifest.val);
  std::vector<Config> configs;
  for (std::uint64_t seed : {0, 1, 2}) {
    Config base;
    base.name = "baseline/seed" + std::to_string(seed);
    base.toggles = {false, false, false};
    base.train.seed = seed;
    Config full;
    full.name = "full/seed" + std::to_string(seed);
    full.train.seed = seed;
    configs.push_back(base);
    configs.push_back(full);
  }
  experiment::AblationOptions opts;
  opts.out_dir = work / "ablation";
  const auto t0 = Clock::now();
  opts.progress = [&](const std::string& msg) { std::fprintf(stderr, "[%.0fs] %s\n", seconds_since(t0), msg.c_str()); };
  const auto rows = experiment::run_ablation(configs, train_frames, val_frames, opts);
  std::fprintf(stderr, "%s", experiment::ablation_table(rows).c_str());
  double base = 0.0, full = 0.0;
  std::string per_seed;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    base += rows[i].map_all / 3.0;
    full += rows[i + 1].map_all / 3.0;
    per_seed += fmt(" [%.4f vs %.4f]", rows[i + 1].map_all, rows[i].map_all);
  }
  return {train_frames.size() == 200 && val_frames.size() == 50 && full - base > 0.0,
          fmt("val mAP full %.4f vs baseline %.4f (margin %+.4f), per seed full vs baseline%s", full, base, full - base,
              per_seed.c_str())};
}

// ---------------------------------------------------------------- 6

Outcome residual_identity() {
  const Config cfg;
  const model::FusionModel m(cfg);
  ParameterStore store;
  m.init_params(store, 0);
  store.get("irb.weight_mlp.w2").value.fill(0.0);
  store.get("irb.weight_mlp.b2").value.fill(0.0);
  const auto frame = synth::generate_frame(synth::SceneSpec{}, 0);
  const auto in = m.prepare_inputs(frame);
  ad::Graph g;
  const auto w = irb::IrbWeights::bind(g, store);
  const auto rr = irb::rr_branch(g.constant(in.radar_spatial), g.constant(in.radar_indicative), w);
  ad::Var wr = irb::pool_pillars(rr.w_r_c, in.radar.num_points);
  ad::Var pls = irb::pool_pillars(irb::point_mlp(g.constant(in.lidar_spatial), w.lidar_w, w.lidar_b), in.lidar.num_points);
  bool identity = wr.value() == Tensor(wr.shape(), 0.0) && wr.shape()[0] > 0;
  for (bool softmax : {true, false}) identity = identity && irb::rl_branch(pls, wr, w, softmax).value() == pls.value();

  Config off = gradients::small_config();
  off.toggles.salc = false;
  const model::FusionModel mo(off);
  ParameterStore s;
  mo.init_params(s, 1);
  gradients::jitter_params(s, 2, 0.05);
  const auto f2 = gradients::two_object_frame(1);
  const auto in2 = mo.prepare_inputs(f2);
  ad::Graph h;
  const auto fwd = mo.forward(h, s, in2);
  h.backward(mo.loss(fwd, mo.prepare_targets(in2), f2.frame_id).total);
  std::size_t nonzero = 0, shape_params = 0;
  double other = 0.0;
  for (const auto& [name, p] : s.items()) {
    const bool is_shape = name.rfind("salc.", 0) == 0;
    shape_params += is_shape;
    for (double v : p.grad.data()) (is_shape ? nonzero += v != 0.0 : other += std::abs(v));
  }
  return {identity && nonzero == 0 && shape_params > 0 && other > 0.0,
          fmt("R-L identity %s on %zu LiDAR pillars; %zu nonzero gradient entries over %zu shape parameters with SALC "
              "off",
              identity ? "exact" : "broken", pls.shape()[0], nonzero, shape_params)};
}

// ---------------------------------------------------------------- 7

Outcome push_pull() {
  ParameterStore s;
  s.add("E", Tensor::from({{1.0, 0.2}, {0.8, -0.4}, {0.6, 0.7}, {0.1, 1.0}}));
  salc::InstanceMatrix proto;
  proto.S = {{0, 1}, {2, 3}};
  proto.S_prime = {{1, 0}, {3, 2}};
  proto.valid = {true, true};
  proto.max_centers = 2;
  auto margin = [&] {
    const Tensor& E = s.get("E").value;
    auto d = [&](std::size_t h, std::size_t w) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t c = 0; c < 2; ++c)
          acc += E.at({static_cast<std::size_t>(proto.S[h][j]), c}) * E.at({static_cast<std::size_t>(proto.S_prime[w][j]), c});
      return acc;
    };
    return std::min(d(0, 0) - d(0, 1), d(1, 1) - d(1, 0));
  };
  const double before = margin();
  {
    ad::Graph g;
    salc::InstanceMatrix m = proto;
    m.embeddings = ad::bind(g, s, "E");
    m.source = m.embeddings;
    s.zero_grad();
    g.backward(salc::mccont_loss(m));
    Parameter& p = s.get("E");
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= 0.1 * p.grad[i];
  }
  const double after = margin();
  return {after > before, fmt("positive minus max negative similarity %.6f -> %.6f", before, after)};
}

// ---------------------------------------------------------------- 8

#ifdef RLF_CLI_PATH
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + RLF_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism(const fs::path& work) {
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "config.json";
  std::ofstream(cfg) << R"({"train": {"steps": 40, "warmup_steps": 5}})";
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    if (run_cli("gen-data --out " + (dir / "data").string() + " --frames 12 --seed 11", root / "gen.log") != 0)
      return {false, "gen-data failed: " + slurp(root / "gen.log")};
    if (run_cli("train --config " + cfg.string() + " --data " + (dir / "data").string() + " --out " +
                    (dir / "train").string(),
                root / "train.log") != 0)
      return {false, "train failed: " + slurp(root / "train.log")};
  }
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = root / "b" / fs::relative(e.path(), root / "a");
    differ += !fs::exists(other) || slurp(e.path()) != slurp(other);
  }
  return {files > 0 && differ == 0, fmt("%zu output files compared across two runs, %zu differ", files, differ)};
}
#else
Outcome determinism(const fs::path&) { return {false, "built without the rlf CLI"}; }
#endif

// ---------------------------------------------------------------- 9

Outcome tau_sweep(const fs::path& work) {
  const fs::path data = work / "tau_data";
  fs::remove_all(data);
  synth::SceneSpec spec;
  spec.seed = 3;
  const auto manifest = synth::write_dataset(data, spec, 30, 10);
  const auto train_frames = synth::read_split(data, manifest.train);
  const auto val_frames = synth::read_split(data, manifest.val);
  std::vector<Config> configs;
  for (double tau : {0.05, 0.1, 0.2}) {
    Config c;
    c.name = fmt("tau=%.2f", tau);
    c.model.tau = tau;
    c.train.steps = 300;
    configs.push_back(c);
  }
  experiment::AblationOptions opts;
  opts.out_dir = work / "tau";
  const auto rows = experiment::run_ablation(configs, train_frames, val_frames, opts);
  const std::string table = experiment::ablation_table(rows);
  std::fprintf(stderr, "%s", table.c_str());
  bool monotone = rows.size() == 3;
  std::size_t frames = 0;
  for (std::size_t k = 0; monotone && k < val_frames.size(); ++k) {
    monotone = rows[0].mask_cells.size() == val_frames.size() && rows[1].mask_cells.size() == val_frames.size() &&
               rows[2].mask_cells.size() == val_frames.size() && rows[0].mask_cells[k] >= rows[1].mask_cells[k] &&
               rows[1].mask_cells[k] >= rows[2].mask_cells[k];
    frames += monotone;
  }
  bool named = true;
  for (const char* n : {"tau=0.05", "tau=0.10", "tau=0.20"}) named = named && table.find(n) != std::string::npos;
  std::string counts;
  for (const auto& r : rows) {
    std::size_t total = 0;
    for (auto c : r.mask_cells) total += c;
    counts += fmt(" %s:%zu", r.name.c_str(), total);
  }
  return {monotone && named, fmt("%zu rows, monotone on %zu/%zu frames, total mask cells%s", rows.size(), frames,
                                 val_frames.size(), counts.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  std::string work = (fs::temp_directory_path() / "rlf_acceptance").string();
  app.add_option("--only", only, "Run a single criterion (1-9)")->check(CLI::Range(1, 9));
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"equation oracles", equation_oracles},
      {"geometry oracles", geometry_oracles},
      {"overfit 8 frames", [&] { return overfit(work); }},
      {"ablation direction", [&] { return ablation_direction(work); }},
      {"residual identity", residual_identity},
      {"contrastive push-pull", push_pull},
      {"determinism", [&] { return determinism(work); }},
      {"tau sweep", [&] { return tau_sweep(work); }},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && static_cast<std::size_t>(only) != i + 1) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %zu %-22s %s  %s\n", i + 1, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
