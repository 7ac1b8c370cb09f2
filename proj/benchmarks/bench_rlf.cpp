#include <benchmark/benchmark.h>

#include <algorithm>
#include <cmath>

#include "rlf/gradient_suite.hpp"
#include "rlf/head.hpp"
#include "rlf/iou.hpp"
#include "rlf/model.hpp"
#include "rlf/ops.hpp"
#include "rlf/pillarize.hpp"
#include "rlf/random.hpp"
#include "rlf/synth.hpp"

using namespace rlf;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(-1.0, 1.0);
  return t;
}

Box3D random_box(Rng& rng, double spread) {
  Box3D b;
  b.cx = rng.uniform(-spread, spread);
  b.cy = rng.uniform(-spread, spread);
  b.l = rng.uniform(0.5, 5.0);
  b.w = rng.uniform(0.4, 2.5);
  b.yaw = rng.uniform(-M_PI, M_PI);
  return b;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor(rng, {n, n}), b = random_tensor(rng, {n, n});
  for (auto _ : state) {
    ad::Graph g;
    benchmark::DoNotOptimize(ad::matmul(g.constant(a), g.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

// 3x3 conv over a 64x64 map, forward and backward.
static void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  ParameterStore s;
  s.add("x", random_tensor(rng, {c, 64, 64}));
  s.add("w", random_tensor(rng, {c, c, 3, 3}));
  s.add("b", random_tensor(rng, {c}));
  for (auto _ : state) {
    ad::Graph g;
    auto y = ad::conv2d(ad::bind(g, s, "x"), ad::bind(g, s, "w"), ad::bind(g, s, "b"), 1, 1);
    g.backward(ad::sum(y));
    s.zero_grad();
  }
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_Pillarize(benchmark::State& state) {
  const auto frame = synth::generate_frame(synth::SceneSpec{}, 0);
  const GridConfig grid;
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_pillars(std::span<const LidarPoint>(frame.lidar), grid, 0).size());
    benchmark::DoNotOptimize(build_pillars(std::span<const RadarPoint>(frame.radar), grid, 0).size());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(frame.lidar.size() + frame.radar.size()));
}
BENCHMARK(BM_Pillarize)->Unit(benchmark::kMicrosecond);

static void BM_RotatedIou(benchmark::State& state) {
  Rng rng(3);
  std::vector<Box3D> boxes(256);
  for (auto& b : boxes) b = random_box(rng, 2.0);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(rotated_iou_bev(boxes[i % 256], boxes[(i * 7 + 3) % 256]));
    ++i;
  }
}
BENCHMARK(BM_RotatedIou);

static void BM_Nms(benchmark::State& state) {
  Rng rng(4);
  std::vector<Detection> dets(static_cast<std::size_t>(state.range(0)));
  for (auto& d : dets) d = {random_box(rng, 20.0), rng.uniform()};
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  for (auto _ : state) benchmark::DoNotOptimize(head::nms_sorted(dets, 0.25).size());
}
BENCHMARK(BM_Nms)->Arg(100)->Arg(500)->Unit(benchmark::kMicrosecond);

// One training step of the default model: forward, loss and backward.
static void BM_TrainStep(benchmark::State& state) {
  const Config cfg;
  const model::FusionModel m(cfg);
  ParameterStore s;
  m.init_params(s, 0);
  const auto frame = synth::generate_frame(synth::SceneSpec{}, 0);
  const auto in = m.prepare_inputs(frame);
  const auto targets = m.prepare_targets(in);
  for (auto _ : state) {
    ad::Graph g;
    const auto fwd = m.forward(g, s, in);
    g.backward(m.loss(fwd, targets, frame.frame_id).total);
    s.zero_grad();
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_Predict(benchmark::State& state) {
  const Config cfg;
  const model::FusionModel m(cfg);
  ParameterStore s;
  m.init_params(s, 0);
  const auto in = m.prepare_inputs(synth::generate_frame(synth::SceneSpec{}, 0));
  for (auto _ : state) benchmark::DoNotOptimize(m.predict(s, in).detections.size());
}
BENCHMARK(BM_Predict)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
