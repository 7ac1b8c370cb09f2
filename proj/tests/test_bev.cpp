#include <doctest.h>

#include "rlf/bev.hpp"
#include "rlf/errors.hpp"
#include "rlf/grad_check.hpp"
#include "rlf/ops.hpp"
#include "test_util.hpp"

using namespace rlf;
using rlf::testing::random_tensor;

namespace {

GridConfig small_grid() {
  GridConfig g;
  g.x_min = 0.0;
  g.x_max = 6.4;
  g.y_min = -3.2;
  g.y_max = 3.2;
  return g;  // 16 x 16
}

ParameterStore backbone_store(std::uint64_t seed, const bev::BackboneConfig& cfg) {
  ParameterStore s;
  Initializer init(seed);
  bev::init_backbone(s, "bb", cfg, init);
  return s;
}

}  // namespace

TEST_CASE("scatter of one pillar at the origin cell") {
  ad::Graph g;
  const Tensor e = Tensor::from({{1.5, -2.0, 3.0}});
  const auto map = bev::scatter_to_bev(g.constant(e), {{0, 0}}, small_grid(), Modality::lidar);
  const Tensor& f = map.features.value();
  REQUIRE(f.shape() == Shape{3, 16, 16});
  std::size_t nonzero_cells = 0;
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c) {
      bool any = false;
      for (std::size_t k = 0; k < 3; ++k) any |= f.at({k, r, c}) != 0.0;
      nonzero_cells += any;
    }
  CHECK(nonzero_cells == 1);
  CHECK(f.at({0, 0, 0}) == 1.5);
  CHECK(f.at({2, 0, 0}) == 3.0);
}

TEST_CASE("scatter then gather reproduces the embeddings") {
  Rng rng(1);
  const Tensor e = random_tensor(rng, {5, 4});
  const std::vector<PillarCoord> coords{{0, 3}, {15, 15}, {7, 2}, {7, 3}, {2, 9}};
  ad::Graph g;
  const auto map = bev::scatter_to_bev(g.constant(e), coords, small_grid(), Modality::radar);
  CHECK(bev::gather_from_bev(map, coords).value() == e);
  CHECK(map.modality == Modality::radar);
}

TEST_CASE("scatter and gather are adjoint") {
  Rng rng(2);
  const std::vector<PillarCoord> coords{{1, 1}, {4, 12}, {9, 0}};
  const Tensor e = random_tensor(rng, {3, 2});
  const Tensor m = random_tensor(rng, {2, 16, 16});
  ad::Graph g;
  const Tensor se = bev::scatter_to_bev(g.constant(e), coords, small_grid(), Modality::lidar).features.value();
  const Tensor gm = bev::gather_from_bev({g.constant(m), Modality::lidar}, coords).value();
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < se.size(); ++i) lhs += se[i] * m[i];
  for (std::size_t i = 0; i < gm.size(); ++i) rhs += gm[i] * e[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-14));
}

TEST_CASE("scatter contract") {
  ad::Graph g;
  CHECK(bev::scatter_to_bev(g.constant(Tensor({0, 4})), {}, small_grid(), Modality::lidar).features.value() ==
        Tensor({4, 16, 16}, 0.0));
  CHECK_THROWS_AS(bev::scatter_to_bev(g.constant(Tensor({2, 4})), {{1, 1}, {1, 1}}, small_grid(), Modality::lidar),
                  ContractError);
  CHECK_THROWS_AS(bev::scatter_to_bev(g.constant(Tensor({2, 4})), {{1, 1}}, small_grid(), Modality::lidar),
                  DimensionError);
}

TEST_CASE("backbone shapes and zero behaviour") {
  const bev::BackboneConfig cfg{4, 6, 8};
  ParameterStore s = backbone_store(3, cfg);
  ad::Graph g;
  const auto out = bev::backbone_forward({g.constant(Tensor({4, 16, 12}, 0.0)), Modality::lidar}, g, s, "bb");
  CHECK(out.features.shape() == Shape{8, 16, 12});
  CHECK(out.features.value() == Tensor({8, 16, 12}, 0.0));
  CHECK_THROWS_AS(bev::backbone_forward({g.constant(Tensor({4, 10, 12})), Modality::lidar}, g, s, "bb"),
                  DimensionError);
}

TEST_CASE("backbone gradient check") {
  const bev::BackboneConfig cfg{3, 4, 5};
  ParameterStore s = backbone_store(4, cfg);
  Rng rng(4);
  for (auto& [name, p] : s.items())
    for (double& v : p.value.storage()) v += rng.uniform(-0.1, 0.1);
  s.add("x", random_tensor(rng, {3, 8, 8}));
  const Tensor r = random_tensor(rng, {5, 8, 8});
  const auto res = grad_check(s, [&](ad::Graph& g, ParameterStore& st) {
    const auto out = bev::backbone_forward({ad::bind(g, st, "x"), Modality::lidar}, g, st, "bb");
    return ad::sum(ad::mul(out.features, g.constant(r)));
  });
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("property: shifting the input by 4 cells shifts the output by 4 cells") {
  const bev::BackboneConfig cfg{3, 4, 5};
  ParameterStore s = backbone_store(5, cfg);
  Rng rng(5);
  const std::size_t H = 32, W = 32;
  Tensor x({3, H, W}, 0.0), shifted({3, H, W}, 0.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 8; r < 20; ++r)
      for (std::size_t q = 8; q < 20; ++q) {
        x.at({c, r, q}) = rng.uniform(-1, 1);
        shifted.at({c, r + 4, q + 4}) = x.at({c, r, q});
      }
  ad::Graph g;
  const Tensor a = bev::backbone_forward({g.constant(x), Modality::lidar}, g, s, "bb").features.value();
  const Tensor b = bev::backbone_forward({g.constant(shifted), Modality::lidar}, g, s, "bb").features.value();
  double worst = 0.0;
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t r = 4; r < H - 8; ++r)
      for (std::size_t q = 4; q < W - 8; ++q) worst = std::max(worst, std::abs(a.at({c, r, q}) - b.at({c, r + 4, q + 4})));
  CHECK(worst < 1e-12);
}
