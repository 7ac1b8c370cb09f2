#include <doctest.h>

#include <cmath>

#include "rlf/errors.hpp"
#include "rlf/grad_check.hpp"
#include "rlf/gradient_suite.hpp"
#include "rlf/graph.hpp"
#include "rlf/ops.hpp"
#include "test_util.hpp"

using namespace rlf;
using rlf::testing::random_tensor;

TEST_CASE("matmul hand examples") {
  ad::Graph g;
  auto i2 = g.constant(Tensor::from({{1, 0}, {0, 1}}));
  auto m = g.constant(Tensor::from({{1, 2}, {3, 4}}));
  CHECK(ad::matmul(i2, m).value() == Tensor::from({{1, 2}, {3, 4}}));
  auto a = g.constant(Tensor::from({{1, 2}}));
  auto b = g.constant(Tensor::from({{3}, {4}}));
  CHECK(ad::matmul(a, b).value().item() == 11.0);
  CHECK_THROWS_AS(ad::matmul(a, a), DimensionError);
}

TEST_CASE("matmul gradient of sum matches central differences at 1e-6") {
  Rng rng(3);
  ParameterStore s;
  s.add("a", random_tensor(rng, {5, 4}));
  s.add("b", random_tensor(rng, {4, 3}));
  const auto r = grad_check(s, [](ad::Graph& g, ParameterStore& st) {
    return ad::sum(ad::matmul(ad::bind(g, st, "a"), ad::bind(g, st, "b")));
  });
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("conv2d examples") {
  ad::Graph g;
  auto x = g.constant(Tensor({1, 3, 3}, 1.0));
  auto w = g.constant(Tensor({1, 1, 3, 3}, 1.0));
  auto b = g.constant(Tensor({1}, 0.0));
  const Tensor y = ad::conv2d(x, w, b, 1, 1).value();
  CHECK(y.at({0, 1, 1}) == 9.0);
  CHECK(y.at({0, 0, 0}) == 4.0);

  Tensor impulse({1, 5, 5});
  impulse.at({0, 2, 3}) = 1.0;
  Tensor ident({1, 1, 3, 3});
  ident.at({0, 0, 1, 1}) = 1.0;
  const Tensor out = ad::conv2d(g.constant(impulse), g.constant(ident), b, 1, 1).value();
  CHECK(out == impulse);

  // (8 + 2 - 3) / 2 is not integral
  CHECK_THROWS_AS(ad::conv2d(g.constant(Tensor({1, 8, 8})), w, b, 2, 1), DimensionError);
  CHECK_THROWS_AS(ad::conv2d(g.constant(Tensor({1, 8, 8})), w, b, 3, 1), ContractError);
  CHECK_THROWS_AS(ad::conv2d(g.constant(Tensor({1, 8, 8})), w, b, 1, 2), ContractError);
}

TEST_CASE("conv2d on random 2x8x8 with 4 output channels passes grad check at 1e-5") {
  Rng rng(5);
  ParameterStore s;
  s.add("x", random_tensor(rng, {2, 8, 8}));
  s.add("w", random_tensor(rng, {4, 2, 3, 3}));
  s.add("b", random_tensor(rng, {4}));
  const Tensor r = random_tensor(rng, {4, 8, 8});
  const auto res = grad_check(s, [&](ad::Graph& g, ParameterStore& st) {
    auto y = ad::conv2d(ad::bind(g, st, "x"), ad::bind(g, st, "w"), ad::bind(g, st, "b"), 1, 1);
    return ad::sum(ad::mul(y, g.constant(r)));
  });
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("conv2d matches a direct loop cross-correlation") {
  Rng rng(8);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      const std::size_t H = stride == 2 ? (pad ? 7 : 9) : 6, W = H;
      const Tensor x = random_tensor(rng, {2, H, W});
      const Tensor w = random_tensor(rng, {3, 2, 3, 3});
      const Tensor b = random_tensor(rng, {3});
      ad::Graph g;
      const Tensor y = ad::conv2d(g.constant(x), g.constant(w), g.constant(b), stride, pad).value();
      const std::size_t Ho = (H + 2 * pad - 3) / stride + 1;
      REQUIRE(y.shape() == Shape{3, Ho, Ho});
      double worst = 0.0;
      for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < Ho; ++i)
          for (std::size_t j = 0; j < Ho; ++j) {
            double acc = b[o];
            for (std::size_t c = 0; c < 2; ++c)
              for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj) {
                  const long r = static_cast<long>(i) * stride + ki - pad;
                  const long q = static_cast<long>(j) * stride + kj - pad;
                  if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                  acc += w.at({o, c, static_cast<std::size_t>(ki), static_cast<std::size_t>(kj)}) *
                         x.at({c, static_cast<std::size_t>(r), static_cast<std::size_t>(q)});
                }
            worst = std::max(worst, std::abs(acc - y.at({o, i, j})));
          }
      CHECK(worst < 1e-12);
    }
  }
}

TEST_CASE("elementwise and reduction examples") {
  ad::Graph g;
  CHECK(ad::sigmoid(g.constant(Tensor::scalar(0.0))).value().item() == 0.5);
  const Tensor sm = ad::softmax(g.constant(Tensor::from({{2.5, 2.5, 2.5}})), 1).value();
  for (double v : sm.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(ad::relu(g.constant(Tensor::from({{-1, 2}}))).value() == Tensor::from({{0, 2}}));
  CHECK(ad::mean(g.constant(Tensor::from({{1, 2}, {3, 6}}))).value().item() == 3.0);
}

TEST_CASE("scatter_add then gather at unique indices reproduces the source") {
  Rng rng(1);
  const Tensor src = random_tensor(rng, {4, 3});
  ad::Graph g;
  const std::vector<std::size_t> idx{5, 0, 2, 7};
  auto scattered = ad::scatter_add(g.constant(src), idx, 8);
  CHECK(ad::gather(scattered, idx).value() == src);
  CHECK_THROWS_AS(ad::gather(g.constant(src), {4}), IndexError);
  CHECK_THROWS_AS(ad::scatter_add(g.constant(src), {0, 1, 2, 8}, 8), IndexError);
}

TEST_CASE("gather and scatter_add are adjoint") {
  Rng rng(2);
  const std::vector<std::size_t> idx{3, 1, 3, 0, 4};
  const Tensor x = random_tensor(rng, {6, 2});
  const Tensor y = random_tensor(rng, {5, 2});
  ad::Graph g;
  const Tensor gx = ad::gather(g.constant(x), idx).value();
  const Tensor sy = ad::scatter_add(g.constant(y), idx, 6).value();
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < gx.size(); ++i) lhs += gx[i] * y[i];
  for (std::size_t i = 0; i < sy.size(); ++i) rhs += x[i] * sy[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-14));
}

TEST_CASE("reduce_max routes the gradient to the first maximal element") {
  ParameterStore s;
  s.add("x", Tensor::from({{1, 5, 5, 2}}));
  ad::Graph g;
  g.backward(ad::sum(ad::reduce_max(ad::bind(g, s, "x"), 1)));
  CHECK(s.get("x").grad == Tensor::from({{0, 1, 0, 0}}));
}

TEST_CASE("pool_max is a masked per-channel max") {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {3, 4, 2});
  const std::vector<int> counts{2, 0, 4};
  ad::Graph g;
  const Tensor y = ad::pool_max(g.constant(x), counts).value();
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 2; ++c) {
      double m = counts[n] ? -1e300 : 0.0;
      for (int p = 0; p < counts[n]; ++p) m = std::max(m, x.at({n, static_cast<std::size_t>(p), c}));
      CHECK(y.at({n, c}) == m);
    }
}

TEST_CASE("graph contract") {
  SUBCASE("backward twice without reset is an error") {
    ParameterStore s;
    s.add("x", Tensor::scalar(2.0));
    ad::Graph g;
    auto y = ad::mul(ad::bind(g, s, "x"), ad::bind(g, s, "x"));
    g.backward(y);
    CHECK(s.get("x").grad.item() == 4.0);
    CHECK_THROWS_AS(g.backward(y), ContractError);
    g.reset();
    s.zero_grad();
    g.backward(y);
    CHECK(s.get("x").grad.item() == 4.0);
  }
  SUBCASE("non-finite results are rejected") {
    ad::Graph g;
    auto x = g.constant(Tensor::scalar(1e200));
    CHECK_THROWS_AS(ad::mul(x, x), NumericError);
  }
  SUBCASE("backward needs a scalar root") {
    ad::Graph g;
    auto x = g.variable(Tensor({2}, 1.0));
    CHECK_THROWS_AS(g.backward(x), ContractError);
  }
}

TEST_CASE("grad_check on x^2 at 3") {
  ParameterStore s;
  s.add("x", Tensor::scalar(3.0));
  const auto r = grad_check(s, [](ad::Graph& g, ParameterStore& st) {
    auto x = ad::bind(g, st, "x");
    return ad::mul(x, x);
  });
  CHECK(s.get("x").grad.item() == 6.0);
  CHECK(r.max_rel_error < 1e-8);
  CHECK_THROWS_AS(grad_check(s, [](ad::Graph& g, ParameterStore& st) {
                    return ad::concat({ad::bind(g, st, "x"), ad::bind(g, st, "x")}, 0);
                  }),
                  ContractError);
}

TEST_CASE("property: every op passes grad check on 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& c : gradients::run_op_suite(seed)) {
      INFO("seed " << seed << " op " << c.name << " err " << c.check.max_rel_error);
      CHECK(c.passed);
    }
  }
}

TEST_CASE("property: softmax rows are distributions") {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const Tensor x = random_tensor(rng, {5, 7}, -30.0, 30.0);
    ad::Graph g;
    const Tensor y = ad::softmax(g.constant(x), 1).value();
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(y.at({r, c}) >= 0.0);
        s += y.at({r, c});
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("property: concat then complementary slices is the identity") {
  Rng rng(10);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Shape sa{2, 3, 4}, sb{2, 3, 4};
    sb[axis] = 5;
    const Tensor a = random_tensor(rng, sa), b = random_tensor(rng, sb);
    ad::Graph g;
    auto c = ad::concat({g.constant(a), g.constant(b)}, axis);
    CHECK(ad::slice(c, axis, 0, sa[axis]).value() == a);
    CHECK(ad::slice(c, axis, sa[axis], sa[axis] + sb[axis]).value() == b);
  }
}

TEST_CASE("property: ops are bit-deterministic") {
  Rng r1(11), r2(11);
  auto run = [](Rng& rng) {
    const Tensor x = random_tensor(rng, {3, 8, 8});
    const Tensor w = random_tensor(rng, {4, 3, 3, 3});
    ParameterStore s;
    s.add("w", w);
    s.add("b", Tensor({4}, 0.1));
    ad::Graph g;
    auto y = ad::conv2d(ad::zero_pad_end(g.constant(x)), ad::bind(g, s, "w"), ad::bind(g, s, "b"), 2, 0);
    auto loss = ad::sum(ad::softmax(ad::reshape(y, {4, 16}), 1));
    g.backward(ad::sum(ad::mul(ad::upsample_nearest(y, 2), ad::upsample_nearest(y, 2))));
    return std::make_pair(loss.value(), s.get("w").grad);
  };
  CHECK(run(r1) == run(r2));
}

TEST_CASE("zero-extent tensors flow through pooling and attention-sized matmuls") {
  ad::Graph g;
  auto x = g.constant(Tensor({0, 4, 3}));
  CHECK(ad::pool_max(x, {}).value().shape() == Shape{0, 3});
  auto a = g.constant(Tensor({2, 3}, 1.0));
  auto e = g.constant(Tensor({0, 3}));
  CHECK(ad::matmul(a, ad::transpose(e)).value().shape() == Shape{2, 0});
}
