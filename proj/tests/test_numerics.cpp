// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>

#include "deepmim/gradcheck.hpp"
#include "deepmim/ops.hpp"
#include "test_helpers.hpp"

using namespace deepmim;
using deepmim::testing::random_tensor;

namespace {

using T = Tensor<double>;
using V = Var<double>;
using Fn = ScalarFunction<double>;

// Sum of the op output against fixed random weights, so every output element
// carries a distinct cotangent into the backward rule.
V weighted_sum(Tape<double>& t, const V& y, std::uint64_t seed) {
  return sum(mul(y, t.constant(random_tensor(y.shape(), seed))));
}

double check(const Fn& f, std::vector<T> params) {
  GradCheckOptions opt;
  opt.step = 1e-3;
  return grad_check<double>(f, std::move(params), opt).max_rel_error;
}

std::vector<MaskPlan> two_plans() {
  return {MaskPlan::from_masked(4, {1, 3}, 0.5), MaskPlan::from_masked(4, {0, 2}, 0.5)};
}

}  // namespace

TEST_CASE("matmul forward examples") {
  Tape<double> t;
  auto a = t.leaf(T({2, 2}, {1, 2, 3, 4}));
  auto id = t.leaf(T({2, 2}, {1, 0, 0, 1}));
  CHECK(matmul(a, id).value().identical(a.value()));
  auto b = t.leaf(T({2, 2}, {5, 6, 7, 8}));
  CHECK(matmul(a, b).value().identical(T({2, 2}, {19, 22, 43, 50})));
  auto bad = t.leaf(T({3, 2}));
  CHECK_THROWS_AS(matmul(a, bad), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Fn f = [](Tape<double>&, std::span<const V> p) { return sum(matmul(p[0], p[1])); };
  CHECK(check(f, {random_tensor({3, 4}, 1), random_tensor({4, 5}, 2)}) <= 1e-3);
  Fn g = [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, matmul(p[0], p[1]), 9); };
  CHECK(check(g, {random_tensor({2, 3, 4}, 3), random_tensor({4, 2}, 4)}) <= 1e-3);
}

TEST_CASE("softmax rows") {
  Tape<double> t;
  auto y = softmax_rows(t.leaf(T({1, 3}, {0, 0, 0})));
  for (Index i = 0; i < 3; ++i) CHECK(y.value()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  Tape<float> tf;
  auto z = softmax_rows(tf.leaf(Tensor<float>({1, 2}, {1000.f, 0.f})));
  CHECK(z.value()[0] == 1.0f);
  CHECK(z.value()[1] >= 0.0f);
  CHECK(z.value()[1] < 1e-30f);

  auto r = softmax_rows(tf.leaf(random_tensor<float>({16, 7}, 5, -8, 8)));
  for (Index row = 0; row < 16; ++row) {
    const auto s = r.value().matrix().row(row).sum();
    CHECK(std::abs(s - 1.0f) <= 1e-6f);
    CHECK(r.value().matrix().row(row).minCoeff() >= 0.0f);
  }

  Fn f = [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, softmax_rows(p[0]), 11); };
  CHECK(check(f, {random_tensor({4, 5}, 6)}) <= 1e-3);
}

TEST_CASE("layer norm") {
  Tape<double> t;
  auto ones = t.leaf(T::constant({2}, 1.0));
  auto zeros = t.leaf(T({2}));
  auto c = layer_norm(t.leaf(T::constant({1, 2}, 3.5)), ones, zeros, 1e-6);
  CHECK(c.value().data().abs().maxCoeff() == 0.0);
  auto y = layer_norm(t.leaf(T({1, 2}, {1, 3})), ones, zeros, 1e-12);
  CHECK(y.value()[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y.value()[1] == doctest::Approx(1.0).epsilon(1e-9));

  Tape<float> tf;
  const Index d = 24;
  auto x = layer_norm(tf.leaf(random_tensor<float>({10, d}, 7)), tf.leaf(Tensor<float>::constant({d}, 1.f)),
                      tf.leaf(Tensor<float>({d})), 1e-6f);
  for (Index r = 0; r < 10; ++r) {
    const auto row = x.value().matrix().row(r).array().cast<double>();
    const double mean = row.mean();
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(std::abs((row - mean).square().mean() - 1.0) <= 1e-5);
  }

  Fn f = [](Tape<double>& t, std::span<const V> p) {
    return weighted_sum(t, layer_norm(p[0], p[1], p[2], 1e-6), 12);
  };
  CHECK(check(f, {random_tensor({3, 6}, 8), random_tensor({6}, 9), random_tensor({6}, 10)}) <= 1e-3);
}

TEST_CASE("gelu") {
  Tape<double> t;
  auto y = gelu(t.leaf(T({5}, {0.0, 20.0, -20.0, 6.0, -6.0})));
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(std::abs(y.value()[2]) < 1e-12);
  CHECK(y.value()[3] == doctest::Approx(6.0).epsilon(1e-6));
  CHECK(std::abs(y.value()[4]) < 1e-6);

  // GELU dips below zero near x = -0.75, so monotonicity is checked right of the dip.
  T grid({200});
  for (Index i = 0; i < 200; ++i) grid[i] = -0.7 + 0.04 * static_cast<double>(i);
  auto g = gelu(t.leaf(grid));
  for (Index i = 1; i < 200; ++i) CHECK(g.value()[i] >= g.value()[i - 1]);

  Fn f = [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, gelu(p[0]), 13); };
  CHECK(check(f, {random_tensor({20}, 11)}) <= 1e-3);
}

TEST_CASE("mse_masked") {
  const auto plans = two_plans();
  Tape<double> t;
  const T target = random_tensor({2, 4, 3}, 12);
  CHECK(mse_masked(t.leaf(target), target, plans).value().item() == 0.0);
  T shifted = target;
  shifted.data() += 1.0;
  CHECK(mse_masked(t.leaf(shifted), target, plans).value().item() == doctest::Approx(1.0).epsilon(1e-12));

  // scalar-loop oracle
  const T pred = random_tensor({2, 4, 3}, 13);
  double acc = 0;
  int count = 0;
  for (int b = 0; b < 2; ++b)
    for (Index i : plans[b].masked)
      for (int d = 0; d < 3; ++d) {
        const double diff = pred[(b * 4 + i) * 3 + d] - target[(b * 4 + i) * 3 + d];
        acc += diff * diff;
        ++count;
      }
  CHECK(mse_masked(t.leaf(pred), target, plans).value().item() == doctest::Approx(acc / count).epsilon(1e-14));

  MaskPlan empty{4, {0, 1, 2, 3}, {}, 0.0};
  std::vector<MaskPlan> degenerate{empty, empty};
  CHECK_THROWS(mse_masked(t.leaf(pred), target, degenerate));

  Fn f = [&](Tape<double>&, std::span<const V> p) { return mse_masked(p[0], target, plans); };
  CHECK(check(f, {pred}) <= 1e-3);
}

TEST_CASE("grad_check utility") {
  Fn square = [](Tape<double>&, std::span<const V> p) { return sum(mul(p[0], p[0])); };
  GradCheckOptions opt;
  auto r = grad_check<double>(square, {T({1}, {3.0})}, opt);
  CHECK(r.max_abs_error <= 1e-6);
  Tape<double> t;
  auto x = t.leaf(T({1}, {3.0}));
  auto y = sum(mul(x, x));
  t.backward(y);
  CHECK(t.grad(x)[0] == 6.0);

  Fn constant = [](Tape<double>& tape, std::span<const V>) { return sum(tape.constant(T({2}, {1.0, 2.0}))); };
  Tape<double> t2;
  auto p = t2.leaf(T({3}, {1, 2, 3}));
  auto c = constant(t2, std::span<const V>(&p, 1));
  t2.backward(c);
  CHECK(t2.grad(p).data().abs().maxCoeff() == 0.0);
  CHECK(grad_check<double>(constant, {T({3}, {1, 2, 3})}).max_abs_error == 0.0);

  Fn blowup = [](Tape<double>& tape, std::span<const V> p) {
    return sum(mul(p[0], tape.constant(T({1}, {std::numeric_limits<double>::infinity()}))));
  };
  CHECK_THROWS_AS(grad_check<double>(blowup, {T({1}, {1.0})}), NumericError);
}

TEST_CASE("leaf with two consumers accumulates both contributions") {
  // f(X) = sum(X * X) + sum(X W); df/dX = 2X + 1 W^T
  const T x0 = random_tensor({3, 4}, 20);
  const T w0 = random_tensor({4, 2}, 21);
  Tape<double> t;
  auto x = t.leaf(x0);
  auto w = t.leaf(w0, false);
  auto f = add(sum(mul(x, x)), sum(matmul(x, w)));
  t.backward(f);
  const auto g = t.grad(x);
  for (Index r = 0; r < 3; ++r)
    for (Index c = 0; c < 4; ++c)
      CHECK(g.matrix()(r, c) == doctest::Approx(2 * x0.matrix()(r, c) + w0.matrix().row(c).sum()).epsilon(1e-12));
  CHECK_FALSE(t.has_grad(w));
}

TEST_CASE("remaining primitives pass finite-difference checks") {
  const auto plans = two_plans();
  SUBCASE("linear") {
    Fn f = [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, linear(p[0], p[1], p[2]), 30); };
    CHECK(check(f, {random_tensor({2, 3, 4}, 31), random_tensor({4, 5}, 32), random_tensor({5}, 33)}) <= 1e-3);
  }
  SUBCASE("add_broadcast and scale") {
    Fn f = [](Tape<double>& t, std::span<const V> p) {
      return weighted_sum(t, scale(add_broadcast(p[0], p[1]), 0.7), 34);
    };
    CHECK(check(f, {random_tensor({2, 3, 4}, 35), random_tensor({3, 4}, 36)}) <= 1e-3);
  }
  SUBCASE("mean_tokens") {
    Fn f = [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, mean_tokens(p[0]), 37); };
    CHECK(check(f, {random_tensor({2, 5, 3}, 38)}) <= 1e-3);
  }
  SUBCASE("gather_visible") {
    Fn f = [&](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, gather_visible(p[0], plans), 39); };
    CHECK(check(f, {random_tensor({2, 4, 3}, 40)}) <= 1e-3);
  }
  SUBCASE("fill_masked") {
    Fn f = [&](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, fill_masked(p[0], p[1], plans), 41); };
    CHECK(check(f, {random_tensor({2, 2, 3}, 42), random_tensor({3}, 43)}) <= 1e-3);
  }
  SUBCASE("multi_head_attention") {
    Fn f = [](Tape<double>& t, std::span<const V> p) {
      return weighted_sum(t, multi_head_attention(p[0], p[1], p[2], 2), 44);
    };
    CHECK(check(f, {random_tensor({2, 3, 4}, 45), random_tensor({2, 3, 4}, 46), random_tensor({2, 3, 4}, 47)}) <= 1e-3);
  }
  SUBCASE("cross_entropy") {
    const std::vector<int> labels{2, 0, 1};
    Fn f = [&](Tape<double>&, std::span<const V> p) { return cross_entropy(p[0], labels); };
    CHECK(check(f, {random_tensor({3, 4}, 48)}) <= 1e-3);
  }
}

TEST_CASE("attention probabilities are row-stochastic") {
  Tape<float> t;
  Tensor<float> probs;
  auto q = t.leaf(random_tensor<float>({2, 5, 8}, 50));
  auto k = t.leaf(random_tensor<float>({2, 5, 8}, 51));
  auto v = t.leaf(random_tensor<float>({2, 5, 8}, 52));
  multi_head_attention(q, k, v, 4, &probs);
  CHECK(probs.shape() == Shape{2, 4, 5, 5});
  for (Index r = 0; r < probs.leading_rows(); ++r)
    CHECK(std::abs(probs.matrix().row(r).sum() - 1.0f) <= 1e-5f);
}

TEST_CASE("float kernels agree with the double instantiation") {
  const T x = random_tensor({2, 3, 4}, 60);
  const T w = random_tensor({4, 4}, 61);
  auto run = [&]<typename S>(S) {
    Tape<S> t;
    auto xv = t.leaf(x.cast<S>());
    auto wv = t.leaf(w.cast<S>());
    auto y = gelu(matmul(softmax_rows(xv), wv));
    auto loss = sum(mul(y, y));
    t.backward(loss);
    return std::pair{t.grad(xv).template cast<double>(), t.grad(wv).template cast<double>()};
  };
  const auto [gx32, gw32] = run(float{});
  const auto [gx64, gw64] = run(double{});
  CHECK((gx32.data() - gx64.data()).abs().maxCoeff() <= 1e-4 * (1 + gx64.data().abs().maxCoeff()));
  CHECK((gw32.data() - gw64.data()).abs().maxCoeff() <= 1e-4 * (1 + gw64.data().abs().maxCoeff()));
}

TEST_CASE("non-finite forward values are rejected") {
  Tape<float> t;
  auto x = t.leaf(Tensor<float>({1}, {std::numeric_limits<float>::max()}));
  CHECK_THROWS_AS(scale(x, 10.0f), NumericError);
}
