#include <cmath>

#include "capsfield/errors.hpp"
#include "capsfield/numerics/ops.hpp"
#include "doctest.h"
#include "support/generators.hpp"

using namespace capsfield;
using namespace capsfield::numerics;

TEST_CASE("matmul with the identity returns the other operand") {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor m = Tensor::matrix({{3, 4}, {5, 6}});
  CHECK(matmul(eye, m) == m);
}

TEST_CASE("matmul of a 2x2 by a column") {
  // 1*5 + 2*6 = 17, 3*5 + 4*6 = 39
  const Tensor out = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5}, {6}}));
  CHECK(out.shape() == Shape{2, 1});
  CHECK(out[0] == 17.0);
  CHECK(out[1] == 39.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a(Shape{2, 3}, 1.0);
  try {
    (void)matmul(a, a);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3] x [2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul is associative on random chains") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = testing::random_dim(rng, 1, 6), k = testing::random_dim(rng, 1, 6),
               n = testing::random_dim(rng, 1, 6), p = testing::random_dim(rng, 1, 6);
    const Tensor a = testing::random_tensor(rng, {m, k});
    const Tensor b = testing::random_tensor(rng, {k, n});
    const Tensor c = testing::random_tensor(rng, {n, p});
    const Tensor left = matmul(matmul(a, b), c);
    const Tensor right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) {
      const double scale = std::max(1.0, std::abs(left[i]));
      CHECK(std::abs(left[i] - right[i]) / scale < 1e-6);
    }
  }
}

TEST_CASE("softmax_rows examples") {
  SUBCASE("uniform logits") {
    const Tensor out = softmax_rows(Tensor::matrix({{0, 0, 0, 0}}));
    for (double v : out.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("log-proportional logits") {
    const Tensor out =
        softmax_rows(Tensor::matrix({{std::log(1.0), std::log(2.0), std::log(3.0)}}));
    CHECK(out[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
    CHECK(out[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));
  }
  SUBCASE("large logits do not overflow") {
    const Tensor out = softmax_rows(Tensor::matrix({{1000, 0}}));
    // Oracle evaluated in the stable form 1 / (1 + e^{-1000}).
    const double p0 = 1.0 / (1.0 + std::exp(-1000.0));
    const double p1 = std::exp(-1000.0) / (1.0 + std::exp(-1000.0));
    CHECK(out.all_finite());
    CHECK(out[0] == doctest::Approx(p0).epsilon(1e-15));
    CHECK(std::abs(out[1] - p1) < 1e-300);
  }
  SUBCASE("non-finite input is rejected") {
    CHECK_THROWS_AS(softmax_rows(Tensor::matrix({{NAN, 0}})), NumericError);
  }
}

TEST_CASE("softmax_rows rows sum to one for inputs in [-50, 50]") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = testing::random_dim(rng, 1, 5), c = testing::random_dim(rng, 1, 9);
    const Tensor out = softmax_rows(testing::random_tensor(rng, {r, c}, -50.0, 50.0));
    for (std::size_t row = 0; row < r; ++row) {
      double total = 0.0;
      for (std::size_t col = 0; col < c; ++col) {
        CHECK(out.at(row, col) >= 0.0);
        total += out.at(row, col);
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("cross_entropy examples") {
  for (std::size_t n : {2u, 5u, 53u}) {
    const Tensor uniform(Shape{n}, 1.0 / static_cast<double>(n));
    CHECK(cross_entropy(uniform, n - 1) == doctest::Approx(std::log(static_cast<double>(n))));
  }
  CHECK(cross_entropy(Tensor::vector({0, 1, 0}), 1) == 0.0);
  CHECK(cross_entropy(Tensor::vector({0.5, 0.5}), 0) == doctest::Approx(0.6931471805599453));
  CHECK(std::isfinite(cross_entropy(Tensor::vector({1, 0}), 1)));
  CHECK(cross_entropy(Tensor::vector({1, 0}), 1) == doctest::Approx(-std::log(kProbabilityFloor)));
  CHECK_THROWS_AS(cross_entropy(Tensor::vector({0.5, 0.5}), 2), ConfigError);
  CHECK_THROWS_AS(cross_entropy(Tensor::vector({0.5, 0.6}), 0), NumericError);
}

TEST_CASE("ops are deterministic") {
  Rng rng(3);
  const Tensor a = testing::random_tensor(rng, {7, 9});
  const Tensor b = testing::random_tensor(rng, {9, 4});
  CHECK(matmul(a, b) == matmul(a, b));
  CHECK(softmax_rows(a) == softmax_rows(a));
}

TEST_CASE("tensor construction validates shapes") {
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 3}).reshaped({4}), ShapeError);
  CHECK(Tensor(Shape{2, 3}).reshaped({3, 2}).shape() == Shape{3, 2});
}
