#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "capsfield/capsule/capsule.hpp"
#include "capsfield/errors.hpp"
#include "capsfield/numerics/gradcheck.hpp"
#include "capsfield/numerics/ops.hpp"
#include "support/capsule_oracle.hpp"
#include "support/fixtures.hpp"
#include "support/generators.hpp"

using namespace capsfield;
using namespace capsfield::capsule;
using numerics::Rng;
using numerics::Shape;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;
namespace oracle = capsfield::testing::oracle;

namespace {

double norm(const Tensor& t) {
  double n2 = 0;
  for (double v : t.data()) n2 += v * v;
  return std::sqrt(n2);
}

/// Random orthonormal matrix by Gram-Schmidt.
std::vector<oracle::Vec> random_rotation(Rng& rng, std::size_t n) {
  std::vector<oracle::Vec> q;
  while (q.size() < n) {
    oracle::Vec v(n);
    for (double& x : v) x = rng.normal(0, 1);
    for (const auto& b : q) {
      double d = 0;
      for (std::size_t k = 0; k < n; ++k) d += v[k] * b[k];
      for (std::size_t k = 0; k < n; ++k) v[k] -= d * b[k];
    }
    double nv = 0;
    for (double x : v) nv += x * x;
    nv = std::sqrt(nv);
    if (nv < 1e-6) continue;
    for (double& x : v) x /= nv;
    q.push_back(v);
  }
  return q;
}

CapsuleConfig toy(std::size_t nc, std::size_t cs, std::size_t nr) {
  CapsuleConfig c;
  c.num_secondary = nc;
  c.capsule_size = cs;
  c.routing_iterations = nr;
  return c;
}

}  // namespace

TEST_CASE("squash examples") {
  CHECK(squash(Tensor({4}, 0.0)) == Tensor({4}, 0.0));
  const Tensor e1 = squash(Tensor::vector({1, 0, 0}));
  CHECK(e1[0] == doctest::Approx(0.5));
  CHECK(e1[1] == 0.0);
  const Tensor s = squash(Tensor::vector({3, 4}));
  CHECK(s[0] == doctest::Approx(25.0 / 26.0 * 0.6).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(25.0 / 26.0 * 0.8).epsilon(1e-12));
  CHECK(s[0] == doctest::Approx(0.5769).epsilon(1e-4));
  CHECK(s[1] == doctest::Approx(0.7692).epsilon(1e-4));
}

TEST_CASE("property: squash norm, monotonicity and direction") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = testing::random_dim(rng, 1, 8);
    Tensor dir = testing::random_tensor_away_from_zero(rng, {n});
    const double dn = norm(dir);
    const double target = std::pow(10.0, rng.uniform(-6.0, 3.0));
    Tensor s({n}, 0.0), bigger({n}, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      s[k] = dir[k] / dn * target;
      bigger[k] = s[k] * 1.5;
    }
    const Tensor out = squash(s);
    const double expected = target * target / (1.0 + target * target);
    CHECK(norm(out) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(norm(out) > 0.0);
    CHECK(norm(out) < 1.0);
    CHECK(norm(squash(bigger)) > norm(out));
    double dot = 0;
    for (std::size_t k = 0; k < n; ++k) dot += out[k] * s[k];
    CHECK(std::abs(dot / (norm(out) * norm(s)) - 1.0) < 1e-9);
  }
}

TEST_CASE("property: squash commutes with rotations") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = testing::random_dim(rng, 2, 6);
    const auto r = random_rotation(rng, n);
    const Tensor s = testing::random_tensor(rng, {n}, -3, 3);
    Tensor rs({n}, 0.0);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) rs[a] += r[a][b] * s[b];
    const Tensor lhs = squash(rs);
    const Tensor sq = squash(s);
    for (std::size_t a = 0; a < n; ++a) {
      double rhs = 0;
      for (std::size_t b = 0; b < n; ++b) rhs += r[a][b] * sq[b];
      CHECK(std::abs(lhs[a] - rhs) < 1e-9);
    }
  }
}

TEST_CASE("squash has zero gradient at the origin") {
  Tape tape;
  Var s = tape.variable(Tensor({1, 3}, 0.0));
  tape.backward(numerics::sum(squash(s)));
  CHECK(tape.gradient(s) == Tensor({1, 3}, 0.0));
}

TEST_CASE("primary capsule counts") {
  const CapsuleConfig cfg;
  CHECK(cfg.primary_count(7, 64) == 7);
  CHECK(cfg.primary_count(15, 2048) == 480);
  CHECK_THROWS_AS(cfg.primary_count(7, 60), ConfigError);

  Rng rng(1);
  Tape tape(false);
  const Var emb = tape.constant(testing::random_tensor(rng, {1, 15, 2048}, -2, 2));
  const Var p = reshape_to_primary(emb, cfg);
  CHECK(p.shape() == Shape{1, 480, 64});
  for (std::size_t i = 0; i < 480; ++i) {
    double n2 = 0;
    for (std::size_t k = 0; k < 64; ++k) n2 += p.value()[i * 64 + k] * p.value()[i * 64 + k];
    CHECK(std::sqrt(n2) < 1.0);
  }
  const Var seven = reshape_to_primary(tape.constant(Tensor({2, 7, 64}, 0.5)), cfg);
  CHECK(seven.shape() == Shape{2, 7, 64});
  CHECK_THROWS_AS(reshape_to_primary(tape.constant(Tensor({1, 7, 60}, 0.5)), cfg), ConfigError);
}

TEST_CASE("reshape is row-major: primary i is the i-th block of C_s features") {
  Tape tape(false);
  Tensor emb({1, 2, 4}, 0.0);
  for (std::size_t k = 0; k < 8; ++k) emb[k] = static_cast<double>(k + 1);
  const Var p = reshape_to_primary(tape.constant(emb), toy(1, 2, 1));
  CHECK(p.shape() == Shape{1, 4, 2});
  const Tensor second = squash(Tensor::vector({3, 4}));
  CHECK(p.value()[2] == doctest::Approx(second[0]));
  CHECK(p.value()[3] == doctest::Approx(second[1]));
}

TEST_CASE("routing with a single secondary capsule") {
  Rng rng(5);
  const CapsuleConfig cfg = toy(1, 3, 3);
  const Tensor primary = squash(testing::random_tensor(rng, {4, 3}));
  const Tensor w = testing::random_tensor(rng, {4, 1, 3, 3});
  const RoutingResult r = dynamic_routing(primary, w, cfg);
  for (const auto& c : r.coupling_history)
    for (double v : c.data()) CHECK(v == 1.0);
  Tensor s({3}, 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) s[a] += w[(i * 3 + a) * 3 + b] * primary[i * 3 + b];
  const Tensor expected = squash(s);
  for (std::size_t k = 0; k < 3; ++k) CHECK(r.secondary[k] == doctest::Approx(expected[k]).epsilon(1e-12));
}

TEST_CASE("one routing iteration on a hand-built 2x2x2 instance") {
  // W[i][j] and v chosen by hand; with b = 0 the coupling is 1/2 everywhere.
  const Tensor v = Tensor::matrix({{0.3, 0.4}, {-0.5, 0.1}});
  Tensor w({2, 2, 2, 2}, 0.0);
  const double values[16] = {1, 0, 0, 1,    // W00 = I
                             0, -1, 1, 0,   // W01 = rotation
                             2, 0, 0, 2,    // W10 = 2I
                             1, 1, 0, 1};   // W11 = shear
  for (std::size_t k = 0; k < 16; ++k) w[k] = values[k];
  const RoutingResult r = dynamic_routing(v, w, toy(2, 2, 1));
  // s_0 = 0.5 * (I v0 + 2I v1) = 0.5 * ([0.3, 0.4] + [-1.0, 0.2]) = [-0.35, 0.3]
  // s_1 = 0.5 * (R v0 + S v1) = 0.5 * ([-0.4, 0.3] + [-0.4, 0.1]) = [-0.4, 0.2]
  const double n0 = 0.35 * 0.35 + 0.3 * 0.3, n1 = 0.4 * 0.4 + 0.2 * 0.2;
  const double f0 = std::sqrt(n0) / (1 + n0), f1 = std::sqrt(n1) / (1 + n1);
  CHECK(r.secondary[0] == doctest::Approx(-0.35 * f0).epsilon(1e-12));
  CHECK(r.secondary[1] == doctest::Approx(0.3 * f0).epsilon(1e-12));
  CHECK(r.secondary[2] == doctest::Approx(-0.4 * f1).epsilon(1e-12));
  CHECK(r.secondary[3] == doctest::Approx(0.2 * f1).epsilon(1e-12));
  for (double c : r.coupling.data()) CHECK(c == 0.5);
}

TEST_CASE("zero pose matrices give zero outputs and uniform coupling") {
  Rng rng(6);
  const Tensor primary = squash(testing::random_tensor(rng, {3, 4}));
  const RoutingResult r = dynamic_routing(primary, Tensor({3, 4, 4, 4}, 0.0), toy(4, 4, 3));
  CHECK(r.secondary == Tensor({4, 4}, 0.0));
  REQUIRE(r.coupling_history.size() == 3);
  for (const auto& c : r.coupling_history)
    for (double v : c.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("property: routing matches the scalar oracle within 1e-9") {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t np = testing::random_dim(rng, 1, 4), nc = testing::random_dim(rng, 1, 3),
                      cs = testing::random_dim(rng, 1, 4), nr = testing::random_dim(rng, 1, 3);
    const Tensor primary = squash(testing::random_tensor(rng, {np, cs}, -2, 2));
    const Tensor w = testing::random_tensor(rng, {np, nc, cs, cs}, -2, 2);
    const RoutingResult r = dynamic_routing(primary, w, toy(nc, cs, nr));

    std::vector<std::vector<oracle::Mat>> wn(np, std::vector<oracle::Mat>(nc, oracle::Mat(cs, oracle::Vec(cs))));
    oracle::Mat pn(np, oracle::Vec(cs));
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t k = 0; k < cs; ++k) pn[i][k] = primary[i * cs + k];
      for (std::size_t j = 0; j < nc; ++j)
        for (std::size_t a = 0; a < cs; ++a)
          for (std::size_t b = 0; b < cs; ++b) wn[i][j][a][b] = w[((i * nc + j) * cs + a) * cs + b];
    }
    const oracle::Routing ref = oracle::route(oracle::predictions(wn, pn), nr);
    for (std::size_t j = 0; j < nc; ++j)
      for (std::size_t k = 0; k < cs; ++k) CHECK(std::abs(r.secondary[j * cs + k] - ref.v[j][k]) < 1e-9);
    for (std::size_t it = 0; it < nr; ++it)
      for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < nc; ++j)
          CHECK(std::abs(r.coupling_history[it][i * nc + j] - ref.c_all[it][i][j]) < 1e-9);
  }
}

TEST_CASE("property: coupling rows sum to one at every iteration") {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t np = testing::random_dim(rng, 1, 6), nc = testing::random_dim(rng, 1, 5);
    const Tensor u = testing::random_tensor(rng, {np, nc, 3}, -3, 3);
    const RoutingResult r = route_predictions(u, toy(nc, 3, 4));
    for (const auto& c : r.coupling_history)
      for (std::size_t i = 0; i < np; ++i) {
        double total = 0;
        for (std::size_t j = 0; j < nc; ++j) total += c[i * nc + j];
        CHECK(std::abs(total - 1.0) < 1e-6);
      }
    for (std::size_t j = 0; j < nc; ++j) {
      double n2 = 0;
      for (std::size_t k = 0; k < 3; ++k) n2 += r.secondary[j * 3 + k] * r.secondary[j * 3 + k];
      CHECK(std::sqrt(n2) < 1.0);
    }
  }
}

TEST_CASE("property: routing by agreement concentrates coupling on the agreed capsule") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t nc = testing::random_dim(rng, 2, 5), agreed = rng.index(nc);
    const Tensor u = testing::agreement_fixture(rng, 7, nc, 8, agreed);
    const RoutingResult r = route_predictions(u, toy(nc, 8, 3));
    std::vector<double> mean(nc, 0.0);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < nc; ++j) mean[j] += r.coupling[i * nc + j] / 7.0;
    for (std::size_t j = 0; j < nc; ++j)
      if (j != agreed) CHECK(mean[agreed] > mean[j]);
  }
}

TEST_CASE("routing reports the failing iteration on non-finite values") {
  const double huge = std::numeric_limits<double>::max() / 4;
  Tensor u({1, 2, 2}, 0.0);
  u[0] = huge;
  u[1] = huge;
  CHECK_THROWS_WITH_AS(route_predictions(u, toy(2, 2, 3)), doctest::Contains("iteration"), NumericError);
  Tensor bad({1, 2, 2}, 0.0);
  bad[0] = std::nan("");
  CHECK_THROWS_AS(route_predictions(bad, toy(2, 2, 3)), NumericError);
}

TEST_CASE("flatten_capsules lengths") {
  CHECK(flatten_capsules(Tensor({5, 64}, 0.0)).size() == 320);
  CHECK(CapsuleConfig{}.output_length() == 320);
  CHECK(flatten_capsules(Tensor({1, 4}, 0.0)).size() == 4);
  CHECK(flatten_capsules(Tensor({3, 4}, 0.0)) == Tensor({12}, 0.0));
  const Tensor s = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(flatten_capsules(s) == Tensor::vector({1, 2, 3, 4}));
}

TEST_CASE("defaults: 5 secondary capsules of size 64 and 3 routing iterations") {
  const CapsuleConfig cfg;
  CHECK(cfg.num_secondary == 5);
  CHECK(cfg.capsule_size == 64);
  CHECK(cfg.routing_iterations == 3);
  CHECK_FALSE(cfg.detach_routing);
}

TEST_CASE("property: capsule primitives have correct gradients") {
  Rng rng(10);
  auto contract = [](Tape& t, Var y, const Tensor& w) { return numerics::sum(numerics::mul(y, t.constant(w))); };
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = testing::random_dim(rng, 1, 2), np = testing::random_dim(rng, 1, 3),
                      nc = testing::random_dim(rng, 1, 3), cs = testing::random_dim(rng, 1, 3);
    {
      const Tensor w = testing::random_tensor(rng, {b, np, cs});
      const auto rep = numerics::grad_check(
          [&](Tape& t, std::span<const Var> p) { return contract(t, squash(p[0]), w); },
          {testing::random_tensor_away_from_zero(rng, {b, np, cs})}, 1e-4);
      CHECK_MESSAGE(rep.passed(), "squash ", rep.max_relative_error);
    }
    {
      const Tensor w = testing::random_tensor(rng, {b, np, nc, cs});
      const auto rep = numerics::grad_check(
          [&](Tape& t, std::span<const Var> p) { return contract(t, pose_predict(p[0], p[1]), w); },
          {testing::random_tensor(rng, {b, np, cs}), testing::random_tensor(rng, {np, nc, cs, cs})}, 1e-4);
      CHECK_MESSAGE(rep.passed(), "pose_predict ", rep.max_relative_error);
    }
    {
      const Tensor w = testing::random_tensor(rng, {b, nc, cs});
      const auto rep = numerics::grad_check(
          [&](Tape& t, std::span<const Var> p) { return contract(t, coupling_sum(p[0], p[1]), w); },
          {testing::random_tensor(rng, {b, np, nc}), testing::random_tensor(rng, {b, np, nc, cs})}, 1e-4);
      CHECK_MESSAGE(rep.passed(), "coupling_sum ", rep.max_relative_error);
    }
    {
      const Tensor w = testing::random_tensor(rng, {b, np, nc});
      const auto rep = numerics::grad_check(
          [&](Tape& t, std::span<const Var> p) { return contract(t, agreement(p[0], p[1]), w); },
          {testing::random_tensor(rng, {b, np, nc, cs}), testing::random_tensor(rng, {b, nc, cs})}, 1e-4);
      CHECK_MESSAGE(rep.passed(), "agreement ", rep.max_relative_error);
    }
  }
}

TEST_CASE("full capsule stack gradient: reshape, routing, flatten, softmax head, cross-entropy") {
  // Toy config: N_p = 3, N_c = 2, C_s = 4 (3 views x 4 features).
  Rng rng(12);
  {
    const CapsuleConfig cfg = toy(2, 4, 3);
    const std::vector<std::size_t> labels{1, 0};
    const auto rep = numerics::grad_check(
        [&](Tape&, std::span<const Var> p) {
          const Var primary = reshape_to_primary(p[0], cfg);
          const RoutingOutput r = dynamic_routing(primary, p[1], cfg);
          const Var logits = numerics::add_bias(numerics::matmul(flatten_capsules(r.secondary), p[2]), p[3]);
          return numerics::cross_entropy(numerics::softmax_rows(logits), labels);
        },
        {testing::random_tensor(rng, {2, 3, 4}, -2, 2), testing::random_tensor(rng, {3, 2, 4, 4}),
         testing::random_tensor(rng, {8, 3}), testing::random_tensor(rng, {3})},
        1e-4);
    CHECK_MESSAGE(rep.passed(), "err=", rep.max_relative_error);
  }
}

TEST_CASE("detached routing keeps the forward pass and changes the gradient") {
  Rng rng(13);
  const Tensor emb = testing::random_tensor(rng, {1, 3, 4}, -2, 2);
  const Tensor w = testing::random_tensor(rng, {3, 2, 4, 4});
  auto run = [&](bool detach) {
    CapsuleConfig cfg = toy(2, 4, 3);
    cfg.detach_routing = detach;
    Tape tape;
    const Var pw = tape.variable(w);
    const RoutingOutput r = dynamic_routing(reshape_to_primary(tape.constant(emb), cfg), pw, cfg);
    tape.backward(numerics::sum(r.secondary));
    return std::make_pair(r.secondary.value(), tape.gradient(pw));
  };
  const auto [v_full, g_full] = run(false);
  const auto [v_det, g_det] = run(true);
  CHECK(v_full == v_det);
  CHECK(testing::max_abs_diff(g_full, g_det) > 1e-8);
}
