#include <doctest.h>

#include <chrono>

#include "capsfield/diagnostics/gradcheck_suite.hpp"
#include "capsfield/errors.hpp"

using namespace capsfield;
using namespace capsfield::diagnostics;

TEST_CASE("unit-scale gradient checks pass for every component") {
  const auto checks = run_gradcheck_suite(GradScale::unit);
  CHECK(checks.size() >= 9);
  for (const auto& c : checks) {
    CAPTURE(c.name);
    CHECK(c.report.max_relative_error < kGradTolerance);
    CHECK(c.report.coordinates > 0);
  }
  CHECK(all_passed(checks));
}

TEST_CASE("toy-model gradient check passes within the time budget") {
  const auto start = std::chrono::steady_clock::now();
  const auto checks = run_gradcheck_suite(GradScale::toy_model);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(all_passed(checks));
  CHECK(seconds < 60.0);
  bool saw_model = false;
  for (const auto& c : checks) saw_model = saw_model || c.name.starts_with("model_");
  CHECK(saw_model);
}

TEST_CASE("a corrupted squash derivative is caught at both scales") {
  for (GradScale scale : {GradScale::unit, GradScale::toy_model}) {
    const auto checks = run_gradcheck_suite(scale, Corruption::squash);
    CHECK_FALSE(all_passed(checks));
    CHECK(checks.front().name == "squash");
    CHECK(checks.front().report.max_relative_error > kGradTolerance);
  }
}

TEST_CASE("scale and corruption names parse") {
  CHECK(parse_grad_scale("unit") == GradScale::unit);
  CHECK(parse_grad_scale("toy-model") == GradScale::toy_model);
  CHECK_THROWS_AS(parse_grad_scale("huge"), ConfigError);
  CHECK(parse_corruption("squash") == Corruption::squash);
  CHECK(parse_corruption("none") == Corruption::none);
  CHECK_THROWS_AS(parse_corruption("routing"), ConfigError);
}
