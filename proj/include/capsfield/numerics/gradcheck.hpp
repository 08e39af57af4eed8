#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "capsfield/numerics/tape.hpp"
#include "capsfield/numerics/tensor.hpp"

namespace capsfield::numerics {

/// Scalar function of one or more parameter tensors, built on a tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  // Location of the worst coordinate.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;

  bool passed() const noexcept { return max_relative_error < tolerance; }
};

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is ~0 are judged by absolute error instead.
inline constexpr double kGradCheckFloor = 1e-6;

/// Compares the tape gradient of `fn` at `params` with central finite
/// differences, step h = 1e-5 * (1 + |theta|) per coordinate. The relative
/// error of a coordinate is |a - n| / max(|a|, |n|, kGradCheckFloor).
GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor> params, double tolerance);

GradCheckReport grad_check(const std::function<Var(Tape&, Var)>& fn, const Tensor& params,
                           double tolerance);

}  // namespace capsfield::numerics
