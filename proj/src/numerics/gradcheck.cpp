#include "capsfield/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "capsfield/errors.hpp"

namespace capsfield::numerics {

namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor>& params) {
  Tape tape(false);
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p));
  const double value = fn(tape, vars).value().item();
  if (!std::isfinite(value)) throw NumericError("grad_check: function value is not finite");
  return value;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor> params, double tolerance) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.variable(p));
    Var out = fn(tape, vars);
    if (!std::isfinite(out.value().item()))
      throw NumericError("grad_check: function value is not finite");
    tape.backward(out);
    for (Var v : vars) analytic.push_back(tape.gradient(v));
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double theta = params[t][i];
      const double h = 1e-5 * (1.0 + std::abs(theta));
      params[t][i] = theta + h;
      const double up = evaluate(fn, params);
      params[t][i] = theta - h;
      const double down = evaluate(fn, params);
      params[t][i] = theta;

      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_relative_error || report.coordinates == 1) {
        report.max_relative_error = rel;
        report.worst_tensor = t;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<Var(Tape&, Var)>& fn, const Tensor& params,
                           double tolerance) {
  ScalarFn wrapped = [&fn](Tape& tape, std::span<const Var> vars) { return fn(tape, vars[0]); };
  return grad_check(wrapped, std::vector<Tensor>{params}, tolerance);
}

}  // namespace capsfield::numerics
