#pragma once

#include "capsfield/numerics/tensor.hpp"

namespace capsfield::numerics {

struct RmsPropConfig {
  double decay = 0.9;          // rho
  double learning_rate = 1e-3;  // eta
  double epsilon = 1e-8;

  void validate() const;
};

/// Per-parameter RMSProp state: a running mean of squared gradients.
class OptimizerState {
 public:
  OptimizerState(const Shape& shape, RmsPropConfig config);

  const Tensor& accumulator() const noexcept { return accumulator_; }
  const RmsPropConfig& config() const noexcept { return config_; }

 private:
  friend void rmsprop_step(Tensor& param, const Tensor& grad, OptimizerState& state);

  Tensor accumulator_;
  RmsPropConfig config_;
};

/// acc <- rho*acc + (1-rho)*g^2;  param <- param - eta*g / sqrt(acc + eps)
void rmsprop_step(Tensor& param, const Tensor& grad, OptimizerState& state);

}  // namespace capsfield::numerics
