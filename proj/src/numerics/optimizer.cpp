#include "capsfield/numerics/optimizer.hpp"

#include <cmath>

#include "capsfield/errors.hpp"

namespace capsfield::numerics {

void RmsPropConfig::validate() const {
  if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("rmsprop decay must lie in (0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("rmsprop learning rate must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("rmsprop epsilon must be positive");
}

OptimizerState::OptimizerState(const Shape& shape, RmsPropConfig config)
    : accumulator_(shape, 0.0), config_(config) {
  config_.validate();
}

void rmsprop_step(Tensor& param, const Tensor& grad, OptimizerState& state) {
  require_same_shape(param, grad, "rmsprop_step(param, grad)");
  require_same_shape(param, state.accumulator_, "rmsprop_step(param, state)");
  const auto& cfg = state.config_;
  auto acc = state.accumulator_.data();
  auto p = param.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc[i] = cfg.decay * acc[i] + (1.0 - cfg.decay) * g[i] * g[i];
    p[i] -= cfg.learning_rate * g[i] / std::sqrt(acc[i] + cfg.epsilon);
  }
}

}  // namespace capsfield::numerics
