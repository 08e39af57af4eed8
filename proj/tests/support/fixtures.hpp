#pragma once

#include <cmath>
#include <cstddef>

#include "capsfield/numerics/rng.hpp"
#include "capsfield/numerics/tensor.hpp"

namespace capsfield::testing {

/// Predictions u_hat [N_p, N_c, C_s] in which every primary capsule predicts
/// the same unit vector for capsule `agreed` and independent Gaussian
/// vectors (expected norm ~1) for all other capsules.
inline numerics::Tensor agreement_fixture(numerics::Rng& rng, std::size_t np, std::size_t nc,
                                          std::size_t cs, std::size_t agreed) {
  numerics::Tensor common({cs}, 0.0);
  double n2 = 0.0;
  for (double& v : common.data()) {
    v = rng.normal(0.0, 1.0);
    n2 += v * v;
  }
  for (double& v : common.data()) v /= std::sqrt(n2);
  numerics::Tensor u({np, nc, cs}, 0.0);
  const double sigma = 1.0 / std::sqrt(static_cast<double>(cs));
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = 0; j < nc; ++j)
      for (std::size_t k = 0; k < cs; ++k)
        u[(i * nc + j) * cs + k] = j == agreed ? common[k] : rng.normal(0.0, sigma);
  return u;
}

}  // namespace capsfield::testing
