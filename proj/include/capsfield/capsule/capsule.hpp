#pragma once

#include <cstddef>
#include <vector>

#include "capsfield/numerics/rng.hpp"
#include "capsfield/numerics/tape.hpp"
#include "capsfield/numerics/tensor.hpp"

namespace capsfield::capsule {

struct CapsuleConfig {
  /// N_c: secondary (output) capsules.
  std::size_t num_secondary = 5;
  /// C_s: length of every capsule vector.
  std::size_t capsule_size = 64;
  /// N_r: routing iterations.
  std::size_t routing_iterations = 3;
  /// Block gradients through the coupling-logit updates.
  bool detach_routing = false;

  /// N_p = V * D / C_s. Throws ConfigError unless V * D is divisible by C_s.
  std::size_t primary_count(std::size_t views, std::size_t embedding_dim) const;
  /// N_c * C_s, the flattened output length.
  std::size_t output_length() const noexcept { return num_secondary * capsule_size; }
  void validate() const;

  friend bool operator==(const CapsuleConfig&, const CapsuleConfig&) = default;
};

/// Pose matrices W[i, j] for every (primary i, secondary j) pair:
/// [N_p, N_c, C_s, C_s], entries U(-1/sqrt(C_s), 1/sqrt(C_s)).
numerics::Tensor init_pose_matrices(std::size_t primary, const CapsuleConfig& cfg, numerics::Rng& rng);

// Tape primitives. Capsule vectors always live on the last axis.

/// (|s|^2 / (1 + |s|^2)) * s / |s| per capsule; exactly 0 (with zero
/// gradient) where s = 0.
numerics::Var squash(numerics::Var s);

/// v [B, N_p, C_s], W [N_p, N_c, C_s, C_s] -> u_hat [B, N_p, N_c, C_s],
/// u_hat[b, i, j] = W[i, j] v[b, i].
numerics::Var pose_predict(numerics::Var v, numerics::Var w);

/// c [B, N_p, N_c], u_hat [B, N_p, N_c, C_s] -> s [B, N_c, C_s],
/// s[b, j] = sum_i c[b, i, j] u_hat[b, i, j].
numerics::Var coupling_sum(numerics::Var c, numerics::Var u_hat);

/// u_hat [B, N_p, N_c, C_s], v [B, N_c, C_s] -> [B, N_p, N_c] of dot
/// products u_hat[b, i, j] . v[b, j].
numerics::Var agreement(numerics::Var u_hat, numerics::Var v);

/// embeddings [B, V, D] or [B, V * D] -> squashed primary capsules [B, N_p, C_s].
numerics::Var reshape_to_primary(numerics::Var embeddings, const CapsuleConfig& cfg);

struct RoutingOutput {
  numerics::Var secondary;  // [B, N_c, C_s]
  numerics::Var coupling;   // [B, N_p, N_c], coefficients of the final iteration
  /// Coupling coefficients of every iteration, first to last.
  std::vector<numerics::Tensor> coupling_history;
};

/// Dynamic routing. u_hat is computed once from the pose matrices, logits
/// start at zero, and each iteration applies softmax over the secondary
/// capsules, the coupling-weighted sum, squash and the agreement update.
/// Throws NumericError naming the iteration if a non-finite value appears.
RoutingOutput dynamic_routing(numerics::Var primary, numerics::Var pose, const CapsuleConfig& cfg);

/// [B, N_c, C_s] -> [B, N_c * C_s].
numerics::Var flatten_capsules(numerics::Var secondary);

// Single-sample conveniences evaluated on an inference tape.

numerics::Tensor squash(const numerics::Tensor& s);

struct RoutingResult {
  numerics::Tensor secondary;  // [N_c, C_s]
  numerics::Tensor coupling;   // [N_p, N_c]
  std::vector<numerics::Tensor> coupling_history;
};

/// primary [N_p, C_s] (already squashed), pose [N_p, N_c, C_s, C_s].
RoutingResult dynamic_routing(const numerics::Tensor& primary, const numerics::Tensor& pose,
                              const CapsuleConfig& cfg);

/// Routing from precomputed predictions u_hat [N_p, N_c, C_s].
RoutingResult route_predictions(const numerics::Tensor& u_hat, const CapsuleConfig& cfg);

numerics::Tensor flatten_capsules(const numerics::Tensor& secondary);

}  // namespace capsfield::capsule
