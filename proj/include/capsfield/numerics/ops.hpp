#pragma once

#include <cstddef>
#include <span>

#include "capsfield/numerics/tape.hpp"
#include "capsfield/numerics/tensor.hpp"

namespace capsfield::numerics {

/// Floor applied to probabilities before taking logs in cross_entropy.
inline constexpr double kProbabilityFloor = 1e-12;

// Value-level kernels. These are what the tape ops below call.

Tensor matmul(const Tensor& a, const Tensor& b);
/// Softmax over the last axis with max-subtraction.
Tensor softmax_rows(const Tensor& x);
/// -log(max(probs[label], floor)); probs must sum to 1 within 1e-5.
double cross_entropy(const Tensor& probs, std::size_t label, double floor = kProbabilityFloor);

// Tape ops. Each registers its own backward rule.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// x + bias with `bias` broadcast along the last axis of x.
Var add_bias(Var x, Var bias);
Var relu(Var x);
Var sum(Var x);
Var mean(Var x);
Var reshape(Var x, Shape shape);
/// Identity on values, blocks gradient flow.
Var stop_gradient(Var x);
Var softmax_rows(Var x);
/// Mean over rows of -log(max(probs[b, labels[b]], floor)). probs is [B, n] or [n].
Var cross_entropy(Var probs, std::span<const std::size_t> labels,
                  double floor = kProbabilityFloor);

/// x: [N, C, H, W], weight: [O, C, k, k], bias: [O] -> [N, O, Ho, Wo]
/// with zero padding `pad` on every side.
Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad);
/// [N, C, H, W] -> [N, C]
Var global_avg_pool(Var x);

namespace detail {
// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c);
// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c);
// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c);
}  // namespace detail

}  // namespace capsfield::numerics
