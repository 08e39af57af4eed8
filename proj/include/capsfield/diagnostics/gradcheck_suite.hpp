#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "capsfield/numerics/gradcheck.hpp"

namespace capsfield::diagnostics {

/// unit: each primitive and layer on its own. toy_model: the whole
/// embedder -> capsules -> head -> cross-entropy stack at N_p = 3, N_c = 2, C_s = 4.
enum class GradScale { unit, toy_model };

/// Negative control: swap in a squash whose backward pass is wrong.
enum class Corruption { none, squash };

GradScale parse_grad_scale(std::string_view s);
Corruption parse_corruption(std::string_view s);

inline constexpr double kGradTolerance = 1e-4;

struct ComponentCheck {
  std::string name;
  numerics::GradCheckReport report;
};

std::vector<ComponentCheck> run_gradcheck_suite(GradScale scale, Corruption corruption = Corruption::none,
                                                std::uint64_t seed = 1);

bool all_passed(const std::vector<ComponentCheck>& checks);

}  // namespace capsfield::diagnostics
