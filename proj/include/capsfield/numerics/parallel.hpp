#pragma once

#include <cstddef>
#include <functional>

namespace capsfield::numerics {

/// Calls fn(i) for i in [0, n) on up to `jobs` threads. Work items must be
/// independent. If any call throws, the exception of the lowest failing
/// index is rethrown after all workers finish, so the reported error does
/// not depend on scheduling.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace capsfield::numerics
