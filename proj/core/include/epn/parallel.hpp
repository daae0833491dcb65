#pragma once

#include <cstddef>
#include <functional>

namespace epn {

/// Worker cap for operator-internal parallelism. 1 is the reproducibility
/// reference; results do not depend on the setting because every parallel
/// loop writes disjoint outputs with a fixed per-output reduction order.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs body(i) for i in [0, n), split into contiguous chunks across workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace epn
