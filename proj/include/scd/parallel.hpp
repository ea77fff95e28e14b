#pragma once

#include <cstddef>
#include <functional>

namespace scd {

// Worker count: SCD_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index is
// processed exactly once; callers write results to per-index slots so the
// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace scd
