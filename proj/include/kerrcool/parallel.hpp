#pragma once

#include <cstddef>
#include <functional>

namespace kerrcool {

/// Worker count: KERRCOOL_WORKERS when set to a positive integer, else the hardware
/// concurrency (at least 1).
std::size_t worker_count();

/// Calls fn(i) for i in [0, n) on up to worker_count() threads. The first exception thrown
/// by any call is rethrown after all workers have joined. Callers write results by index,
/// so output order never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace kerrcool
