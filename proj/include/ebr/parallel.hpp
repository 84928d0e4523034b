#pragma once

#include <cstddef>
#include <functional>

namespace ebr {

/// Worker count from EBR_THREADS (default 1, minimum 1).
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index is
/// processed exactly once; callers write results into slot i so the outcome
/// never depends on the number of threads. The first exception thrown by any
/// worker is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ebr
