#pragma once

#include <cstddef>
#include <functional>

namespace tosa {

/// Worker cap for batch assembly: min(hardware_concurrency, TOSA_THREADS
/// if set). Training steps themselves stay single-threaded.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Work items write to disjoint slots, so
/// results are identical for any worker count. Exceptions from workers
/// are rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tosa
