#pragma once

// Fixed-partition parallel loops. Work is split into the same chunks whatever the thread
// count, and callers reduce per-chunk results in chunk order, so results are bitwise
// independent of the number of workers.

#include <cstddef>
#include <functional>

namespace l96 {

/// Caps worker threads for all parallel loops (0 = hardware concurrency).
void set_thread_limit(std::size_t n);
std::size_t thread_limit();

/// Calls fn(i) for i in [0, n), distributing indices over up to thread_limit() workers.
/// The first exception thrown by any call is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace l96
