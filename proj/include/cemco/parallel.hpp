#pragma once

#include <cstddef>
#include <functional>

namespace cemco {

/// Worker count from CEMCO_THREADS (0 or unset = hardware concurrency).
unsigned thread_count();

/// Runs fn(0) ... fn(count-1) across worker threads. Nested calls run serially
/// on the calling thread. The first exception thrown by any call is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace cemco
