#pragma once

#include <cstddef>
#include <functional>

namespace wvcal
{
// Worker count: WVCAL_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t default_worker_count();

// Runs body(i) for i in [0, count) on up to `workers` threads. Work items
// are claimed dynamically; callers write results into slots indexed by i so
// the outcome does not depend on scheduling. The first exception thrown by
// a body is rethrown after all workers have joined.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& body);
}
