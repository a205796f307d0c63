#pragma once

#include <cstdint>
#include <functional>

namespace dinomm {

// Worker count: min(hardware, DINOMM_THREADS if set). Always >= 1.
int worker_thread_count();

// Runs fn over [0, n) split into contiguous ranges, one per worker. The
// partition depends only on n and the worker count, and workers write
// disjoint outputs, so results are identical to the serial order.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace dinomm
