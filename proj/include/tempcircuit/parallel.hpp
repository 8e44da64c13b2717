#pragma once

#include <cstddef>
#include <functional>

namespace tempcircuit {

// Worker count for parallel_for. Starts from TEMPCIRCUIT_THREADS when set,
// otherwise the hardware concurrency; set_thread_count overrides both.
int thread_count();
void set_thread_count(int n);

// Calls fn(i) for i in [0, n). Each index runs exactly once; callers write
// results into per-index slots so the outcome does not depend on scheduling.
// The first exception thrown by any worker is rethrown after all finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tempcircuit
