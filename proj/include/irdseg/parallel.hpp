#pragma once

#include <cstddef>
#include <functional>

namespace irdseg {

// Worker cap: IRDSEG_THREADS when set, otherwise hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Each index must write only to its own output
// slot; callers do any cross-index reduction sequentially afterwards, so
// results never depend on the schedule.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace irdseg
