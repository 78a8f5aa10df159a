#pragma once

#include <cstddef>
#include <functional>

namespace mvdp {

/// Worker count: MVDP_THREADS if set and positive, otherwise the hardware
/// concurrency (at least 1).
int worker_count();

/// Runs fn(i) for i in [0, n) over worker_count() threads using contiguous
/// static chunks. Each index must write only its own output slot; results
/// are then independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mvdp
