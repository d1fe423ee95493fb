#pragma once

#include <cstddef>
#include <functional>

namespace spurscan {

/// Worker count to use: `requested` if non-zero, else SPURSCAN_THREADS if
/// set, else the hardware concurrency. SPURSCAN_THREADS wins over an
/// explicit request when `env_overrides` is true.
std::size_t resolve_threads(std::size_t requested, bool env_overrides = true);

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Each index runs
/// exactly once; callers write results into per-index slots so output order
/// never depends on scheduling. The first exception thrown is rethrown
/// after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace spurscan
