#pragma once

#include <cstddef>
#include <functional>

namespace sgs {

/// Worker count for data-parallel loops. Reads SGS_THREADS when set, otherwise
/// the hardware concurrency.
unsigned worker_count();

/// Overrides the worker count for the rest of the process (0 restores the default).
void set_worker_count(unsigned count);

/// Runs body(i) for i in [0, count). Iterations must write disjoint data; the
/// caller owns any reduction so results do not depend on the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace sgs
