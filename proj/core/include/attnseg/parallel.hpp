#pragma once

#include <cstddef>
#include <functional>

namespace attnseg {

/// Worker cap from ATTNSEG_THREADS (0 or unset = hardware concurrency), unless overridden.
int worker_count();

/// Overrides the worker cap for this process; 0 restores the environment default.
void set_worker_count(int workers);

/// Runs body(i) for i in [0, count), statically partitioned into contiguous
/// chunks. Callers must write only to slots owned by i; any cross-index
/// reduction happens afterwards in index order, so results do not depend on
/// the worker count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace attnseg
