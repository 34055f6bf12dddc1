#pragma once

#include <cstddef>
#include <functional>

namespace stereoroma {

/// Worker cap from STEREOROMA_THREADS (0 or unset = hardware concurrency).
int worker_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous blocks; callers
/// must write to disjoint outputs so results do not depend on thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace stereoroma
