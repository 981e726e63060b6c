#pragma once

#include <cstddef>
#include <functional>

namespace ctiq {

/// Worker count to use: `requested`, or the hardware concurrency when 0.
std::size_t resolve_workers(std::size_t requested);

/// Run body(i) for i in [0, count) on up to `workers` threads (0 = hardware
/// concurrency). Indices are handed out dynamically, so body must write only
/// to slots owned by i. If any call throws, the exception of the lowest
/// failing index is rethrown after all threads join.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& body);

}  // namespace ctiq
