#pragma once

#include <cstddef>
#include <functional>

namespace pdforge {

// Runs fn(i) for i in [0, n) across worker_count() threads. Each index owns
// its output slots, so results are independent of the thread count; callers
// do any cross-index reduction afterwards in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pdforge
