#pragma once

#include <cstddef>
#include <functional>

namespace ng4d {

/// Worker count for kernels: NG4D_THREADS if set (>= 1), else the hardware
/// concurrency.
std::size_t thread_count();

/// Runs body(i) for i in [0, n), split into contiguous chunks across
/// thread_count() workers. Each index must write only its own outputs; the
/// result is then independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t min_chunk = 64);

}  // namespace ng4d
