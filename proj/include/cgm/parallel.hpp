#pragma once

#include <cstddef>
#include <functional>

namespace cgm {

/// Number of hardware threads, at least 1.
std::size_t default_workers();

/// Runs body(i) for i in [0, n) on up to `workers` threads (0 = default).
/// The first exception thrown by any task is rethrown after all threads join.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& body);

}  // namespace cgm
