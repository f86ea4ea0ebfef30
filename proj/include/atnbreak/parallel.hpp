#pragma once

#include <cstddef>
#include <functional>

namespace atnbreak {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
// thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// ATNBREAK_JOBS if set to a positive integer, otherwise 1.
std::size_t default_jobs();

}  // namespace atnbreak
