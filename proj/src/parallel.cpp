#include "atnbreak/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace atnbreak {

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const std::size_t count = std::min(jobs, n);
    pool.reserve(count);
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
}

std::size_t default_jobs() {
  if (const char* env = std::getenv("ATNBREAK_JOBS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

}  // namespace atnbreak
