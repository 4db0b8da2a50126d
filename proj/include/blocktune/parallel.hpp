#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

namespace blocktune {

// Runs fn(i) for i in [0, count). Parallel execution uses an OpenMP loop;
// the first exception thrown by any iteration is rethrown on the caller.
// Callers must write results into per-index slots so that the outcome does
// not depend on scheduling.
template <typename Fn>
void for_each_index(std::size_t count, bool parallel, Fn&& fn) {
  if (!parallel) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace blocktune
