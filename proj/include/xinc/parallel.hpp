#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace xinc {

/// Worker cap: XINC_THREADS if set and positive, else hardware concurrency.
std::size_t thread_count();

/// Runs fn(begin, end) over contiguous chunks of [0, n).
///
/// Callers only split over independent outputs; every reduction stays inside one
/// chunk, so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 1) {
  if (n == 0) return;
  const std::size_t workers = std::min(thread_count(), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk)));
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace xinc
