#pragma once

// Static-partition parallel loop. Work is cut into contiguous chunks whose
// boundaries depend only on (n, threads), and each index is handled by exactly
// one chunk, so callers that write disjoint outputs get thread-count-independent
// results.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ctlio {

inline int hardware_threads() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

/// Calls fn(begin, end) over contiguous ranges covering [0, n). Chunk count is
/// 4× the thread count; threads pull chunks in order from a shared counter.
/// The first exception thrown by any chunk is rethrown on the caller.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (n == 0) return;
  threads = std::max(1, threads);
  if (threads == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunks = std::min<std::size_t>(n, static_cast<std::size_t>(threads) * 4);
  const std::size_t base = n / chunks, extra = n % chunks;
  auto chunk_begin = [&](std::size_t c) { return c * base + std::min(c, extra); };

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        fn(chunk_begin(c), chunk_begin(c + 1));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int spawned = static_cast<int>(std::min<std::size_t>(chunks, static_cast<std::size_t>(threads))) - 1;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(spawned));
  for (int k = 0; k < spawned; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace ctlio
