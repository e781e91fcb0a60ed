#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace overdilute {

// Worker count: OVERDILUTE_THREADS wins, otherwise hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("OVERDILUTE_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Runs fn(i) for i in [0, count). Work items must be independent; results
// written to disjoint locations stay deterministic under any schedule.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn,
                         std::size_t max_workers = 0) {
  std::size_t workers = max_workers == 0 ? worker_count() : max_workers;
  if (workers > count) workers = count;
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace overdilute
