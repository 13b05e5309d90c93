#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace seqrecon {

// Global worker cap; 0 means use hardware concurrency. Outputs never depend
// on the value: parallel loops only write disjoint per-index slots.
inline int& worker_threads() {
  static int n = 0;
  return n;
}

template <class F>
void parallel_for(std::size_t begin, std::size_t end, F&& body) {
  if (end <= begin) return;
  std::size_t count = end - begin;
  int cap = worker_threads();
  unsigned hw = std::thread::hardware_concurrency();
  std::size_t threads = cap > 0 ? static_cast<std::size_t>(cap)
                                : static_cast<std::size_t>(hw ? hw : 1);
  threads = std::min<std::size_t>({threads, count, 64});
  if (threads <= 1) {
    for (std::size_t i = begin; i < end; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::size_t chunk = (count + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    std::size_t lo = begin + t * chunk;
    std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace seqrecon
