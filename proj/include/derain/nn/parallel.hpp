#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace derain::nn {

namespace detail {
inline std::atomic<int>& thread_setting() {
  static std::atomic<int> n{0};  // 0: not configured yet
  return n;
}

inline int default_threads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* cap = std::getenv("DERAIN_THREADS")) {
    try {
      n = std::min(n, std::max(1, std::stoi(cap)));
    } catch (const std::exception&) {
    }
  }
  return n;
}
}  // namespace detail

/// Worker count used by element-parallel kernels. Defaults to the hardware
/// concurrency capped by DERAIN_THREADS.
inline int num_threads() {
  int n = detail::thread_setting().load();
  if (n == 0) {
    n = detail::default_threads();
    detail::thread_setting().store(n);
  }
  return n;
}

inline void set_num_threads(int n) { detail::thread_setting().store(std::max(1, n)); }

/// Runs fn(i) for i in [0, n). Each index must write disjoint memory, which
/// makes the result independent of the worker count.
template <class Fn>
void parallel_for(int n, Fn&& fn) {
  const int workers = std::min(num_threads(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += workers) fn(i);
    });
}

}  // namespace derain::nn
