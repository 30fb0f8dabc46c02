#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace heterofl {

/// Runs fn(0..n-1) on up to `threads` workers (0 = hardware concurrency).
/// Work items must be independent; any ordered reduction happens on the
/// caller's side, indexed by i, so results never depend on the schedule.
inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  auto worker = [&](unsigned slot) {
    try {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
    } catch (...) {
      errors[slot] = std::current_exception();
      next.store(n);  // drain remaining work
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (unsigned s = 1; s < threads; ++s) pool.emplace_back(worker, s);
  worker(0);
  for (auto& th : pool) th.join();
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

}  // namespace heterofl
