#pragma once

#include <cstddef>
#include <functional>

namespace tinydistill {

// Process-wide worker pool for data-parallel kernels. Work is expressed as
// a fixed list of chunks; every chunk writes a disjoint slice of the output
// and is computed by exactly one worker, so results are bitwise identical
// for any worker count or schedule. TINY_DISTILL_THREADS caps the pool size
// (read once at first use); unset means std::thread::hardware_concurrency.
class ThreadPool {
 public:
  static ThreadPool& instance();

  int threads() const { return threads_; }

  // Runs fn(chunk) for chunk in [0, n_chunks). Runs inline when the pool has
  // a single worker or there is a single chunk. fn must not throw.
  void parallel_for(std::size_t n_chunks, const std::function<void(std::size_t)>& fn);

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

 private:
  ThreadPool();
  ~ThreadPool();

  struct Impl;
  Impl* impl_;
  int threads_;
};

}  // namespace tinydistill
