#include "tinydistill/threadpool.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace tinydistill {

namespace {

int pool_size_from_env() {
  unsigned hw = std::thread::hardware_concurrency();
  int n = hw == 0 ? 1 : static_cast<int>(hw);
  if (const char* env = std::getenv("TINY_DISTILL_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min<long>(n, cap) > 0 ? static_cast<int>(std::min<long>(n, cap)) : 1;
  }
  return n < 1 ? 1 : n;
}

}  // namespace

struct ThreadPool::Impl {
  std::vector<std::thread> workers;
  std::mutex mu;
  std::condition_variable cv_work;
  std::condition_variable cv_done;
  const std::function<void(std::size_t)>* job = nullptr;
  std::size_t n_chunks = 0;
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::uint64_t generation = 0;
  bool stop = false;

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::size_t)>* fn = nullptr;
      std::size_t total = 0;
      {
        std::unique_lock<std::mutex> lk(mu);
        cv_work.wait(lk, [&] { return stop || generation != seen; });
        if (stop) return;
        seen = generation;
        fn = job;
        total = n_chunks;
      }
      for (;;) {
        std::size_t c = next.fetch_add(1);
        if (c >= total) break;
        (*fn)(c);
      }
      {
        std::lock_guard<std::mutex> lk(mu);
        if (++done == workers.size()) cv_done.notify_one();
      }
    }
  }
};

ThreadPool::ThreadPool() : impl_(new Impl), threads_(pool_size_from_env()) {
  for (int i = 1; i < threads_; ++i) impl_->workers.emplace_back([this] { impl_->worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    impl_->stop = true;
  }
  impl_->cv_work.notify_all();
  for (auto& w : impl_->workers) w.join();
  delete impl_;
}

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool;
  return pool;
}

void ThreadPool::parallel_for(std::size_t n_chunks, const std::function<void(std::size_t)>& fn) {
  if (n_chunks == 0) return;
  if (impl_->workers.empty() || n_chunks == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    impl_->job = &fn;
    impl_->n_chunks = n_chunks;
    impl_->next.store(0);
    impl_->done = 0;
    ++impl_->generation;
  }
  impl_->cv_work.notify_all();
  // The calling thread participates too.
  for (;;) {
    std::size_t c = impl_->next.fetch_add(1);
    if (c >= n_chunks) break;
    fn(c);
  }
  std::unique_lock<std::mutex> lk(impl_->mu);
  impl_->cv_done.wait(lk, [&] { return impl_->done == impl_->workers.size(); });
}

}  // namespace tinydistill
