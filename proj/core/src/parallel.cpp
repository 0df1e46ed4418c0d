#include "plkrf/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <thread>
#include <vector>

namespace plkrf {

namespace {

std::atomic<int> g_workers{1};

// Nested parallel_for calls run inline instead of re-entering the pool.
thread_local bool t_in_parallel = false;

// Minimal persistent pool. One parallel_for runs at a time; every pool
// thread wakes per job, grabs chunks from a shared cursor, and the caller
// blocks until all threads have finished draining.
class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void run(std::size_t n, int workers, const std::function<void(std::size_t, std::size_t)>& fn) {
    std::unique_lock<std::mutex> job_lock(job_mutex_);
    ensure_threads(workers - 1);
    fn_ = &fn;
    total_ = n;
    chunk_ = (n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
    next_.store(0);
    pending_.store(static_cast<int>(threads_.size()));
    {
      std::lock_guard<std::mutex> lg(mutex_);
      ++generation_;
      cv_.notify_all();
    }
    drain();
    std::unique_lock<std::mutex> lock(mutex_);
    done_cv_.wait(lock, [this] { return pending_.load() == 0; });
    fn_ = nullptr;
  }

 private:
  void ensure_threads(int count) {
    while (static_cast<int>(threads_.size()) < count) {
      threads_.emplace_back([this](std::stop_token st) { worker_loop(st); });
    }
  }

  void drain() {
    t_in_parallel = true;
    for (;;) {
      const std::size_t begin = next_.fetch_add(chunk_);
      if (begin >= total_) break;
      const std::size_t end = begin + chunk_ < total_ ? begin + chunk_ : total_;
      (*fn_)(begin, end);
    }
    t_in_parallel = false;
  }

  void worker_loop(std::stop_token st) {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lock(mutex_);
        if (!cv_.wait(lock, st, [this, seen] { return generation_ != seen; })) return;
        seen = generation_;
      }
      drain();
      if (pending_.fetch_sub(1) == 1) {
        std::lock_guard<std::mutex> lg(mutex_);
        done_cv_.notify_all();
      }
    }
  }

  std::mutex job_mutex_;
  std::mutex mutex_;
  std::condition_variable_any cv_;
  std::condition_variable done_cv_;
  std::vector<std::jthread> threads_;
  const std::function<void(std::size_t, std::size_t)>* fn_ = nullptr;
  std::size_t total_ = 0;
  std::size_t chunk_ = 1;
  std::atomic<std::size_t> next_{0};
  std::atomic<int> pending_{0};
  std::uint64_t generation_ = 0;
};

}  // namespace

int worker_count() { return g_workers.load(); }

void set_worker_count(int workers) { g_workers.store(workers < 1 ? 1 : workers); }

int hardware_worker_count() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  const int workers = g_workers.load();
  if (workers <= 1 || n < 2 || t_in_parallel) {
    if (n > 0) fn(0, n);
    return;
  }
  Pool::instance().run(n, workers, fn);
}

}  // namespace plkrf
