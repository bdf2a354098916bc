#include "survgrad/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace survgrad {

namespace {

std::size_t initial_budget() {
  if (const char* env = std::getenv("SURVGRAD_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::atomic<std::size_t>& budget() {
  static std::atomic<std::size_t> b{initial_budget()};
  return b;
}

}  // namespace

std::size_t thread_budget() { return budget().load(); }

void set_thread_budget(std::size_t threads) { budget().store(std::max<std::size_t>(1, threads)); }

ScopedThreadBudget::ScopedThreadBudget(std::size_t threads) : previous_(thread_budget()) {
  set_thread_budget(threads);
}

ScopedThreadBudget::~ScopedThreadBudget() { set_thread_budget(previous_); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(thread_budget(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace survgrad
