#pragma once

#include <cstddef>
#include <functional>

namespace survgrad {

// Worker budget for internal parallel loops. Initialised from the
// SURVGRAD_THREADS environment variable (default: hardware concurrency).
std::size_t thread_budget();
void set_thread_budget(std::size_t threads);

// Pins the thread budget for the lifetime of the object.
class ScopedThreadBudget {
 public:
  explicit ScopedThreadBudget(std::size_t threads);
  ~ScopedThreadBudget();
  ScopedThreadBudget(const ScopedThreadBudget&) = delete;
  ScopedThreadBudget& operator=(const ScopedThreadBudget&) = delete;

 private:
  std::size_t previous_;
};

// Runs body(i) for i in [0, n). Iterations must not share mutable state;
// results must not depend on which worker ran an iteration.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace survgrad
