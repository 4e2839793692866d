#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace nlens {

// Worker cap for corpus-parallel operations. 0 restores the default
// (hardware concurrency).
void set_thread_count(int n);
int thread_count();

namespace detail {
inline thread_local bool in_worker = false;
}

// Runs fn(i) for i in [0, n) on up to thread_count() workers. Callers write
// results into slot i and reduce afterwards in index order, so results never
// depend on the worker count. The exception from the lowest failing index is
// rethrown.
// Nested calls from inside a worker run serially.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn) {
  const size_t workers = std::min(n, static_cast<size_t>(std::max(1, thread_count())));
  if (workers <= 1 || detail::in_worker) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto work = [&]() {
    const bool was = detail::in_worker;
    detail::in_worker = true;
    for (size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    detail::in_worker = was;
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace nlens
