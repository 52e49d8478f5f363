#ifndef MSCKE_PARALLEL_HPP_
#define MSCKE_PARALLEL_HPP_

#include <atomic>
#include <cstdint>
#include <exception>
#include <utility>

namespace mscke {

// Runs fn(i) for i in [0, n). With parallel == true the iterations are
// distributed over OpenMP threads; exceptions are captured and the first one
// rethrown after the join, since throwing across a parallel region is fatal.
// Callers write results into per-index slots and reduce serially afterwards,
// which keeps parallel and serial execution bit-identical.
template <typename Fn>
void parallel_for(std::size_t n, bool parallel, Fn&& fn) {
  std::atomic<bool> failed{false};
  std::exception_ptr err;
  const std::int64_t count = static_cast<std::int64_t>(n);
#pragma omp parallel for if (parallel) schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    if (failed.load(std::memory_order_relaxed)) continue;
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(mscke_parallel_for_err)
      {
        if (!failed.exchange(true)) err = std::current_exception();
      }
    }
  }
  if (err) std::rethrow_exception(err);
}

}  // namespace mscke

#endif  // MSCKE_PARALLEL_HPP_
