#pragma once

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mote {

/// Execution policy for the data-parallel kernels. Every kernel produces
/// bit-identical output under both policies: element loops write disjoint
/// slots and reductions use a fixed block structure.
enum class Exec { serial, parallel };

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

/// Elementwise loop over [0, n). The body must write disjoint outputs and
/// must not throw.
template <class F>
void parallel_for(std::int64_t n, F&& body, Exec exec = Exec::parallel) {
#ifdef _OPENMP
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
#else
  (void)exec;
#endif
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

namespace detail {
constexpr std::int64_t kSumBlock = 4096;
}

/// Blocked sum of get(i) over [0, n). Partial sums are taken over fixed
/// 4096-element blocks and combined in block order, so the result does not
/// depend on the thread count.
template <class Get>
double block_sum_fn(std::int64_t n, Get&& get, Exec exec = Exec::parallel) {
  if (n <= 0) return 0.0;
  const std::int64_t nblocks = (n + detail::kSumBlock - 1) / detail::kSumBlock;
  if (nblocks == 1) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += get(i);
    return s;
  }
  std::vector<double> partial(static_cast<std::size_t>(nblocks), 0.0);
  parallel_for(
      nblocks,
      [&](std::int64_t b) {
        const std::int64_t lo = b * detail::kSumBlock;
        const std::int64_t hi = std::min(n, lo + detail::kSumBlock);
        double s = 0.0;
        for (std::int64_t i = lo; i < hi; ++i) s += get(i);
        partial[static_cast<std::size_t>(b)] = s;
      },
      exec);
  double total = 0.0;
  for (double s : partial) total += s;
  return total;
}

inline double block_sum(const double* x, std::int64_t n, Exec exec = Exec::parallel) {
  return block_sum_fn(n, [x](std::int64_t i) { return x[i]; }, exec);
}

inline double block_mean(const double* x, std::int64_t n, Exec exec = Exec::parallel) {
  return n > 0 ? block_sum(x, n, exec) / static_cast<double>(n) : 0.0;
}

}  // namespace mote
