#include "sgf/parallel.hpp"

#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sgf {

int effective_threads(const ExecPolicy& policy) {
  if (policy.mode == Exec::serial) return 1;
#ifdef _OPENMP
  return policy.threads > 0 ? policy.threads : omp_get_max_threads();
#else
  return 1;
#endif
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& f,
                  const ExecPolicy& policy) {
  if (n <= 0) return;

  const int nthreads = effective_threads(policy);
  if (policy.mode == Exec::serial || nthreads <= 1) {
    for (std::int64_t i = 0; i < n; ++i) f(i);
    return;
  }

#ifdef _OPENMP
  std::exception_ptr first_error;
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      f(i);
    } catch (...) {
#pragma omp critical(sgf_parallel_for_error)
      {
        if (!first_error) first_error = std::current_exception();
      }
    }
  }
  if (first_error) std::rethrow_exception(first_error);
#else
  for (std::int64_t i = 0; i < n; ++i) f(i);
#endif
}

}  // namespace sgf
