#pragma once

#include <cstdint>
#include <functional>

namespace sgf {

/// Execution policy for the batch kernels (sampling estimators, sweeps,
/// bulk validation). `serial` is the reference path; `openmp` must produce
/// identical results, which the test suite asserts.
enum class Exec { serial, openmp };

struct ExecPolicy {
  Exec mode = Exec::openmp;
  int threads = 0;  // 0 = runtime default

  static ExecPolicy serial() { return {Exec::serial, 1}; }
};

/// Runs f(i) for i in [0, n). Exceptions thrown by any index are captured
/// and the first one is rethrown after the loop completes.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& f,
                  const ExecPolicy& policy);

/// Number of worker threads the openmp path would use under `policy`.
int effective_threads(const ExecPolicy& policy);

}  // namespace sgf
