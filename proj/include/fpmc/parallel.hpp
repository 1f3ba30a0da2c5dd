#pragma once

#include <exception>

#include "fpmc/types.hpp"

namespace fpmc {

/// Worker count for internal loops. 0 restores the runtime default
/// (FPMC_THREADS if set, else all cores).
void set_num_threads(int n);
int num_threads();

/// Runs f(i) for i in [0, n) across the worker pool. The first exception
/// thrown by any iteration is rethrown on the calling thread.
template <class F>
void parallel_for(Index n, F&& f) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (Index i = 0; i < n; ++i) {
    try {
      f(i);
    } catch (...) {
#pragma omp critical(fpmc_parallel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace fpmc
