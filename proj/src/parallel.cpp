#include "fpmc/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fpmc {

namespace {

int env_threads() {
  if (const char* env = std::getenv("FPMC_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return 0;
}

// Applies FPMC_THREADS once at load time.
[[maybe_unused]] const bool kEnvApplied = [] {
  if (const int n = env_threads(); n > 0) set_num_threads(n);
  return true;
}();

}  // namespace

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n <= 0) n = env_threads();
  if (n <= 0) n = omp_get_num_procs();
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace fpmc
