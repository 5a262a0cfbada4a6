#pragma once

#include <cblas.h>

#include <cstdlib>

namespace bsdn {

// BLAS thread count: BSDN_THREADS env, else the given default. The GEMM
// shapes in this project are small enough that one thread usually wins;
// results are bitwise reproducible for any fixed setting.
inline void init_threads_from_env(int dflt = 1) {
    const char* v = std::getenv("BSDN_THREADS");
    const int n = v ? std::atoi(v) : dflt;
    if (n > 0) openblas_set_num_threads(n);
}

}  // namespace bsdn
