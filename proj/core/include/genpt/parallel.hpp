#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace genpt {

// Outer-loop parallelism with static partitioning only: every iteration owns a
// disjoint output slice, so results are identical for a fixed worker count.
template <class F>
void parallel_for(int64_t n, const F& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < n; ++i) fn(i);
}

inline int worker_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_worker_count(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

}  // namespace genpt
