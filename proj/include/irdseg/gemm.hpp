#pragma once

#include <cstddef>

namespace irdseg {

// Plain dense matrix products on row-major buffers. Sizes in this project
// top out around a few thousand per dimension; the i-k-j ordering keeps the
// inner loop contiguous, which is all the tuning these need.

// c[m x n] = a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[k x n] = a^T[k x m] * b[m x n], a given as [m x k]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t p = 0; p < k * n; ++p) c[p] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

// c[m x k] = a[m x n] * b^T[n x k], b given as [k x n]
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* ci = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
            ci[p] = acc;
        }
    }
}

}  // namespace irdseg
