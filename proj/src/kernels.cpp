#include "cpmt/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cpmt::kernels {

namespace {

inline void gemm_nn_row(const double* a, const double* b, double* c, std::size_t k,
                        std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p];
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

inline void gemm_nt_row(const double* a, const double* b, double* c, std::size_t k,
                        std::size_t n, bool accumulate) {
    for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p] * brow[p];
        c[j] = accumulate ? c[j] + s : s;
    }
}

// Row i of a^T b: sum over p of a[p][i] * b[p][:]
inline void gemm_tn_row(const double* a, const double* b, double* c, std::size_t i,
                        std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p * m + i];
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

inline void softmax_row(const double* x, double* y, std::size_t cols) {
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline bool go_parallel(std::size_t work) {
#ifdef _OPENMP
    return work >= kParallelThreshold && omp_get_max_threads() > 1;
#else
    (void)work;
    return false;
#endif
}

}  // namespace

void gemm_nn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i)
        gemm_nn_row(a.data() + i * k, b.data(), c.data() + i * n, k, n, accumulate);
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!go_parallel(m * k * n)) return gemm_nn_serial(a, b, c, m, k, n, accumulate);
    const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < rows; ++i) {
        const auto r = static_cast<std::size_t>(i);
        gemm_nn_row(a.data() + r * k, b.data(), c.data() + r * n, k, n, accumulate);
    }
}

void gemm_nt_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i)
        gemm_nt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!go_parallel(m * k * n)) return gemm_nt_serial(a, b, c, m, k, n, accumulate);
    const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < rows; ++i) {
        const auto r = static_cast<std::size_t>(i);
        gemm_nt_row(a.data() + r * k, b.data(), c.data() + r * n, k, n, accumulate);
    }
}

void gemm_tn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i)
        gemm_tn_row(a.data(), b.data(), c.data() + i * n, i, m, k, n, accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!go_parallel(m * k * n)) return gemm_tn_serial(a, b, c, m, k, n, accumulate);
    const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < rows; ++i) {
        const auto r = static_cast<std::size_t>(i);
        gemm_tn_row(a.data(), b.data(), c.data() + r * n, r, m, k, n, accumulate);
    }
}

void softmax_rows_serial(std::span<const double> x, std::span<double> y, std::size_t rows,
                         std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i)
        softmax_row(x.data() + i * cols, y.data() + i * cols, cols);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols) {
    if (!go_parallel(rows * cols * 8)) return softmax_rows_serial(x, y, rows, cols);
    const long n = static_cast<long>(rows);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        softmax_row(x.data() + r * cols, y.data() + r * cols, cols);
    }
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace cpmt::kernels
