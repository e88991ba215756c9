#pragma once

// Dense row-major kernels used by the tensor engine.
//
// Each kernel has a serial reference (`*_serial`) and an OpenMP version. The
// parallel versions split work by output row and keep the per-element
// accumulation order of the reference, so both produce bit-identical results;
// the tests compare them exactly. Small problems skip the parallel region.

#include <cstddef>
#include <span>

namespace cpmt::kernels {

// Work (m*k*n multiply-adds) below which the OpenMP kernels run serially.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

// c[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

// c[m x n] (+)= a[k x m]^T * b[k x n]
void gemm_tn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

// Max-subtracted softmax over contiguous rows of length `cols`.
void softmax_rows_serial(std::span<const double> x, std::span<double> y, std::size_t rows,
                         std::size_t cols);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols);

int max_threads();

}  // namespace cpmt::kernels
