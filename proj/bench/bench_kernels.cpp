// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cpmt/kernels.hpp"

namespace k = cpmt::kernels;

namespace {

std::vector<double> random_values(std::size_t n, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> dist;
    std::vector<double> v(n);
    for (auto& x : v) x = dist(gen);
    return v;
}

template <auto Kernel>
void BM_gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        Kernel(a, b, c, n, n, n, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <auto Kernel>
void BM_softmax(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{256};
    const auto x = random_values(rows * cols, 3);
    std::vector<double> y(rows * cols);
    for (auto _ : state) {
        Kernel(x, y, rows, cols);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * cols));
}

}  // namespace

BENCHMARK(BM_gemm<k::gemm_nn_serial>)->Name("gemm_nn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<k::gemm_nn>)->Name("gemm_nn/openmp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<k::gemm_nt_serial>)->Name("gemm_nt/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<k::gemm_nt>)->Name("gemm_nt/openmp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<k::gemm_tn_serial>)->Name("gemm_tn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<k::gemm_tn>)->Name("gemm_tn/openmp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_softmax<k::softmax_rows_serial>)->Name("softmax/serial")->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_softmax<k::softmax_rows>)->Name("softmax/openmp")->RangeMultiplier(4)->Range(64, 4096);

BENCHMARK_MAIN();
