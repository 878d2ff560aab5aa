#include "swav/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace k = swav::kernels;

namespace {

std::vector<double> random_doubles(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

template <auto Fn>
void BM_gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const k::GemmShape s{n, n, n};
    const auto a = random_doubles(n * n, 1), b = random_doubles(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        Fn(a, b, c, s, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <auto Fn>
void BM_frame_distances(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    constexpr std::size_t dim = 64;
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> u;
    std::vector<float> f(rows * dim);
    for (auto& x : f) x = u(rng);
    std::vector<double> out(rows);
    for (auto _ : state) {
        Fn(f, rows, dim, out);
        benchmark::DoNotOptimize(out.data());
    }
}

template <auto Fn>
void BM_cosine(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    constexpr std::size_t dim = 128;
    const auto q = random_doubles(dim, 4), index = random_doubles(rows * dim, 5);
    std::vector<double> out(rows);
    for (auto _ : state) {
        Fn(q, index, rows, out);
        benchmark::DoNotOptimize(out.data());
    }
}

template <auto Fn>
void BM_bootstrap(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937 rng(6);
    std::vector<std::uint8_t> pa(n), pb(n), truth(n), group(n);
    for (std::size_t i = 0; i < n; ++i) {
        pa[i] = rng() & 1;
        pb[i] = rng() & 1;
        truth[i] = rng() & 1;
        group[i] = i % 4 == 0;
    }
    std::vector<double> diffs(1000);
    const k::BootstrapInput in{pa, pb, truth, group};
    for (auto _ : state) {
        Fn(in, 11, diffs);
        benchmark::DoNotOptimize(diffs.data());
    }
}

}  // namespace

BENCHMARK(BM_gemm<k::serial::gemm>)->Name("gemm/serial")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<k::omp::gemm>)->Name("gemm/omp")->Arg(32)->Arg(128)->Arg(256);
BENCHMARK(BM_frame_distances<k::serial::frame_distances>)->Name("frame_distances/serial")->Arg(1024)->Arg(16384);
BENCHMARK(BM_frame_distances<k::omp::frame_distances>)->Name("frame_distances/omp")->Arg(1024)->Arg(16384);
BENCHMARK(BM_cosine<k::serial::cosine_scores>)->Name("cosine_scores/serial")->Arg(1000)->Arg(20000);
BENCHMARK(BM_cosine<k::omp::cosine_scores>)->Name("cosine_scores/omp")->Arg(1000)->Arg(20000);
BENCHMARK(BM_bootstrap<k::serial::bootstrap_diffs>)->Name("bootstrap_diffs/serial")->Arg(500)->Arg(5000);
BENCHMARK(BM_bootstrap<k::omp::bootstrap_diffs>)->Name("bootstrap_diffs/omp")->Arg(500)->Arg(5000);

BENCHMARK_MAIN();
