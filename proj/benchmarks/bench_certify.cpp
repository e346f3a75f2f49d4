#include <benchmark/benchmark.h>

#include "patchsmooth/certify.hpp"

using namespace patchsmooth;

static void BM_BinomialTailExact(benchmark::State& state) {
    const auto n = state.range(0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(binomial_tail(n, 0.3, n / 4));
    }
}
BENCHMARK(BM_BinomialTailExact)->Arg(16)->Arg(64);

static void BM_BinomialTailBeta(benchmark::State& state) {
    const auto n = state.range(0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(binomial_tail(n, 0.3, n / 4));
    }
}
BENCHMARK(BM_BinomialTailBeta)->Arg(1000)->Arg(100000)->Arg(1000000);

static void BM_HypergeometricTail(benchmark::State& state) {
    const auto total = state.range(0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            hypergeometric_tail(total, total / 16, total / 10, total / 64));
    }
}
BENCHMARK(BM_HypergeometricTail)->Arg(64)->Arg(1024)->Arg(50176);

static void BM_Certify(benchmark::State& state) {
    CertQuery query;
    query.patch_pixels = 1024;
    query.p = 0.3;
    query.n_samples = static_cast<int>(state.range(0));
    query.profile = InstabilityProfile{0.15, 0.05, 0.02};
    for (auto _ : state) {
        benchmark::DoNotOptimize(certify(query));
    }
}
BENCHMARK(BM_Certify)->Arg(1)->Arg(9)->Arg(101);

static void BM_MinimalN(benchmark::State& state) {
    for (auto _ : state) {
        benchmark::DoNotOptimize(minimal_n(0.999999, 0.55));
    }
}
BENCHMARK(BM_MinimalN);

static void BM_HeatmapGrid(benchmark::State& state) {
    std::vector<int> n_values;
    for (int n = 1; n <= 20; ++n) n_values.push_back(n);
    std::vector<double> p_values;
    for (int i = 1; i <= 19; ++i) p_values.push_back(0.05 * i);
    const InstabilityProfile profile{0.0, 0.05, 0.02};
    for (auto _ : state) {
        benchmark::DoNotOptimize(heatmap_grid(10, 100, n_values, p_values, profile));
    }
}
BENCHMARK(BM_HeatmapGrid);
