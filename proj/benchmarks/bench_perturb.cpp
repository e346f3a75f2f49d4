#include <benchmark/benchmark.h>

#include <random>

#include "patchsmooth/perturb.hpp"

using namespace patchsmooth;

namespace {

RasterImage random_image(int height, int width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> channel(0, 255);
    std::vector<Rgb> pixels(static_cast<std::size_t>(height) * width);
    for (Rgb& px : pixels) {
        px = Rgb{static_cast<std::uint8_t>(channel(rng)),
                 static_cast<std::uint8_t>(channel(rng)),
                 static_cast<std::uint8_t>(channel(rng))};
    }
    return RasterImage(height, width, std::move(pixels));
}

}  // namespace

static void BM_SelectFixedCount(benchmark::State& state) {
    const int dim = static_cast<int>(state.range(0));
    PerturbSpec spec;
    spec.op = PerturbOp::Mask;
    spec.rate = RateModel::fixed_count(0.05);
    std::uint64_t seed = 0;
    for (auto _ : state) {
        spec.seed = seed++;
        benchmark::DoNotOptimize(select_pixels(spec, ImageDims{dim, dim}));
    }
    state.SetItemsProcessed(state.iterations() * dim * dim);
}
BENCHMARK(BM_SelectFixedCount)->Arg(32)->Arg(224);

static void BM_SelectBernoulli(benchmark::State& state) {
    const int dim = static_cast<int>(state.range(0));
    PerturbSpec spec;
    spec.op = PerturbOp::Mask;
    spec.rate = RateModel::bernoulli(0.3);
    std::uint64_t seed = 0;
    for (auto _ : state) {
        spec.seed = seed++;
        benchmark::DoNotOptimize(select_pixels(spec, ImageDims{dim, dim}));
    }
    state.SetItemsProcessed(state.iterations() * dim * dim);
}
BENCHMARK(BM_SelectBernoulli)->Arg(32)->Arg(224);

static void BM_MaskWholeImage(benchmark::State& state) {
    const int dim = static_cast<int>(state.range(0));
    const RasterImage image = random_image(dim, dim, 1);
    PerturbSpec spec;
    spec.op = PerturbOp::Mask;
    spec.rate = RateModel::bernoulli(0.3);
    spec.seed = 2;
    const PerturbRecord record = select_pixels(spec, ImageDims{dim, dim});
    for (auto _ : state) {
        benchmark::DoNotOptimize(apply_mask(image, record));
    }
    state.SetBytesProcessed(state.iterations() * dim * dim * 3);
}
BENCHMARK(BM_MaskWholeImage)->Arg(32)->Arg(224);

static void BM_PerturbEndToEnd(benchmark::State& state) {
    const RasterImage image = random_image(224, 224, 3);
    PerturbSpec spec;
    spec.op = PerturbOp::Replace;
    spec.rate = RateModel::bernoulli(0.1);
    std::uint64_t seed = 0;
    for (auto _ : state) {
        spec.seed = seed++;
        benchmark::DoNotOptimize(perturb(image, spec));
    }
}
BENCHMARK(BM_PerturbEndToEnd);
