#include <benchmark/benchmark.h>

#include "patchsmooth/experiment.hpp"
#include "patchsmooth/pipeline.hpp"

using namespace patchsmooth;

// end-to-end smoothed query against the synthetic oracle, the hot loop of
// every Monte-Carlo run
static void BM_SmoothQuerySynthetic(benchmark::State& state) {
    const DatasetExample example = make_synthetic_example(32, 32, 8, 8, 12, 12, 9000);
    const RasterImage adv = overlay(example.benign, example.patches[0]);
    SyntheticOracleConfig oracle;
    oracle.reference_adv_image = adv;
    oracle.patch_regions = {example.patches[0].region()};
    oracle.profile = InstabilityProfile{0.15, 0.05, 0.02};
    oracle.attack_text = example.attack_text;
    oracle.benign_text = example.benign_text;
    oracle.noise_seed = 9001;
    const SyntheticBackend backend(oracle);
    const KeywordJudge judge(std::vector<std::string>{example.attack_text});

    SmoothingConfig config;
    config.n_samples = static_cast<int>(state.range(0));
    config.perturb.op = PerturbOp::Mask;
    config.perturb.rate = RateModel::bernoulli(0.3);

    std::uint64_t seed = 0;
    for (auto _ : state) {
        config.perturb.seed = seed++;
        benchmark::DoNotOptimize(smooth_query(adv, "", config, backend, judge));
    }
    state.SetItemsProcessed(state.iterations() * config.n_samples);
}
BENCHMARK(BM_SmoothQuerySynthetic)->Arg(1)->Arg(5)->Arg(10);
