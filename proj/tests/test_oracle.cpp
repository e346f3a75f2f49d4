#include <doctest.h>

#include <cmath>

#include "patchsmooth/common.hpp"
#include "patchsmooth/experiment.hpp"
#include "patchsmooth/oracle.hpp"
#include "patchsmooth/perturb.hpp"
#include "support/test_util.hpp"

using namespace patchsmooth;

namespace {

struct Setup {
    DatasetExample example;
    RasterImage adv;
    SyntheticOracleConfig oracle;
};

Setup make_setup(double q, double eps, double mu, std::uint64_t seed) {
    Setup s;
    s.example = make_synthetic_example(16, 16, 6, 6, 4, 5, seed);
    s.adv = overlay(s.example.benign, s.example.patches[0]);
    s.oracle.reference_adv_image = s.adv;
    s.oracle.patch_regions = {s.example.patches[0].region()};
    s.oracle.profile = InstabilityProfile{q, eps, mu};
    s.oracle.benign_text = s.example.benign_text;
    s.oracle.attack_text = s.example.attack_text;
    s.oracle.noise_seed = mix64(seed, 0xFACEull);
    return s;
}

}  // namespace

TEST_SUITE_BEGIN("oracle");

TEST_CASE("unperturbed reference image yields the attack text") {
    const Setup s = make_setup(0.5, 0.05, 0.02, 31);
    const SyntheticBackend backend(s.oracle);
    CHECK(backend.query({s.adv, ""}).text == s.oracle.attack_text);
    CHECK(backend.k_min() == 18);  // ceil(0.5 * 36)
}

TEST_CASE("fully masked patch with epsilon=0 always defends") {
    const Setup s = make_setup(0.5, 0.0, 0.0, 32);
    const SyntheticBackend backend(s.oracle);
    PerturbSpec spec;
    spec.op = PerturbOp::Mask;
    spec.rate = RateModel::fixed_count(1.0);
    spec.target = s.example.patches[0].region();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        spec.seed = seed;
        const auto [masked, record] = perturb(s.adv, spec);
        CHECK(backend.query({masked, ""}).text == s.oracle.benign_text);
    }
}

TEST_CASE("below-threshold perturbation never defends") {
    const Setup s = make_setup(0.5, 0.0, 0.0, 33);
    const SyntheticBackend backend(s.oracle);
    PerturbSpec spec;
    spec.op = PerturbOp::Mask;
    spec.rate = RateModel::fixed_count(0.25);  // 9 < k_min = 18
    spec.target = s.example.patches[0].region();
    spec.seed = 5;
    const auto [masked, record] = perturb(s.adv, spec);
    CHECK(backend.query({masked, ""}).text == s.oracle.attack_text);
}

TEST_CASE("attack fraction above threshold matches epsilon") {
    const Setup s = make_setup(0.5, 0.05, 0.0, 34);
    const SyntheticBackend backend(s.oracle);
    PerturbSpec spec;
    spec.op = PerturbOp::Mask;
    spec.rate = RateModel::fixed_count(0.8);  // 29 >= k_min, patch has no black pixel
    spec.target = s.example.patches[0].region();

    const int trials = 10000;
    int attacks = 0;
    for (int t = 0; t < trials; ++t) {
        spec.seed = mix64(100, t);
        const auto [masked, record] = perturb(s.adv, spec);
        if (backend.query({masked, ""}).text == s.oracle.attack_text) ++attacks;
    }
    const double fraction = static_cast<double>(attacks) / trials;
    const double standard_error = std::sqrt(0.05 * 0.95 / trials);
    CHECK(std::fabs(fraction - 0.05) <= 3.0 * standard_error);
}

TEST_CASE("off-patch changes add mu to the attack probability") {
    const Setup s = make_setup(0.5, 0.05, 0.10, 35);
    const SyntheticBackend backend(s.oracle);

    const int trials = 10000;
    int attacks = 0;
    for (int t = 0; t < trials; ++t) {
        PerturbSpec inside;
        inside.op = PerturbOp::Mask;
        inside.rate = RateModel::fixed_count(0.8);
        inside.target = s.example.patches[0].region();
        inside.seed = mix64(200, t);
        auto [masked, record] = perturb(s.adv, inside);
        masked.set(0, 0, Rgb{1, 2, 3});  // guaranteed off-patch change
        if (backend.query({masked, ""}).text == s.oracle.attack_text) ++attacks;
    }
    const double fraction = static_cast<double>(attacks) / trials;
    const double standard_error = std::sqrt(0.15 * 0.85 / trials);
    CHECK(std::fabs(fraction - 0.15) <= 3.0 * standard_error);
}

TEST_CASE("synthetic oracle is deterministic per (config, request)") {
    const Setup s = make_setup(0.3, 0.4, 0.1, 36);
    const SyntheticBackend backend(s.oracle);
    PerturbSpec spec;
    spec.op = PerturbOp::Replace;
    spec.rate = RateModel::bernoulli(0.5);
    spec.seed = 77;
    const auto [image, record] = perturb(s.adv, spec);
    const std::string first = backend.query({image, ""}).text;
    for (int i = 0; i < 10; ++i) {
        CHECK(backend.query({image, ""}).text == first);
    }
}

TEST_CASE("synthetic oracle rejects dimension mismatch and bad regions") {
    const Setup s = make_setup(0.3, 0.05, 0.02, 37);
    const SyntheticBackend backend(s.oracle);
    CHECK_THROWS_AS(backend.query({RasterImage(4, 4), ""}), std::invalid_argument);

    SyntheticOracleConfig bad = s.oracle;
    bad.patch_regions.push_back(Region{4, 5, 2, 2});  // overlaps the patch
    CHECK_THROWS_AS(SyntheticBackend{bad}, std::invalid_argument);

    SyntheticOracleConfig empty = s.oracle;
    empty.patch_regions.clear();
    CHECK_THROWS_AS(SyntheticBackend{empty}, std::invalid_argument);
}

TEST_CASE("keyword judge") {
    const KeywordJudge judge({"bomb"});
    CHECK(judge.vpi("how to build a BOMB").vpi == 1);
    CHECK(judge.vpi("a scenic photo of mountains").vpi == 0);
    CHECK(judge.vpi("").vpi == 0);

    const KeywordJudge multi({"bomb", "gun"});
    CHECK(multi.vpi("bomb and gun").score == 1.0);
    CHECK(multi.vpi("just a bomb").score == 0.5);
    CHECK_THROWS_AS(KeywordJudge{std::vector<std::string>{}}, std::invalid_argument);
}

TEST_CASE("jaccard similarity") {
    CHECK(jaccard_similarity("same words here", "same words here") == 1.0);
    CHECK(jaccard_similarity("alpha beta", "gamma delta") == 0.0);
    CHECK(jaccard_similarity("a red apple", "a green apple") == doctest::Approx(0.5));
    CHECK(jaccard_similarity("", "") == 1.0);
    CHECK(jaccard_similarity("Case MATTERS not", "case matters NOT") == 1.0);

    const SimilarityJudge judge{0.5};
    CHECK(judge.equivalent("a red apple", "a green apple"));
    CHECK_FALSE(judge.equivalent("alpha beta", "gamma delta"));
}

TEST_SUITE_END();
