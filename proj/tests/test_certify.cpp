#include <doctest.h>

#include <cmath>

#include "patchsmooth/certify.hpp"
#include "patchsmooth/common.hpp"
#include "support/test_util.hpp"

using namespace patchsmooth;

namespace {

InstabilityProfile profile(double q, double eps, double mu) {
    return InstabilityProfile{q, eps, mu};
}

CertQuery query(std::int64_t mn, double q, double p, double eps, double mu, int n,
                TieRule tie = TieRule::StrictMajority) {
    CertQuery out;
    out.patch_pixels = mn;
    out.p = p;
    out.n_samples = n;
    out.profile = profile(q, eps, mu);
    out.tie_rule = tie;
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("certify");

TEST_CASE("binomial_tail spot values") {
    // 2^4 enumeration: 11 of 16 outcomes have >= 2 successes at p=1/2
    CHECK(binomial_tail(4, 0.5, 2) == doctest::Approx(11.0 / 16.0).epsilon(1e-14));
    CHECK(binomial_tail(9, 0.37, 0) == 1.0);
    CHECK(binomial_tail(10, 0.0, 1) == 0.0);
    CHECK(binomial_tail(10, 1.0, 10) == 1.0);
    CHECK(binomial_tail(5, 0.3, 6) == 0.0);  // k_min = n+1
}

TEST_CASE("binomial_tail rejects invalid inputs") {
    CHECK_THROWS_AS(binomial_tail(4, 0.5, 6), std::invalid_argument);
    CHECK_THROWS_AS(binomial_tail(4, 0.5, -1), std::invalid_argument);
    CHECK_THROWS_AS(binomial_tail(4, 1.5, 2), std::invalid_argument);
    CHECK_THROWS_AS(binomial_tail(-1, 0.5, 0), std::invalid_argument);
}

TEST_CASE("binomial_tail matches exhaustive enumeration for small n") {
    for (int n = 0; n <= 12; ++n) {
        for (double p : {0.1, 0.3, 0.5, 0.8}) {
            for (int k = 0; k <= n + 1; ++k) {
                CHECK(binomial_tail(n, p, k) ==
                      doctest::Approx(testutil::binomial_tail_enum(n, p, k))
                          .epsilon(1e-13));
            }
        }
    }
}

TEST_CASE("large-n path agrees with direct long-double summation") {
    const auto direct = [](int n, double p, int k_min) {
        long double sum = 0.0L;
        long double log_p = std::log(static_cast<long double>(p));
        long double log_1p = std::log(1.0L - static_cast<long double>(p));
        for (int k = k_min; k <= n; ++k) {
            long double log_c = 0.0L;
            for (int i = 1; i <= k; ++i) {
                log_c += std::log(static_cast<long double>(n - k + i)) -
                         std::log(static_cast<long double>(i));
            }
            sum += std::exp(log_c + k * log_p + (n - k) * log_1p);
        }
        return static_cast<double>(sum);
    };
    for (int n : {65, 100, 1000}) {
        for (double p : {0.05, 0.3, 0.7}) {
            for (int k_min : {1, n / 10 + 1, n / 3, n / 2}) {
                const double expected = direct(n, p, k_min);
                const double got = binomial_tail(n, p, k_min);
                CHECK(got == doctest::Approx(expected).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("binomial_tail is monotone in p and k") {
    for (int n : {7, 40, 200}) {
        for (int k = 1; k <= n; k += n / 7 + 1) {
            double previous = 0.0;
            for (double p = 0.05; p < 1.0; p += 0.05) {
                const double tail = binomial_tail(n, p, k);
                CHECK(tail >= previous - 1e-12);
                previous = tail;
            }
        }
        for (double p : {0.2, 0.6}) {
            double previous = 1.0;
            for (int k = 0; k <= n + 1; ++k) {
                const double tail = binomial_tail(n, p, k);
                CHECK(tail <= previous + 1e-12);
                previous = tail;
            }
        }
    }
}

TEST_CASE("hypergeometric_tail spot values") {
    // 4 pixels, 2 marked, draw 2: only one of the C(4,2)=6 draws misses both
    CHECK(hypergeometric_tail(4, 2, 2, 1) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(hypergeometric_tail(9, 3, 4, 0) == 1.0);
    CHECK(hypergeometric_tail(9, 3, 0, 1) == 0.0);
    CHECK_THROWS_AS(hypergeometric_tail(4, 5, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(hypergeometric_tail(4, 2, 5, 1), std::invalid_argument);
    CHECK_THROWS_AS(hypergeometric_tail(4, 2, 2, -1), std::invalid_argument);
}

TEST_CASE("hypergeometric_tail equals subset enumeration exactly for small totals") {
    for (int total = 1; total <= 10; ++total) {
        for (int marked = 0; marked <= total; ++marked) {
            for (int draws = 0; draws <= total; ++draws) {
                for (int k = 0; k <= std::min(marked, draws) + 1; ++k) {
                    CHECK(hypergeometric_tail(total, marked, draws, k) ==
                          testutil::hypergeometric_tail_enum(total, marked, draws, k));
                }
            }
        }
    }
}

TEST_CASE("hypergeometric large path is consistent with the exact path") {
    // the overlap count is exchangeable in (marked, draws)
    CHECK(hypergeometric_tail(200, 64, 30, 10) ==
          doctest::Approx(hypergeometric_tail(200, 30, 64, 10)).epsilon(1e-12));
    // drawing everything pins the overlap to the marked count
    CHECK(hypergeometric_tail(100, 30, 100, 30) == 1.0);
    CHECK(hypergeometric_tail(100, 30, 100, 31) == 0.0);
    // one extra unmarked pixel lowers the overlap odds across the path switch
    const double exact = hypergeometric_tail(64, 16, 20, 6);
    const double large = hypergeometric_tail(65, 16, 20, 6);
    CHECK(large < exact);
    CHECK(large == doctest::Approx(exact).epsilon(0.1));
}

TEST_CASE("alpha_lower_bound composes the tail with the error terms") {
    CHECK(alpha_lower_bound(query(4, 0.5, 0.5, 0.05, 0.02, 1), TailMode::Bernoulli) ==
          doctest::Approx(0.93 * 0.6875).epsilon(1e-13));
    CHECK(alpha_lower_bound(query(4, 0.5, 0.5, 0.6, 0.4, 1), TailMode::Bernoulli) ==
          0.0);
    CHECK(alpha_lower_bound(query(16, 0.3, 1.0, 0.05, 0.02, 1), TailMode::Bernoulli) ==
          doctest::Approx(0.93).epsilon(1e-13));
}

TEST_CASE("fixed-count mode uses the hypergeometric tail") {
    // 2x2 patch in a 2x2 image: draws = ceil(0.5*4) = 2 out of 4, marked 2
    const double alpha =
        alpha_lower_bound(query(2, 0.5, 0.5, 0.0, 0.0, 1), TailMode::FixedCount, 4);
    CHECK(alpha == doctest::Approx(hypergeometric_tail(4, 2, 2, 1)).epsilon(1e-15));
    CHECK_THROWS_AS(
        alpha_lower_bound(query(8, 0.5, 0.5, 0.0, 0.0, 1), TailMode::FixedCount, 4),
        std::invalid_argument);
}

TEST_CASE("dsp spot values and tie thresholds") {
    CHECK(dsp(0.37, 1) == doctest::Approx(0.37).epsilon(1e-15));
    CHECK(dsp(0.9, 3) == doctest::Approx(0.972).epsilon(1e-14));
    CHECK(dsp(0.9, 3) == doctest::Approx(testutil::dsp_enum(0.9, 3, 2)).epsilon(1e-14));
    CHECK(dsp(1.0, 9) == 1.0);
    CHECK(dsp(1.0, 10) == 1.0);
    CHECK_THROWS_AS(dsp(1.2, 3), std::invalid_argument);

    CHECK(dsp_threshold(5, TieRule::StrictMajority) == 3);
    CHECK(dsp_threshold(5, TieRule::CeilHalf) == 3);
    CHECK(dsp_threshold(4, TieRule::StrictMajority) == 3);  // tie = defense failure
    CHECK(dsp_threshold(4, TieRule::CeilHalf) == 2);        // tie = defense success
    CHECK_THROWS_AS(dsp_threshold(0, TieRule::CeilHalf), std::invalid_argument);

    // the strict rule can only lower the bound
    CHECK(dsp(0.8, 4, TieRule::StrictMajority) <= dsp(0.8, 4, TieRule::CeilHalf));
    CHECK(dsp(0.8, 4, TieRule::CeilHalf) ==
          doctest::Approx(testutil::dsp_enum(0.8, 4, 2)).epsilon(1e-14));
    CHECK(dsp(0.8, 4, TieRule::StrictMajority) ==
          doctest::Approx(testutil::dsp_enum(0.8, 4, 3)).epsilon(1e-14));
}

TEST_CASE("dsp is monotone in alpha; odd-N majority amplification") {
    for (int n : {3, 7, 15}) {
        double previous = 0.0;
        for (double alpha = 0.0; alpha <= 1.0; alpha += 0.05) {
            const double value = dsp(alpha, n);
            CHECK(value >= previous - 1e-12);
            previous = value;
        }
    }
    for (double alpha : {0.55, 0.7, 0.95}) {
        double previous = 0.0;
        for (int n = 1; n <= 31; n += 2) {
            const double value = dsp(alpha, n);
            CHECK(value >= previous - 1e-12);
            previous = value;
        }
    }
}

TEST_CASE("certify composes alpha and dsp") {
    const CertResult one = certify(query(4, 0.5, 0.5, 0.05, 0.02, 1));
    CHECK(one.k_min == 2);
    CHECK(one.dsp_lower == doctest::Approx(0.639375).epsilon(1e-13));
    CHECK(one.alpha_lower == one.dsp_lower);

    // alpha forced to 0.9 via epsilon=0.1, p=1 (tail = 1)
    const CertResult three = certify(query(16, 0.3, 1.0, 0.1, 0.0, 3));
    CHECK(three.dsp_lower == doctest::Approx(0.972).epsilon(1e-13));

    // q = 0: any perturbation defeats the patch, tail = 1
    const CertResult q0 = certify(query(25, 0.0, 0.15, 0.05, 0.02, 7));
    CHECK(q0.k_min == 0);
    CHECK(q0.dsp_lower == doctest::Approx(dsp(0.93, 7)).epsilon(1e-13));

    // pure function: identical queries give bit-identical results
    const CertResult again = certify(query(4, 0.5, 0.5, 0.05, 0.02, 1));
    CHECK(again.dsp_lower == one.dsp_lower);
    CHECK(again.alpha_lower == one.alpha_lower);
}

TEST_CASE("certify rejects invalid profiles") {
    CHECK_THROWS_AS(certify(query(4, 0.5, 0.5, 0.7, 0.4, 1)), std::invalid_argument);
    CHECK_THROWS_AS(certify(query(0, 0.5, 0.5, 0.1, 0.0, 1)), std::invalid_argument);
    CHECK_THROWS_AS(certify(query(4, 0.5, 0.5, 0.1, 0.0, 0)), std::invalid_argument);
}

TEST_CASE("minimal_n inverse queries") {
    CHECK(minimal_n(0.97, 0.9) == 3);  // dsp(0.9,1)=0.9 < 0.97 <= 0.972
    CHECK(minimal_n(0.5, 0.9) == 1);
    CHECK(minimal_n(0.9, 0.4) == std::nullopt);
    CHECK(minimal_n(0.999, 0.9) == 9);  // dsp(0.9,7)=0.997272 < 0.999 <= 0.999109
    CHECK(minimal_n(0.4, 0.4) == 1);
    CHECK_THROWS_AS(minimal_n(0.0, 0.9), std::invalid_argument);
    CHECK_THROWS_AS(minimal_n(1.0, 0.9), std::invalid_argument);
    // alpha barely above 1/2 with an extreme target overflows the search cap
    CHECK_THROWS_AS(minimal_n(1.0 - 1e-12, 0.5 + 1e-7), std::runtime_error);
    // a barely-amplifying alpha still resolves when the target is modest
    CHECK(minimal_n(0.51, 0.509).value() == 3);  // dsp(0.509,3) ~ 0.5135

    // returned N is minimal: the previous odd N misses the target
    for (double alpha : {0.6, 0.75, 0.9}) {
        for (double target : {0.9, 0.99, 0.9999}) {
            const auto n = minimal_n(target, alpha);
            REQUIRE(n.has_value());
            CHECK(dsp(alpha, *n) >= target);
            if (*n > 1) CHECK(dsp(alpha, *n - 2) < target);
        }
    }
}

TEST_CASE("heatmap grid shape, monotonicity and CSV round-trip") {
    const std::vector<int> n_values{1, 2, 3, 5, 8};
    std::vector<double> p_values;
    for (double p = 0.1; p <= 0.91; p += 0.1) p_values.push_back(p);

    const HeatmapGrid grid =
        heatmap_grid(3, 36, n_values, p_values, profile(0.0, 0.05, 0.02));
    REQUIRE(grid.dsp.size() == n_values.size());
    REQUIRE(grid.dsp[0].size() == p_values.size());

    // nondecreasing along p in every row
    for (std::size_t ni = 0; ni < n_values.size(); ++ni) {
        for (std::size_t pi = 1; pi < p_values.size(); ++pi) {
            CHECK(grid.dsp[ni][pi] >= grid.dsp[ni][pi - 1] - 1e-12);
        }
    }

    // p=1 entry equals dsp(1 - eps - mu, N)
    const HeatmapGrid full = heatmap_grid(3, 36, n_values, {1.0}, profile(0.0, 0.05, 0.02));
    for (std::size_t ni = 0; ni < n_values.size(); ++ni) {
        CHECK(full.dsp[ni][0] ==
              doctest::Approx(dsp(0.93, n_values[ni])).epsilon(1e-13));
    }

    const std::string csv = heatmap_to_csv(grid);
    const HeatmapGrid parsed = heatmap_from_csv(csv);
    REQUIRE(parsed.n_values == grid.n_values);
    REQUIRE(parsed.p_values.size() == grid.p_values.size());
    CHECK(heatmap_to_csv(parsed) == csv);  // stable re-emission
    for (std::size_t ni = 0; ni < grid.dsp.size(); ++ni) {
        for (std::size_t pi = 0; pi < grid.dsp[ni].size(); ++pi) {
            CHECK(std::fabs(parsed.dsp[ni][pi] - grid.dsp[ni][pi]) <= 1e-12);
        }
    }

    CHECK_THROWS_AS(heatmap_grid(3, 36, {}, p_values, profile(0, 0.05, 0.02)),
                    std::invalid_argument);
    CHECK_THROWS_AS(heatmap_from_csv("bogus\n1,2,3\n"), std::invalid_argument);
}

TEST_CASE("cert results and grids serialize to JSON and CSV") {
    const CertResult result = certify(query(4, 0.5, 0.5, 0.05, 0.02, 3));
    const std::string csv = cert_result_to_csv(result);
    CHECK(csv.rfind("n,p,dsp\n3,0.5,", 0) == 0);
    const HeatmapGrid cell = heatmap_from_csv(csv);
    REQUIRE(cell.n_values == std::vector<int>{3});
    CHECK(std::fabs(cell.dsp[0][0] - result.dsp_lower) <= 1e-12);

    const HeatmapGrid grid =
        heatmap_grid(2, 16, {1, 3}, {0.25, 0.75}, profile(0.0, 0.05, 0.02));
    const std::string json_text = to_json(grid);
    CHECK(json_text.find("\"k_min\":2") != std::string::npos);
    CHECK(json_text.find("\"n_values\":[1,3]") != std::string::npos);
}

TEST_CASE("ceil_count matches the ceiling contract") {
    CHECK(ceil_count(0.5, 4) == 2);
    CHECK(ceil_count(0.05, 50176) == 2509);
    CHECK(ceil_count(0.15, 64) == 10);  // 9.6 rounds up
    CHECK(ceil_count(0.1, 30) == 3);    // products within 1e-9 of an integer snap down
    CHECK(ceil_count(0.0, 100) == 0);
    CHECK(ceil_count(1.0, 100) == 100);
    CHECK_THROWS_AS(ceil_count(1.5, 10), std::invalid_argument);
}

TEST_SUITE_END();
