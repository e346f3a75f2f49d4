#include "patchsmooth/certify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "patchsmooth/common.hpp"

namespace patchsmooth {

using nlohmann::json;

namespace {

constexpr std::int64_t kExactSumMaxN = 64;

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

void require_probability(double value, const char* name) {
    if (!(value >= 0.0 && value <= 1.0)) {
        throw std::invalid_argument(std::string(name) + " must lie in [0,1], got " +
                                    std::to_string(value));
    }
}

// Exact C(n,k) for n <= 64; the running product stays below 2^127.
std::uint64_t choose_u64(std::int64_t n, std::int64_t k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 result = 1;
    for (std::int64_t i = 1; i <= k; ++i) {
        result = result * static_cast<unsigned __int128>(n - k + i) /
                 static_cast<unsigned __int128>(i);
    }
    return static_cast<std::uint64_t>(result);
}

// Continued fraction for the regularized incomplete beta (modified Lentz).
double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 400;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_cf(a, b, x) / a;
    }
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

long double lchoose(std::int64_t n, std::int64_t k) {
    return std::lgamma(static_cast<long double>(n + 1)) -
           std::lgamma(static_cast<long double>(k + 1)) -
           std::lgamma(static_cast<long double>(n - k + 1));
}

}  // namespace

void InstabilityProfile::validate() const {
    require_probability(q, "q");
    require_probability(epsilon, "epsilon");
    require_probability(mu, "mu");
    if (epsilon + mu > 1.0 + 1e-15) {
        throw std::invalid_argument("epsilon + mu must not exceed 1, got " +
                                    std::to_string(epsilon + mu));
    }
}

std::string_view to_string(TieRule rule) {
    return rule == TieRule::StrictMajority ? "strict-majority" : "ceil-half";
}

TieRule tie_rule_from_string(std::string_view name) {
    if (name == "strict-majority" || name == "strict") return TieRule::StrictMajority;
    if (name == "ceil-half" || name == "ceil_half") return TieRule::CeilHalf;
    throw std::invalid_argument("unknown tie rule: " + std::string(name));
}

void CertQuery::validate() const {
    if (patch_pixels < 1) {
        throw std::invalid_argument("patch_pixels must be >= 1, got " +
                                    std::to_string(patch_pixels));
    }
    require_probability(p, "p");
    if (n_samples < 1) {
        throw std::invalid_argument("n_samples must be >= 1, got " +
                                    std::to_string(n_samples));
    }
    profile.validate();
}

double binomial_tail(std::int64_t n, double p, std::int64_t k_min) {
    if (n < 0) {
        throw std::invalid_argument("n must be nonnegative, got " + std::to_string(n));
    }
    require_probability(p, "p");
    if (k_min < 0 || k_min > n + 1) {
        throw std::invalid_argument("k_min must lie in [0, n+1], got " +
                                    std::to_string(k_min) + " for n=" + std::to_string(n));
    }
    if (k_min == 0) return 1.0;
    if (k_min == n + 1) return 0.0;
    if (p == 0.0) return 0.0;  // k_min >= 1 here
    if (p == 1.0) return 1.0;  // k_min <= n here

    if (n <= kExactSumMaxN) {
        const auto lp = static_cast<long double>(p);
        long double tail = 0.0L;
        for (std::int64_t k = k_min; k <= n; ++k) {
            tail += static_cast<long double>(choose_u64(n, k)) * std::pow(lp, static_cast<long double>(k)) *
                    std::pow(1.0L - lp, static_cast<long double>(n - k));
        }
        return static_cast<double>(std::min(1.0L, tail));
    }
    return clamp01(reg_inc_beta(static_cast<double>(k_min),
                                static_cast<double>(n - k_min + 1), p));
}

double hypergeometric_tail(std::int64_t total, std::int64_t marked,
                           std::int64_t draws, std::int64_t k_min) {
    if (total < 0 || marked < 0 || marked > total || draws < 0 || draws > total) {
        std::ostringstream msg;
        msg << "inconsistent counts: total=" << total << " marked=" << marked
            << " draws=" << draws;
        throw std::invalid_argument(msg.str());
    }
    if (k_min < 0) {
        throw std::invalid_argument("k_min must be nonnegative, got " +
                                    std::to_string(k_min));
    }
    const std::int64_t k_lo = std::max<std::int64_t>(0, draws - (total - marked));
    const std::int64_t k_hi = std::min(draws, marked);
    if (k_min <= k_lo) return 1.0;
    if (k_min > k_hi) return 0.0;

    if (total <= kExactSumMaxN) {
        // each term is at most C(total, draws), which fits in 64 bits here
        std::uint64_t favorable = 0;
        for (std::int64_t k = k_min; k <= k_hi; ++k) {
            favorable += choose_u64(marked, k) * choose_u64(total - marked, draws - k);
        }
        const std::uint64_t all = choose_u64(total, draws);
        return static_cast<double>(static_cast<long double>(favorable) /
                                   static_cast<long double>(all));
    }

    long double tail = 0.0L;
    const long double ln_den = lchoose(total, draws);
    for (std::int64_t k = k_min; k <= k_hi; ++k) {
        tail += std::exp(lchoose(marked, k) + lchoose(total - marked, draws - k) - ln_den);
    }
    return clamp01(static_cast<double>(tail));
}

double alpha_lower_bound(const CertQuery& query, TailMode mode,
                         std::int64_t total_pixels) {
    query.validate();
    const std::int64_t k_min = ceil_count(query.profile.q, query.patch_pixels);
    double tail = 0.0;
    if (mode == TailMode::Bernoulli) {
        tail = binomial_tail(query.patch_pixels, query.p, k_min);
    } else {
        if (total_pixels < query.patch_pixels) {
            throw std::invalid_argument(
                "fixed-count mode needs total_pixels >= patch_pixels, got " +
                std::to_string(total_pixels) + " < " + std::to_string(query.patch_pixels));
        }
        const std::int64_t draws = ceil_count(query.p, total_pixels);
        tail = hypergeometric_tail(total_pixels, query.patch_pixels, draws, k_min);
    }
    return clamp01((1.0 - query.profile.epsilon - query.profile.mu) * tail);
}

int dsp_threshold(int n_samples, TieRule tie_rule) {
    if (n_samples < 1) {
        throw std::invalid_argument("n_samples must be >= 1, got " +
                                    std::to_string(n_samples));
    }
    if (n_samples % 2 == 1) return (n_samples + 1) / 2;
    return tie_rule == TieRule::StrictMajority ? n_samples / 2 + 1 : n_samples / 2;
}

double dsp(double alpha, int n_samples, TieRule tie_rule) {
    require_probability(alpha, "alpha");
    return binomial_tail(n_samples, alpha, dsp_threshold(n_samples, tie_rule));
}

CertResult certify(const CertQuery& query, TailMode mode, std::int64_t total_pixels) {
    CertResult result;
    result.query = query;
    result.k_min = ceil_count(query.profile.q, query.patch_pixels);
    result.alpha_lower = alpha_lower_bound(query, mode, total_pixels);
    result.dsp_lower = dsp(result.alpha_lower, query.n_samples, query.tie_rule);
    return result;
}

std::optional<int> minimal_n(double target_dsp, double alpha) {
    if (!(target_dsp > 0.0 && target_dsp < 1.0)) {
        throw std::invalid_argument("target must lie in (0,1), got " +
                                    std::to_string(target_dsp));
    }
    require_probability(alpha, "alpha");

    if (target_dsp <= alpha) return 1;  // dsp(alpha, 1) == alpha
    if (alpha <= 0.5) return std::nullopt;  // majority cannot amplify

    // Hoeffding: 1 - dsp(alpha, N) <= exp(-2 N (alpha - 1/2)^2), so this N
    // always reaches the target.
    const double gap = alpha - 0.5;
    const double bound = std::log(1.0 / (1.0 - target_dsp)) / (2.0 * gap * gap);
    constexpr std::int64_t kMaxN = std::int64_t{1} << 30;
    if (!(bound < static_cast<double>(kMaxN))) {
        throw std::runtime_error("minimal N exceeds the search limit for alpha=" +
                                 std::to_string(alpha));
    }
    std::int64_t hi = static_cast<std::int64_t>(bound) + 1;
    if (hi % 2 == 0) ++hi;
    while (dsp(alpha, static_cast<int>(hi), TieRule::StrictMajority) < target_dsp) {
        hi = hi * 2 + 1;
        if (hi > kMaxN) {
            throw std::runtime_error("minimal N exceeds the search limit for alpha=" +
                                     std::to_string(alpha));
        }
    }
    // binary search over odd N; dsp is nondecreasing over odd N for alpha > 1/2
    std::int64_t lo = 1;  // dsp(alpha, 1) = alpha < target
    while (hi - lo > 2) {
        std::int64_t mid = lo + (hi - lo) / 2;
        if (mid % 2 == 0) ++mid;
        if (dsp(alpha, static_cast<int>(mid), TieRule::StrictMajority) >= target_dsp) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return static_cast<int>(hi);
}

HeatmapGrid heatmap_grid(std::int64_t k_min, std::int64_t patch_pixels,
                         const std::vector<int>& n_values,
                         const std::vector<double>& p_values,
                         const InstabilityProfile& profile, TieRule tie_rule) {
    if (n_values.empty() || p_values.empty()) {
        throw std::invalid_argument("heatmap grids must be non-empty");
    }
    if (patch_pixels < 1 || k_min < 0 || k_min > patch_pixels) {
        throw std::invalid_argument("need 0 <= k_min <= patch_pixels >= 1, got k_min=" +
                                    std::to_string(k_min) + " patch_pixels=" +
                                    std::to_string(patch_pixels));
    }
    profile.validate();

    HeatmapGrid grid;
    grid.k_min = k_min;
    grid.n_values = n_values;
    grid.p_values = p_values;
    grid.dsp.reserve(n_values.size());
    const double factor = 1.0 - profile.epsilon - profile.mu;
    for (int n : n_values) {
        std::vector<double> row;
        row.reserve(p_values.size());
        for (double p : p_values) {
            const double alpha = clamp01(factor * binomial_tail(patch_pixels, p, k_min));
            row.push_back(dsp(alpha, n, tie_rule));
        }
        grid.dsp.push_back(std::move(row));
    }
    return grid;
}

std::string heatmap_to_csv(const HeatmapGrid& grid) {
    std::string out = "n,p,dsp\n";
    char line[96];
    for (std::size_t ni = 0; ni < grid.n_values.size(); ++ni) {
        for (std::size_t pi = 0; pi < grid.p_values.size(); ++pi) {
            std::snprintf(line, sizeof line, "%d,%.12g,%.12g\n", grid.n_values[ni],
                          grid.p_values[pi], grid.dsp[ni][pi]);
            out += line;
        }
    }
    return out;
}

HeatmapGrid heatmap_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != "n,p,dsp") {
        throw std::invalid_argument("heatmap CSV must start with header n,p,dsp");
    }
    HeatmapGrid grid;
    int current_n = 0;
    bool first_row = true;
    std::vector<double> row;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        int n = 0;
        double p = 0.0;
        double value = 0.0;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf", &n, &p, &value) != 3) {
            throw std::invalid_argument("malformed heatmap CSV line: " + line);
        }
        if (first_row || n != current_n) {
            if (!first_row) grid.dsp.push_back(std::move(row));
            row.clear();
            grid.n_values.push_back(n);
            current_n = n;
            first_row = false;
        }
        if (grid.n_values.size() == 1) grid.p_values.push_back(p);
        row.push_back(value);
    }
    if (!first_row) grid.dsp.push_back(std::move(row));
    for (const auto& r : grid.dsp) {
        if (r.size() != grid.p_values.size()) {
            throw std::invalid_argument("ragged heatmap CSV");
        }
    }
    return grid;
}

std::string to_json(const HeatmapGrid& grid) {
    json j;
    j["k_min"] = grid.k_min;
    j["n_values"] = grid.n_values;
    j["p_values"] = grid.p_values;
    j["dsp"] = grid.dsp;
    return j.dump();
}

std::string cert_result_to_csv(const CertResult& result) {
    char line[96];
    std::snprintf(line, sizeof line, "n,p,dsp\n%d,%.12g,%.12g\n",
                  result.query.n_samples, result.query.p, result.dsp_lower);
    return line;
}

std::string to_json(const CertResult& result) {
    json j;
    j["alpha_lower"] = result.alpha_lower;
    j["dsp_lower"] = result.dsp_lower;
    j["k_min"] = result.k_min;
    j["inputs"] = {{"patch_pixels", result.query.patch_pixels},
                   {"p", result.query.p},
                   {"n_samples", result.query.n_samples},
                   {"q", result.query.profile.q},
                   {"epsilon", result.query.profile.epsilon},
                   {"mu", result.query.profile.mu},
                   {"tie_rule", std::string(to_string(result.query.tie_rule))}};
    return j.dump();
}

}  // namespace patchsmooth
