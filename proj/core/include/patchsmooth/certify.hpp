#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace patchsmooth {

/// Certified-assumption parameters of a patched attack: perturbing at least
/// ceil(q * patch_pixels) patch pixels defeats the attack except with
/// probability epsilon; perturbing pixels outside the patch degrades the
/// defense probability by at most mu.
struct InstabilityProfile {
    double q = 0.0;
    double epsilon = 0.0;
    double mu = 0.0;

    void validate() const;
};

/// Tie handling for even vote counts.
///
/// In the defense-success sum (dsp), StrictMajority requires benign votes to
/// strictly exceed N/2 (ties count as defense failure; conservative, the
/// default), while CeilHalf starts the sum at ceil(N/2) (ties count as
/// success). In the vote itself (pipeline), CeilHalf flags an attack when
/// attack votes reach N/2 and StrictMajority only when they exceed it. The
/// two rules coincide for odd N.
enum class TieRule { StrictMajority, CeilHalf };

std::string_view to_string(TieRule rule);
TieRule tie_rule_from_string(std::string_view name);

struct CertQuery {
    std::int64_t patch_pixels = 1;  // m*n
    double p = 0.0;                 // whole-image per-pixel perturbation probability
    int n_samples = 1;              // N
    InstabilityProfile profile;
    TieRule tie_rule = TieRule::StrictMajority;

    void validate() const;
};

struct CertResult {
    double alpha_lower = 0.0;
    double dsp_lower = 0.0;
    std::int64_t k_min = 0;  // ceil(q * patch_pixels)
    CertQuery query;
};

/// P[X >= k_min] for X ~ Binomial(n, p). Exact long-double summation for
/// n <= 64 (absolute error well under 1e-12); regularized incomplete beta
/// for larger n (relative error well under 1e-9 up to n ~ 1e6).
double binomial_tail(std::int64_t n, double p, std::int64_t k_min);

/// P[X >= k_min] where X counts how many of `draws` pixels sampled without
/// replacement from `total` land in a marked set of size `marked`. Exact
/// integer arithmetic for total <= 64, log-space summation beyond.
double hypergeometric_tail(std::int64_t total, std::int64_t marked,
                           std::int64_t draws, std::int64_t k_min);

enum class TailMode { Bernoulli, FixedCount };

/// Lower bound on the per-copy defense probability:
/// (1 - epsilon - mu) * P[#perturbed patch pixels >= ceil(q * patch_pixels)].
/// Bernoulli mode uses the binomial tail over the patch; FixedCount mode uses
/// the hypergeometric tail with draws = ceil(p * total_pixels).
double alpha_lower_bound(const CertQuery& query, TailMode mode,
                         std::int64_t total_pixels = 0);

/// Majority-vote success probability: P[at least t_min of n_samples
/// independent copies defend], each defending with probability alpha.
double dsp(double alpha, int n_samples, TieRule tie_rule = TieRule::StrictMajority);

/// Threshold t_min used by dsp for the given vote count and tie rule.
int dsp_threshold(int n_samples, TieRule tie_rule);

CertResult certify(const CertQuery& query, TailMode mode = TailMode::Bernoulli,
                   std::int64_t total_pixels = 0);

/// Smallest odd N with dsp(alpha, N) >= target, or nullopt when majority
/// amplification cannot reach the target (alpha <= 1/2 and target > alpha).
std::optional<int> minimal_n(double target_dsp, double alpha);

/// DSP over a (N, p) grid at a fixed absolute instability threshold k_min
/// inside a patch of `patch_pixels` pixels. Only epsilon and mu of the
/// profile are read; q is superseded by the explicit k_min.
struct HeatmapGrid {
    std::int64_t k_min = 0;
    std::vector<int> n_values;
    std::vector<double> p_values;
    std::vector<std::vector<double>> dsp;  // dsp[n_index][p_index]
};

HeatmapGrid heatmap_grid(std::int64_t k_min, std::int64_t patch_pixels,
                         const std::vector<int>& n_values,
                         const std::vector<double>& p_values,
                         const InstabilityProfile& profile,
                         TieRule tie_rule = TieRule::StrictMajority);

/// CSV with header "n,p,dsp", one cell per line, 12 significant digits.
std::string heatmap_to_csv(const HeatmapGrid& grid);
HeatmapGrid heatmap_from_csv(const std::string& csv);
std::string to_json(const HeatmapGrid& grid);

std::string to_json(const CertResult& result);
/// Single-cell CSV in the same "n,p,dsp" shape as the heatmap.
std::string cert_result_to_csv(const CertResult& result);

}  // namespace patchsmooth
