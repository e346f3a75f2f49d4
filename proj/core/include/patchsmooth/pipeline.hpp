#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchsmooth/certify.hpp"
#include "patchsmooth/oracle.hpp"
#include "patchsmooth/perturb.hpp"

namespace patchsmooth {

enum class FailurePolicy {
    FailFast,  // first backend failure aborts the whole query (default)
    DropCopy,  // failed copies are excluded from the vote; certificate voided
};

struct SmoothingConfig {
    int n_samples = 5;
    /// Template for each perturbed copy; copy j runs with seed = seed + j.
    PerturbSpec perturb;
    /// Vote threshold: CeilHalf flags an attack when attack votes reach half
    /// of the copies (ties count as attack); StrictMajority only when they
    /// exceed half.
    TieRule tie_rule = TieRule::CeilHalf;
    FailurePolicy on_backend_error = FailurePolicy::FailFast;
    int max_parallel = 1;  // <=0 uses hardware concurrency

    void validate() const;
};

struct CopyOutcome {
    PerturbRecord record;
    VlmResponse response;
    JudgeVerdict verdict;
    bool ok = false;
    std::string error;       // non-empty when !ok
    std::string error_kind;  // backend error category when !ok
};

struct SmoothedResult {
    int verdict_attack = 0;  // majority-voted attack indicator A
    std::string response;    // a copy's response agreeing with the vote
    int selected_index = -1;
    std::vector<CopyOutcome> per_copy;
    int effective_n = 0;            // copies that actually voted
    bool certificate_void = false;  // true when copies were dropped
};

/// Majority-voted attack indicator over per-copy verdicts.
int majority_verdict(int attack_votes, int n_votes, TieRule tie_rule);

/// Perturbs n_samples copies of the image (records fixed up front), queries
/// the backend (possibly concurrently), judges each response, majority-votes
/// the verdicts and returns a uniformly chosen response that agrees with the
/// vote. Deterministic for a deterministic backend, whatever the schedule.
SmoothedResult smooth_query(const RasterImage& image, const std::string& text_prompt,
                            const SmoothingConfig& config, const VlmBackend& backend,
                            const Judge& judge);

/// 1 - verdict_attack.
int defense_success(const SmoothedResult& result);

std::string to_json(const SmoothedResult& result);

}  // namespace patchsmooth
