#include "patchsmooth/pipeline.hpp"

#include <atomic>
#include <random>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "patchsmooth/common.hpp"

namespace patchsmooth {

using nlohmann::json;

void SmoothingConfig::validate() const {
    if (n_samples < 1) {
        throw std::invalid_argument("n_samples must be >= 1, got " +
                                    std::to_string(n_samples));
    }
    if (!(perturb.rate.value >= 0.0 && perturb.rate.value <= 1.0)) {
        throw std::invalid_argument("perturbation rate must lie in [0,1]");
    }
}

int majority_verdict(int attack_votes, int n_votes, TieRule tie_rule) {
    if (n_votes < 1 || attack_votes < 0 || attack_votes > n_votes) {
        throw std::invalid_argument("inconsistent vote counts: " +
                                    std::to_string(attack_votes) + "/" +
                                    std::to_string(n_votes));
    }
    if (tie_rule == TieRule::CeilHalf) {
        return 2 * attack_votes >= n_votes ? 1 : 0;
    }
    return 2 * attack_votes > n_votes ? 1 : 0;
}

SmoothedResult smooth_query(const RasterImage& image, const std::string& text_prompt,
                            const SmoothingConfig& config, const VlmBackend& backend,
                            const Judge& judge) {
    config.validate();
    const int n = config.n_samples;
    const ImageDims dims{image.height(), image.width()};

    SmoothedResult result;
    result.per_copy.resize(static_cast<std::size_t>(n));

    // all perturbation records are fixed before any query is dispatched
    for (int j = 0; j < n; ++j) {
        PerturbSpec copy_spec = config.perturb;
        copy_spec.seed = config.perturb.seed + static_cast<std::uint64_t>(j);
        result.per_copy[static_cast<std::size_t>(j)].record =
            select_pixels(copy_spec, dims);
    }

    const auto run_copy = [&](int j) {
        CopyOutcome& outcome = result.per_copy[static_cast<std::size_t>(j)];
        try {
            const RasterImage perturbed = apply_record(image, outcome.record);
            outcome.response = backend.query(VlmRequest{perturbed, text_prompt});
            outcome.verdict = judge.vpi(outcome.response.text);
            outcome.ok = true;
        } catch (const BackendError& e) {
            outcome.error = e.what();
            outcome.error_kind = std::string(to_string(e.kind()));
        } catch (const std::exception& e) {
            outcome.error = e.what();
            outcome.error_kind = "other";
        }
    };

    int workers = config.max_parallel;
    if (workers <= 0) {
        workers = static_cast<int>(std::thread::hardware_concurrency());
        if (workers < 1) workers = 1;
    }
    if (workers <= 1 || n == 1) {
        for (int j = 0; j < n; ++j) run_copy(j);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(std::min(workers, n)));
        for (int w = 0; w < std::min(workers, n); ++w) {
            pool.emplace_back([&] {
                for (int j = next.fetch_add(1); j < n; j = next.fetch_add(1)) {
                    run_copy(j);
                }
            });
        }
        for (std::thread& t : pool) t.join();
    }

    int attack_votes = 0;
    int ok_votes = 0;
    for (const CopyOutcome& outcome : result.per_copy) {
        if (!outcome.ok) continue;
        ++ok_votes;
        attack_votes += outcome.verdict.vpi;
    }

    if (ok_votes < n && config.on_backend_error == FailurePolicy::FailFast) {
        for (const CopyOutcome& outcome : result.per_copy) {
            if (!outcome.ok) {
                throw BackendError(BackendErrorKind::Network,
                                   "copy failed (" + outcome.error_kind + "): " +
                                       outcome.error);
            }
        }
    }
    if (ok_votes == 0) {
        throw BackendError(BackendErrorKind::Network, "all " + std::to_string(n) +
                                                          " copies failed");
    }

    result.effective_n = ok_votes;
    result.certificate_void = ok_votes < n;
    result.verdict_attack = majority_verdict(attack_votes, ok_votes, config.tie_rule);

    std::vector<int> agreeing;
    for (int j = 0; j < n; ++j) {
        const CopyOutcome& outcome = result.per_copy[static_cast<std::size_t>(j)];
        if (outcome.ok && outcome.verdict.vpi == result.verdict_attack) {
            agreeing.push_back(j);
        }
    }
    // the vote winner always has at least one agreeing copy
    std::mt19937_64 rng(mix64(config.perturb.seed, 0x73656C656374ull));  // "select"
    result.selected_index = agreeing[static_cast<std::size_t>(
        rng() % static_cast<std::uint64_t>(agreeing.size()))];
    result.response =
        result.per_copy[static_cast<std::size_t>(result.selected_index)].response.text;
    return result;
}

int defense_success(const SmoothedResult& result) { return 1 - result.verdict_attack; }

std::string to_json(const SmoothedResult& result) {
    json j;
    j["verdict_attack"] = result.verdict_attack;
    j["response"] = result.response;
    j["selected_index"] = result.selected_index;
    j["effective_n"] = result.effective_n;
    j["certificate_void"] = result.certificate_void;
    json copies = json::array();
    for (const CopyOutcome& outcome : result.per_copy) {
        json c;
        c["record"] = json::parse(to_json(outcome.record));
        c["ok"] = outcome.ok;
        if (outcome.ok) {
            c["response"] = {{"text", outcome.response.text},
                             {"backend_id", outcome.response.backend_id},
                             {"latency_ms", outcome.response.latency_ms},
                             {"retries_used", outcome.response.retries_used}};
            c["verdict"] = {{"vpi", outcome.verdict.vpi},
                            {"score", outcome.verdict.score},
                            {"judge_id", outcome.verdict.judge_id}};
        } else {
            c["error"] = outcome.error;
            c["error_kind"] = outcome.error_kind;
        }
        copies.push_back(std::move(c));
    }
    j["per_copy"] = std::move(copies);
    return j.dump();
}

}  // namespace patchsmooth
