#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "patchsmooth/certify.hpp"
#include "patchsmooth/http_backend.hpp"
#include "patchsmooth/oracle.hpp"
#include "patchsmooth/pipeline.hpp"

namespace patchsmooth {

struct DatasetExample {
    std::string id;
    RasterImage benign;
    std::vector<PatchSpec> patches;
    std::string attack_text;
    std::string benign_text;
};

struct BackendSelection {
    enum class Kind { Synthetic, Http };
    Kind kind = Kind::Synthetic;
    // synthetic: the per-example reference is the example's patched image
    InstabilityProfile profile{0.15, 0.05, 0.02};
    std::uint64_t noise_seed = 0;
    // http
    HttpBackendConfig http;
};

struct JudgeSelection {
    enum class Kind { Keyword, Remote };
    Kind kind = Kind::Keyword;
    // keyword: the example's attack_text is the marker; remote: the model at
    // `http` compares responses against the example's attack_text
    HttpBackendConfig http;
};

struct ExperimentConfig {
    std::vector<DatasetExample> dataset;
    std::vector<double> rates;  // q (fixed_count) or p (bernoulli) values
    RateModel::Kind rate_model = RateModel::Kind::FixedCount;
    std::vector<int> n_values;
    std::vector<PerturbOp> operators;
    BackendSelection backend;
    JudgeSelection judge;
    double similarity_threshold = 0.5;
    int trials = 1000;
    std::uint64_t seed = 0;
    std::string output_dir;  // empty = emit nothing to disk
    int max_parallel = 1;    // <=0 uses hardware concurrency
    TieRule tie_rule = TieRule::CeilHalf;
    FailurePolicy failure_policy = FailurePolicy::FailFast;
    std::string text_prompt;

    void validate() const;
};

/// Loads a config document; image paths are resolved against base_dir and
/// loaded eagerly, so unresolvable paths fail here.
ExperimentConfig experiment_config_from_json(const std::string& text,
                                             const std::string& base_dir);
ExperimentConfig experiment_config_from_json_file(const std::string& path);

struct ExampleOutcome {
    std::string example_id;
    bool ok = false;
    int defense_success = -1;  // asr / scan
    int verdict = -1;          // judged attack indicator A
    double similarity = -1.0;  // distortion
    int distorted = -1;        // distortion
    std::string response;
    std::string error;
};

struct CellRecord {
    PerturbOp op = PerturbOp::Mask;
    double rate = 0.0;
    int n_samples = 1;
    std::vector<ExampleOutcome> examples;
    double aggregate = 0.0;  // asr or distortion rate
    bool partial = false;    // some examples errored
};

struct ExperimentRecord {
    std::string kind;  // "asr" | "distortion" | "scan"
    std::vector<CellRecord> cells;
};

/// Recomputes a cell's aggregate from its per-example outcomes (audit path;
/// must equal CellRecord::aggregate).
double recompute_aggregate(const std::string& kind, const CellRecord& cell);

/// Attack success rate per grid cell (operator, rate, N) over patched
/// images. Writes <output_dir>/asr.csv when an output dir is set.
ExperimentRecord run_asr(const ExperimentConfig& config);

/// Fraction of examples whose smoothed response to the patch-free image is
/// no longer judged equivalent to the unperturbed response.
/// Writes <output_dir>/distortion.csv.
ExperimentRecord run_distortion(const ExperimentConfig& config);

/// Single-copy (N=1) attack success per (operator, rate), perturbing only
/// the known patch region. Requires exactly one patch per example.
/// Writes <output_dir>/scan.csv.
ExperimentRecord run_instability_scan(const ExperimentConfig& config);

/// CSV for a record: asr "operator,q,N,asr"; distortion
/// "operator,q,N,distortion"; scan "operator,q,asr". 12 significant digits.
std::string record_to_csv(const ExperimentRecord& record);

/// Parses rows back as (operator, rate, n, value); n is absent for scan CSV.
struct CsvCellRow {
    std::string op;
    double rate = 0.0;
    std::optional<int> n_samples;
    double value = 0.0;
};
std::vector<CsvCellRow> record_rows_from_csv(const std::string& csv);

/// Deterministic synthetic adversarial example: random benign image plus a
/// random patch with no pure-black pixel, so masking any patch pixel is
/// guaranteed to change it.
DatasetExample make_synthetic_example(int height, int width, int patch_rows,
                                      int patch_cols, int anchor_row, int anchor_col,
                                      std::uint64_t seed,
                                      std::string attack_text = "INJECTED PAYLOAD",
                                      std::string benign_text = "a scenic landscape photo");

/// Monte-Carlo check of the certified lower bound against the synthetic
/// oracle, one synthetic example, grid of (p, N) cells.
struct McValidationConfig {
    int image_height = 32;
    int image_width = 32;
    int patch_rows = 8;
    int patch_cols = 8;
    int anchor_row = 12;
    int anchor_col = 12;
    InstabilityProfile profile{0.15, 0.05, 0.02};
    std::vector<double> p_values{0.1, 0.2, 0.3};
    std::vector<int> n_values{1, 3, 5, 9};
    int trials = 20000;
    std::uint64_t seed = 7;
    PerturbOp op = PerturbOp::Mask;
    RateModel::Kind rate_model = RateModel::Kind::Bernoulli;
    TieRule tie_rule = TieRule::StrictMajority;
    int max_parallel = 0;  // <=0 uses hardware concurrency
    int max_cells = 0;     // 0 = all
    std::string output_dir;

    void validate() const;
};

struct McCellResult {
    double p = 0.0;
    int n_samples = 1;
    double bound = 0.0;
    double empirical = 0.0;
    double margin = 0.0;  // 3 * sqrt(b(1-b)/trials)
    bool pass = false;
};

struct McReport {
    std::vector<McCellResult> cells;
    int trials = 0;
    bool pass = false;
};

/// PASS iff empirical >= bound - margin in every cell. Writes
/// <output_dir>/mc_report.json when an output dir is set.
McReport run_mc_validation(const McValidationConfig& config);

/// Loads a validation config; absent fields keep their defaults.
McValidationConfig mc_validation_config_from_json(const std::string& text);
McValidationConfig mc_validation_config_from_json_file(const std::string& path);

std::string to_json(const McReport& report);

// small shared file/CSV helpers
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace patchsmooth
