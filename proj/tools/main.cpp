// patchsmooth: randomized-smoothing defense toolkit for patched visual
// prompt injection. Subcommands cover patch overlay, seeded perturbation,
// certified defense-success bounds, heatmap grids, experiment runs and
// Monte-Carlo validation of the bound.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "patchsmooth/certify.hpp"
#include "patchsmooth/experiment.hpp"
#include "patchsmooth/http_backend.hpp"
#include "patchsmooth/oracle.hpp"
#include "patchsmooth/pipeline.hpp"

namespace ps = patchsmooth;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidationFailure = 1;
constexpr int kExitConfigError = 2;

struct PatchArg {
    std::string file;
    int row = 0;
    int col = 0;
};

PatchArg parse_patch_arg(const std::string& text) {
    PatchArg arg;
    const std::size_t first = text.rfind(',');
    if (first == std::string::npos) {
        throw CLI::ValidationError("--patch expects FILE,ROW,COL, got " + text);
    }
    const std::size_t second = text.rfind(',', first - 1);
    if (second == std::string::npos) {
        throw CLI::ValidationError("--patch expects FILE,ROW,COL, got " + text);
    }
    arg.file = text.substr(0, second);
    arg.row = std::stoi(text.substr(second + 1, first - second - 1));
    arg.col = std::stoi(text.substr(first + 1));
    return arg;
}

ps::Region parse_region_arg(const std::string& text) {
    ps::Region region;
    if (std::sscanf(text.c_str(), "%d,%d,%d,%d", &region.row0, &region.col0,
                    &region.rows, &region.cols) != 4) {
        throw CLI::ValidationError("--region expects ROW0,COL0,ROWS,COLS, got " + text);
    }
    return region;
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        if (!text.empty() && text.back() != '\n') std::cout << "\n";
    } else {
        ps::write_text_file(out_path, text);
    }
}

ps::SyntheticOracleConfig synthetic_config_from_json_file(const std::string& path) {
    const json j = json::parse(ps::read_text_file(path));
    const auto base = std::filesystem::path(path).parent_path();

    ps::SyntheticOracleConfig config;
    config.reference_adv_image =
        ps::read_ppm_file((base / j.at("reference_image").get<std::string>()).string());
    for (const json& region : j.at("patch_regions")) {
        config.patch_regions.push_back(ps::Region{
            region.at("row0").get<int>(), region.at("col0").get<int>(),
            region.at("rows").get<int>(), region.at("cols").get<int>()});
    }
    const json& profile = j.at("profile");
    config.profile.q = profile.at("q").get<double>();
    config.profile.epsilon = profile.at("epsilon").get<double>();
    config.profile.mu = profile.at("mu").get<double>();
    config.benign_text = j.value("benign_text", config.benign_text);
    config.attack_text = j.value("attack_text", config.attack_text);
    config.noise_seed = j.value("noise_seed", std::uint64_t{0});
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"randomized-smoothing defense toolkit for patched visual prompt injection"};
    app.require_subcommand(1);
    app.fallthrough();

    // ------------------------------------------------------------------ overlay
    auto* overlay_cmd = app.add_subcommand("overlay", "overlay patches onto a host image");
    std::string overlay_host;
    std::vector<std::string> overlay_patches;
    std::string overlay_out;
    bool overlay_bottom_left = false;
    overlay_cmd->add_option("--host", overlay_host, "host PPM image")->required();
    overlay_cmd->add_option("--patch", overlay_patches,
                            "patch as FILE,ROW,COL (repeatable; later patches win)")
        ->required();
    overlay_cmd->add_option("--out", overlay_out, "output PPM path")->required();
    overlay_cmd->add_flag("--bottom-left", overlay_bottom_left,
                          "anchors are COLUMN,ROW-FROM-BOTTOM instead of top-left ROW,COL");

    // ------------------------------------------------------------------ perturb
    auto* perturb_cmd = app.add_subcommand("perturb", "apply one seeded perturbation");
    std::string perturb_in, perturb_out, perturb_record_path, perturb_op = "mask";
    std::string perturb_region;
    double perturb_q = -1.0, perturb_p = -1.0;
    std::uint64_t perturb_seed = 0;
    perturb_cmd->add_option("--in", perturb_in, "input PPM image")->required();
    perturb_cmd->add_option("--op", perturb_op, "mask | swap | replace");
    perturb_cmd->add_option("--q", perturb_q, "fixed-count fraction in [0,1]");
    perturb_cmd->add_option("--p", perturb_p, "per-pixel Bernoulli probability in [0,1]");
    perturb_cmd->add_option("--seed", perturb_seed, "64-bit seed");
    perturb_cmd->add_option("--region", perturb_region, "target ROW0,COL0,ROWS,COLS");
    perturb_cmd->add_option("--out", perturb_out, "output PPM path")->required();
    perturb_cmd->add_option("--record", perturb_record_path, "write the replay record JSON");

    // ------------------------------------------------------------------ certify
    auto* certify_cmd = app.add_subcommand("certify", "certified defense-success bound");
    std::int64_t certify_mn = 0, certify_total = 0;
    double certify_q = 0.0, certify_p = 0.0, certify_eps = 0.0, certify_mu = 0.0;
    int certify_n = 1;
    std::string certify_tie = "strict-majority", certify_mode = "bernoulli";
    std::string certify_out;
    certify_cmd->add_option("--mn", certify_mn, "patch pixel count m*n")->required();
    certify_cmd->add_option("--q", certify_q, "instability fraction")->required();
    certify_cmd->add_option("--p", certify_p, "perturbation probability")->required();
    certify_cmd->add_option("--epsilon", certify_eps, "residual attack probability");
    certify_cmd->add_option("--mu", certify_mu, "off-patch degradation");
    certify_cmd->add_option("--n", certify_n, "number of smoothing samples N")->required();
    certify_cmd->add_option("--tie", certify_tie, "strict-majority | ceil-half");
    certify_cmd->add_option("--mode", certify_mode, "bernoulli | fixed-count");
    certify_cmd->add_option("--total", certify_total,
                            "total image pixels (fixed-count mode)");
    certify_cmd->add_option("--out", certify_out, "output path (default stdout)");

    // ------------------------------------------------------------------ min-n
    auto* minn_cmd = app.add_subcommand("min-n", "smallest odd N reaching a target DSP");
    double minn_alpha = 0.0, minn_target = 0.0;
    std::string minn_out;
    minn_cmd->add_option("--alpha", minn_alpha, "per-copy defense probability")->required();
    minn_cmd->add_option("--target", minn_target, "target DSP in (0,1)")->required();
    minn_cmd->add_option("--out", minn_out, "output path (default stdout)");

    // ------------------------------------------------------------------ heatmap
    auto* heatmap_cmd = app.add_subcommand("heatmap", "DSP grid over (N, p) as CSV");
    std::int64_t heatmap_k = 0, heatmap_mn = 100;
    std::vector<int> heatmap_n;
    std::vector<double> heatmap_p;
    double heatmap_eps = 0.05, heatmap_mu = 0.02;
    std::string heatmap_tie = "strict-majority", heatmap_out;
    heatmap_cmd->add_option("--k", heatmap_k, "absolute instability threshold k_min")
        ->required();
    heatmap_cmd->add_option("--n", heatmap_n, "N values (comma separated)")
        ->required()
        ->delimiter(',');
    heatmap_cmd->add_option("--p", heatmap_p, "p values (comma separated)")
        ->required()
        ->delimiter(',');
    heatmap_cmd->add_option("--mn", heatmap_mn, "patch pixel count (default 100)");
    heatmap_cmd->add_option("--epsilon", heatmap_eps, "residual attack probability");
    heatmap_cmd->add_option("--mu", heatmap_mu, "off-patch degradation");
    heatmap_cmd->add_option("--tie", heatmap_tie, "strict-majority | ceil-half");
    heatmap_cmd->add_option("--out", heatmap_out, "output path (default stdout)");

    // -------------------------------------------------------- experiment runs
    std::string run_config, run_out, run_backend;
    std::uint64_t run_seed = 0;
    bool run_seed_given = false;
    auto add_run_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", run_config, "experiment config JSON")->required();
        cmd->add_option("--out", run_out, "output directory override");
        cmd->add_option("--seed", run_seed, "seed override")
            ->each([&](const std::string&) { run_seed_given = true; });
        cmd->add_option("--backend", run_backend,
                        "backend override: synthetic | http (http reads "
                        "PATCHSMOOTH_ENDPOINT / PATCHSMOOTH_MODEL / "
                        "PATCHSMOOTH_API_TOKEN)");
    };
    auto* run_asr_cmd = app.add_subcommand("run-asr", "attack success rate per grid cell");
    add_run_options(run_asr_cmd);
    auto* run_dist_cmd =
        app.add_subcommand("run-distortion", "benign response distortion per grid cell");
    add_run_options(run_dist_cmd);
    auto* scan_cmd =
        app.add_subcommand("scan", "single-copy instability scan over the patch region");
    add_run_options(scan_cmd);

    // ------------------------------------------------------------------ validate
    auto* validate_cmd =
        app.add_subcommand("validate", "Monte-Carlo check of the certified bound");
    ps::McValidationConfig mc;
    int validate_cells = 0;
    std::string validate_out, validate_config;
    validate_cmd->add_option("--config", validate_config,
                             "validation config JSON (flags override it)");
    validate_cmd->add_option("--trials", mc.trials, "trials per cell");
    validate_cmd->add_option("--cells", validate_cells, "limit number of cells");
    validate_cmd->add_option("--p", mc.p_values, "p values")->delimiter(',');
    validate_cmd->add_option("--n", mc.n_values, "N values")->delimiter(',');
    validate_cmd->add_option("--q", mc.profile.q, "instability fraction");
    validate_cmd->add_option("--epsilon", mc.profile.epsilon, "residual attack probability");
    validate_cmd->add_option("--mu", mc.profile.mu, "off-patch degradation");
    validate_cmd->add_option("--image-rows", mc.image_height, "image height");
    validate_cmd->add_option("--image-cols", mc.image_width, "image width");
    validate_cmd->add_option("--patch-rows", mc.patch_rows, "patch height");
    validate_cmd->add_option("--patch-cols", mc.patch_cols, "patch width");
    validate_cmd->add_option("--anchor-row", mc.anchor_row, "patch anchor row");
    validate_cmd->add_option("--anchor-col", mc.anchor_col, "patch anchor col");
    validate_cmd->add_option("--seed", mc.seed, "base seed");
    std::string validate_rate_model = "bernoulli";
    validate_cmd->add_option("--rate-model", validate_rate_model,
                             "bernoulli | fixed-count");
    validate_cmd->add_option("--jobs", mc.max_parallel, "worker threads (0 = auto)");
    validate_cmd->add_option("--out", validate_out, "output directory for the report");

    // ------------------------------------------------------------------ smooth
    auto* smooth_cmd = app.add_subcommand("smooth", "one smoothed query");
    std::string smooth_image, smooth_prompt, smooth_backend = "synthetic";
    std::string smooth_config, smooth_out, smooth_op = "mask", smooth_tie = "ceil-half";
    std::vector<std::string> smooth_markers;
    double smooth_q = -1.0, smooth_p = -1.0;
    int smooth_n = 5;
    std::uint64_t smooth_seed = 0;
    int smooth_jobs = 1;
    smooth_cmd->add_option("--image", smooth_image, "input PPM image")->required();
    smooth_cmd->add_option("--prompt", smooth_prompt, "text prompt (default empty)");
    smooth_cmd->add_option("--n", smooth_n, "number of perturbed copies");
    smooth_cmd->add_option("--op", smooth_op, "mask | swap | replace");
    smooth_cmd->add_option("--q", smooth_q, "fixed-count fraction");
    smooth_cmd->add_option("--p", smooth_p, "Bernoulli probability");
    smooth_cmd->add_option("--seed", smooth_seed, "base seed");
    smooth_cmd->add_option("--tie", smooth_tie, "strict-majority | ceil-half");
    smooth_cmd->add_option("--backend", smooth_backend, "synthetic | http");
    smooth_cmd->add_option("--config", smooth_config,
                           "backend config JSON (synthetic oracle or http endpoint)");
    smooth_cmd->add_option("--markers", smooth_markers,
                           "attack markers for the keyword judge")
        ->delimiter(',');
    smooth_cmd->add_option("--jobs", smooth_jobs, "concurrent copies (0 = auto)");
    smooth_cmd->add_option("--out", smooth_out, "output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);  // --help
        }
        app.exit(e);
        return kExitConfigError;
    }

    try {
        if (overlay_cmd->parsed()) {
            const ps::RasterImage host = ps::read_ppm_file(overlay_host);
            std::vector<ps::PatchSpec> patches;
            for (const std::string& text : overlay_patches) {
                const PatchArg arg = parse_patch_arg(text);
                ps::RasterImage patch = ps::read_ppm_file(arg.file);
                if (overlay_bottom_left) {
                    patches.push_back(ps::PatchSpec::from_bottom_left(
                        host.height(), std::move(patch), arg.row, arg.col));
                } else {
                    patches.push_back(ps::PatchSpec{std::move(patch), arg.row, arg.col});
                }
            }
            ps::write_ppm_file(ps::overlay_multi(host, patches), overlay_out);
            return kExitOk;
        }

        if (perturb_cmd->parsed()) {
            const ps::RasterImage image = ps::read_ppm_file(perturb_in);
            ps::PerturbSpec spec;
            spec.op = ps::perturb_op_from_string(perturb_op);
            if ((perturb_q >= 0.0) == (perturb_p >= 0.0)) {
                throw std::invalid_argument("give exactly one of --q or --p");
            }
            spec.rate = perturb_q >= 0.0 ? ps::RateModel::fixed_count(perturb_q)
                                         : ps::RateModel::bernoulli(perturb_p);
            spec.seed = perturb_seed;
            if (!perturb_region.empty()) {
                spec.target = parse_region_arg(perturb_region);
            }
            const auto [out, record] = ps::perturb(image, spec);
            ps::write_ppm_file(out, perturb_out);
            if (!perturb_record_path.empty()) {
                ps::write_text_file(perturb_record_path, ps::to_json(record));
            }
            return kExitOk;
        }

        if (certify_cmd->parsed()) {
            ps::CertQuery query;
            query.patch_pixels = certify_mn;
            query.p = certify_p;
            query.n_samples = certify_n;
            query.profile = ps::InstabilityProfile{certify_q, certify_eps, certify_mu};
            query.tie_rule = ps::tie_rule_from_string(certify_tie);
            ps::CertResult result;
            if (certify_mode == "bernoulli") {
                result = ps::certify(query, ps::TailMode::Bernoulli);
            } else if (certify_mode == "fixed-count" || certify_mode == "fixed_count") {
                result = ps::certify(query, ps::TailMode::FixedCount, certify_total);
            } else {
                throw std::invalid_argument("unknown mode: " + certify_mode);
            }
            emit(ps::to_json(result), certify_out);
            return kExitOk;
        }

        if (minn_cmd->parsed()) {
            const std::optional<int> n = ps::minimal_n(minn_target, minn_alpha);
            json j;
            j["alpha"] = minn_alpha;
            j["target"] = minn_target;
            j["n"] = n ? json(*n) : json(nullptr);
            emit(j.dump(), minn_out);
            return kExitOk;
        }

        if (heatmap_cmd->parsed()) {
            const ps::HeatmapGrid grid = ps::heatmap_grid(
                heatmap_k, heatmap_mn, heatmap_n, heatmap_p,
                ps::InstabilityProfile{0.0, heatmap_eps, heatmap_mu},
                ps::tie_rule_from_string(heatmap_tie));
            emit(ps::heatmap_to_csv(grid), heatmap_out);
            return kExitOk;
        }

        if (run_asr_cmd->parsed() || run_dist_cmd->parsed() || scan_cmd->parsed()) {
            ps::ExperimentConfig config = ps::experiment_config_from_json_file(run_config);
            if (!run_out.empty()) config.output_dir = run_out;
            if (run_seed_given) config.seed = run_seed;
            if (run_backend == "synthetic") {
                config.backend.kind = ps::BackendSelection::Kind::Synthetic;
            } else if (run_backend == "http") {
                config.backend.kind = ps::BackendSelection::Kind::Http;
                ps::apply_env_overrides(config.backend.http);
                config.backend.http.validate();
            } else if (!run_backend.empty()) {
                throw std::invalid_argument("unknown backend: " + run_backend);
            }
            ps::ExperimentRecord record;
            if (run_asr_cmd->parsed()) {
                record = ps::run_asr(config);
            } else if (run_dist_cmd->parsed()) {
                record = ps::run_distortion(config);
            } else {
                record = ps::run_instability_scan(config);
            }
            std::cout << ps::record_to_csv(record);
            for (const ps::CellRecord& cell : record.cells) {
                if (cell.partial) {
                    std::cerr << "warning: cell op=" << ps::to_string(cell.op)
                              << " rate=" << cell.rate << " N=" << cell.n_samples
                              << " is partial (some examples errored)\n";
                }
            }
            return kExitOk;
        }

        if (validate_cmd->parsed()) {
            if (!validate_config.empty()) {
                // the file is the base; explicitly passed flags override it
                ps::McValidationConfig base =
                    ps::mc_validation_config_from_json_file(validate_config);
                const auto given = [&](const std::string& name) {
                    return validate_cmd->count(name) > 0;
                };
                if (given("--trials")) base.trials = mc.trials;
                if (given("--p")) base.p_values = mc.p_values;
                if (given("--n")) base.n_values = mc.n_values;
                if (given("--q")) base.profile.q = mc.profile.q;
                if (given("--epsilon")) base.profile.epsilon = mc.profile.epsilon;
                if (given("--mu")) base.profile.mu = mc.profile.mu;
                if (given("--image-rows")) base.image_height = mc.image_height;
                if (given("--image-cols")) base.image_width = mc.image_width;
                if (given("--patch-rows")) base.patch_rows = mc.patch_rows;
                if (given("--patch-cols")) base.patch_cols = mc.patch_cols;
                if (given("--anchor-row")) base.anchor_row = mc.anchor_row;
                if (given("--anchor-col")) base.anchor_col = mc.anchor_col;
                if (given("--seed")) base.seed = mc.seed;
                if (given("--jobs")) base.max_parallel = mc.max_parallel;
                mc = base;
            }
            mc.max_cells = validate_cells;
            mc.output_dir = validate_out;
            if (validate_cmd->count("--rate-model") > 0) {
                if (validate_rate_model == "bernoulli") {
                    mc.rate_model = ps::RateModel::Kind::Bernoulli;
                } else if (validate_rate_model == "fixed-count" ||
                           validate_rate_model == "fixed_count") {
                    mc.rate_model = ps::RateModel::Kind::FixedCount;
                } else {
                    throw std::invalid_argument("unknown rate model: " +
                                                validate_rate_model);
                }
            }
            const ps::McReport report = ps::run_mc_validation(mc);
            std::cout << ps::to_json(report) << "\n";
            return report.pass ? kExitOk : kExitValidationFailure;
        }

        if (smooth_cmd->parsed()) {
            const ps::RasterImage image = ps::read_ppm_file(smooth_image);
            ps::SmoothingConfig config;
            config.n_samples = smooth_n;
            config.perturb.op = ps::perturb_op_from_string(smooth_op);
            if ((smooth_q >= 0.0) == (smooth_p >= 0.0)) {
                throw std::invalid_argument("give exactly one of --q or --p");
            }
            config.perturb.rate = smooth_q >= 0.0 ? ps::RateModel::fixed_count(smooth_q)
                                                  : ps::RateModel::bernoulli(smooth_p);
            config.perturb.seed = smooth_seed;
            config.tie_rule = ps::tie_rule_from_string(smooth_tie);
            config.max_parallel = smooth_jobs;

            std::unique_ptr<ps::VlmBackend> backend;
            std::unique_ptr<ps::Judge> judge;
            if (smooth_backend == "synthetic") {
                if (smooth_config.empty()) {
                    throw std::invalid_argument(
                        "synthetic backend needs --config with the oracle setup");
                }
                auto oracle = synthetic_config_from_json_file(smooth_config);
                std::vector<std::string> markers =
                    smooth_markers.empty() ? std::vector<std::string>{oracle.attack_text}
                                           : smooth_markers;
                backend = std::make_unique<ps::SyntheticBackend>(std::move(oracle));
                judge = std::make_unique<ps::KeywordJudge>(std::move(markers));
            } else if (smooth_backend == "http") {
                ps::HttpBackendConfig http;
                if (!smooth_config.empty()) {
                    http = ps::http_config_from_json_file(smooth_config);
                } else {
                    ps::apply_env_overrides(http);
                    http.validate();
                }
                if (smooth_markers.empty()) {
                    throw std::invalid_argument(
                        "http backend needs --markers for the keyword judge");
                }
                backend = std::make_unique<ps::HttpBackend>(std::move(http));
                judge = std::make_unique<ps::KeywordJudge>(smooth_markers);
            } else {
                throw std::invalid_argument("unknown backend: " + smooth_backend);
            }

            const ps::SmoothedResult result =
                ps::smooth_query(image, smooth_prompt, config, *backend, *judge);
            emit(ps::to_json(result), smooth_out);
            return kExitOk;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfigError;
    }

    std::cerr << "error: no subcommand\n";
    return kExitConfigError;
}
