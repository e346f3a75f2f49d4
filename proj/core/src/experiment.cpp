#include "patchsmooth/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "patchsmooth/common.hpp"

namespace patchsmooth {

using nlohmann::json;

namespace {

// index-sharded worker loop; results land in preassigned slots, so parallel
// and serial runs agree
void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
    if (workers <= 0) {
        workers = static_cast<int>(std::thread::hardware_concurrency());
        if (workers < 1) workers = 1;
    }
    workers = std::min(workers, count);
    if (workers <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    }
    for (std::thread& t : pool) t.join();
}

std::string format_g12(double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", value);
    return buf;
}

std::vector<Region> patch_regions(const DatasetExample& example) {
    std::vector<Region> regions;
    regions.reserve(example.patches.size());
    for (const PatchSpec& patch : example.patches) regions.push_back(patch.region());
    return regions;
}

// Per-example backend: the synthetic oracle references the example's patched
// image; an HTTP backend is shared across examples.
struct BackendSet {
    std::vector<std::unique_ptr<VlmBackend>> per_example;
    std::shared_ptr<VlmBackend> shared;

    const VlmBackend& at(std::size_t i) const {
        return shared ? *shared : *per_example[i];
    }
};

BackendSet make_backends(const ExperimentConfig& config,
                         const std::vector<RasterImage>& adv_images) {
    BackendSet set;
    if (config.backend.kind == BackendSelection::Kind::Http) {
        set.shared = std::make_shared<HttpBackend>(config.backend.http);
        return set;
    }
    set.per_example.reserve(config.dataset.size());
    for (std::size_t i = 0; i < config.dataset.size(); ++i) {
        const DatasetExample& example = config.dataset[i];
        SyntheticOracleConfig oracle;
        oracle.reference_adv_image = adv_images[i];
        oracle.patch_regions = patch_regions(example);
        oracle.profile = config.backend.profile;
        oracle.benign_text = example.benign_text;
        oracle.attack_text = example.attack_text;
        oracle.noise_seed = mix64(config.backend.noise_seed, i);
        set.per_example.push_back(std::make_unique<SyntheticBackend>(std::move(oracle)));
    }
    return set;
}

void maybe_write(const std::string& output_dir, const std::string& filename,
                 const std::string& content) {
    if (output_dir.empty()) return;
    std::filesystem::create_directories(output_dir);
    write_text_file((std::filesystem::path(output_dir) / filename).string(), content);
}

}  // namespace

void ExperimentConfig::validate() const {
    if (dataset.empty()) throw std::invalid_argument("dataset must be non-empty");
    if (rates.empty()) throw std::invalid_argument("rates must be non-empty");
    if (n_values.empty()) throw std::invalid_argument("n_values must be non-empty");
    if (operators.empty()) throw std::invalid_argument("operators must be non-empty");
    for (double rate : rates) {
        if (!(rate >= 0.0 && rate <= 1.0)) {
            throw std::invalid_argument("rates must lie in [0,1], got " +
                                        std::to_string(rate));
        }
    }
    for (int n : n_values) {
        if (n < 1) throw std::invalid_argument("n_values must be >= 1");
    }
    if (!(similarity_threshold >= 0.0 && similarity_threshold <= 1.0)) {
        throw std::invalid_argument("similarity_threshold must lie in [0,1]");
    }
    if (trials < 1) throw std::invalid_argument("trials must be >= 1");
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const DatasetExample& example = dataset[i];
        if (example.attack_text.empty()) {
            throw std::invalid_argument("example " + std::to_string(i) +
                                        " has empty attack_text");
        }
        for (const PatchSpec& patch : example.patches) {
            patch.require_fits(example.benign.height(), example.benign.width());
        }
    }
    if (backend.kind == BackendSelection::Kind::Synthetic) {
        backend.profile.validate();
    } else {
        backend.http.validate();
    }
    if (judge.kind == JudgeSelection::Kind::Remote) {
        judge.http.validate();
    }
}

ExperimentConfig experiment_config_from_json(const std::string& text,
                                             const std::string& base_dir) {
    const json j = json::parse(text);
    ExperimentConfig config;
    const std::filesystem::path base(base_dir);

    config.seed = j.value("seed", std::uint64_t{0});
    config.trials = j.value("trials", config.trials);
    config.similarity_threshold = j.value("similarity_threshold", config.similarity_threshold);
    config.output_dir = j.value("output_dir", "");
    if (!config.output_dir.empty() &&
        std::filesystem::path(config.output_dir).is_relative()) {
        config.output_dir = (base / config.output_dir).string();
    }
    config.max_parallel = j.value("max_parallel", config.max_parallel);
    config.text_prompt = j.value("text_prompt", "");
    if (j.contains("tie_rule")) {
        config.tie_rule = tie_rule_from_string(j.at("tie_rule").get<std::string>());
    }
    if (j.contains("failure_policy")) {
        const std::string policy = j.at("failure_policy").get<std::string>();
        if (policy == "fail-fast") {
            config.failure_policy = FailurePolicy::FailFast;
        } else if (policy == "drop-copy") {
            config.failure_policy = FailurePolicy::DropCopy;
        } else {
            throw std::invalid_argument("unknown failure_policy: " + policy);
        }
    }

    const std::string rate_model = j.value("rate_model", "fixed_count");
    if (rate_model == "fixed_count") {
        config.rate_model = RateModel::Kind::FixedCount;
    } else if (rate_model == "bernoulli") {
        config.rate_model = RateModel::Kind::Bernoulli;
    } else {
        throw std::invalid_argument("unknown rate_model: " + rate_model);
    }
    config.rates = j.at("rates").get<std::vector<double>>();
    config.n_values = j.at("n_values").get<std::vector<int>>();
    for (const json& op : j.at("operators")) {
        config.operators.push_back(perturb_op_from_string(op.get<std::string>()));
    }

    if (j.contains("judge")) {
        const json& judge = j.at("judge");
        const std::string judge_type = judge.value("type", "keyword");
        if (judge_type == "keyword") {
            config.judge.kind = JudgeSelection::Kind::Keyword;
        } else if (judge_type == "remote") {
            config.judge.kind = JudgeSelection::Kind::Remote;
            config.judge.http = http_config_from_json(judge.dump());
        } else {
            throw std::invalid_argument("unknown judge type: " + judge_type);
        }
    }

    const json& backend = j.at("backend");
    const std::string backend_type = backend.at("type").get<std::string>();
    if (backend_type == "synthetic") {
        config.backend.kind = BackendSelection::Kind::Synthetic;
        if (backend.contains("profile")) {
            const json& profile = backend.at("profile");
            config.backend.profile.q = profile.value("q", config.backend.profile.q);
            config.backend.profile.epsilon =
                profile.value("epsilon", config.backend.profile.epsilon);
            config.backend.profile.mu = profile.value("mu", config.backend.profile.mu);
        }
        config.backend.noise_seed = backend.value("noise_seed", std::uint64_t{0});
    } else if (backend_type == "http") {
        config.backend.kind = BackendSelection::Kind::Http;
        config.backend.http = http_config_from_json(backend.dump());
    } else {
        throw std::invalid_argument("unknown backend type: " + backend_type);
    }

    for (const json& entry : j.at("dataset")) {
        DatasetExample example;
        example.id = entry.value("id", "ex" + std::to_string(config.dataset.size()));
        example.benign = read_ppm_file((base / entry.at("benign").get<std::string>()).string());
        for (const json& patch : entry.at("patches")) {
            PatchSpec spec;
            spec.patch =
                read_ppm_file((base / patch.at("image").get<std::string>()).string());
            spec.anchor_row = patch.at("anchor_row").get<int>();
            spec.anchor_col = patch.at("anchor_col").get<int>();
            example.patches.push_back(std::move(spec));
        }
        example.attack_text = entry.at("attack_text").get<std::string>();
        example.benign_text = entry.value("benign_text", "");
        config.dataset.push_back(std::move(example));
    }

    config.validate();
    return config;
}

ExperimentConfig experiment_config_from_json_file(const std::string& path) {
    return experiment_config_from_json(
        read_text_file(path), std::filesystem::path(path).parent_path().string());
}

double recompute_aggregate(const std::string& kind, const CellRecord& cell) {
    std::int64_t counted = 0;
    std::int64_t hits = 0;
    for (const ExampleOutcome& outcome : cell.examples) {
        if (!outcome.ok) continue;
        ++counted;
        if (kind == "distortion") {
            hits += outcome.distorted;
        } else {
            hits += outcome.defense_success == 0 ? 1 : 0;  // attack succeeded
        }
    }
    if (counted == 0) return 0.0;
    return static_cast<double>(hits) / static_cast<double>(counted);
}

namespace {

ExperimentRecord run_grid(const ExperimentConfig& config, const std::string& kind) {
    config.validate();
    if (kind == "scan") {
        for (std::size_t i = 0; i < config.dataset.size(); ++i) {
            if (config.dataset[i].patches.size() != 1) {
                throw std::invalid_argument(
                    "instability scan needs exactly one patch per example; example " +
                    std::to_string(i) + " has " +
                    std::to_string(config.dataset[i].patches.size()));
            }
        }
    }

    const std::size_t example_count = config.dataset.size();
    std::vector<RasterImage> adv_images;
    adv_images.reserve(example_count);
    for (const DatasetExample& example : config.dataset) {
        adv_images.push_back(overlay_multi(example.benign, example.patches));
    }
    const BackendSet backends = make_backends(config, adv_images);

    std::vector<std::unique_ptr<Judge>> judges;
    judges.reserve(example_count);
    for (const DatasetExample& example : config.dataset) {
        if (config.judge.kind == JudgeSelection::Kind::Remote) {
            judges.push_back(
                std::make_unique<RemoteJudge>(config.judge.http, example.attack_text));
        } else {
            judges.push_back(std::make_unique<KeywordJudge>(
                std::vector<std::string>{example.attack_text}));
        }
    }

    // reference responses for the distortion metric: the patch-free image,
    // queried once per example without perturbation
    std::vector<std::string> reference_text(example_count);
    if (kind == "distortion") {
        for (std::size_t i = 0; i < example_count; ++i) {
            reference_text[i] =
                backends.at(i)
                    .query(VlmRequest{config.dataset[i].benign, config.text_prompt})
                    .text;
        }
    }

    const std::vector<int> n_values =
        kind == "scan" ? std::vector<int>{1} : config.n_values;

    ExperimentRecord record;
    record.kind = kind;
    int cell_index = 0;
    for (PerturbOp op : config.operators) {
        for (double rate : config.rates) {
            for (int n : n_values) {
                CellRecord cell;
                cell.op = op;
                cell.rate = rate;
                cell.n_samples = n;
                cell.examples.resize(example_count);

                const int this_cell = cell_index++;
                parallel_for(
                    static_cast<int>(example_count), config.max_parallel,
                    [&](int i) {
                        const DatasetExample& example =
                            config.dataset[static_cast<std::size_t>(i)];
                        ExampleOutcome& outcome =
                            cell.examples[static_cast<std::size_t>(i)];
                        outcome.example_id = example.id;

                        SmoothingConfig smoothing;
                        smoothing.n_samples = n;
                        smoothing.perturb.op = op;
                        smoothing.perturb.rate = RateModel{config.rate_model, rate};
                        smoothing.perturb.seed =
                            mix64(config.seed, static_cast<std::uint64_t>(this_cell),
                                  static_cast<std::uint64_t>(i));
                        if (kind == "scan") {
                            smoothing.perturb.target = example.patches[0].region();
                        }
                        smoothing.tie_rule = config.tie_rule;
                        smoothing.on_backend_error = config.failure_policy;
                        smoothing.max_parallel = 1;  // parallelism lives at example level

                        const RasterImage& input =
                            kind == "distortion" ? example.benign
                                                 : adv_images[static_cast<std::size_t>(i)];
                        try {
                            const SmoothedResult smoothed = smooth_query(
                                input, config.text_prompt, smoothing,
                                backends.at(static_cast<std::size_t>(i)),
                                *judges[static_cast<std::size_t>(i)]);
                            outcome.ok = true;
                            outcome.verdict = smoothed.verdict_attack;
                            outcome.response = smoothed.response;
                            if (kind == "distortion") {
                                outcome.similarity = jaccard_similarity(
                                    reference_text[static_cast<std::size_t>(i)],
                                    smoothed.response);
                                outcome.distorted =
                                    outcome.similarity >= config.similarity_threshold ? 0
                                                                                      : 1;
                            } else {
                                outcome.defense_success = defense_success(smoothed);
                            }
                        } catch (const std::exception& e) {
                            outcome.error = e.what();
                        }
                    });

                for (const ExampleOutcome& outcome : cell.examples) {
                    if (!outcome.ok) cell.partial = true;
                }
                cell.aggregate = recompute_aggregate(kind, cell);
                record.cells.push_back(std::move(cell));
            }
        }
    }
    return record;
}

}  // namespace

ExperimentRecord run_asr(const ExperimentConfig& config) {
    ExperimentRecord record = run_grid(config, "asr");
    maybe_write(config.output_dir, "asr.csv", record_to_csv(record));
    return record;
}

ExperimentRecord run_distortion(const ExperimentConfig& config) {
    ExperimentRecord record = run_grid(config, "distortion");
    maybe_write(config.output_dir, "distortion.csv", record_to_csv(record));
    return record;
}

ExperimentRecord run_instability_scan(const ExperimentConfig& config) {
    ExperimentRecord record = run_grid(config, "scan");
    maybe_write(config.output_dir, "scan.csv", record_to_csv(record));
    return record;
}

std::string record_to_csv(const ExperimentRecord& record) {
    std::string out;
    const bool with_n = record.kind != "scan";
    if (record.kind == "asr") {
        out = "operator,q,N,asr\n";
    } else if (record.kind == "distortion") {
        out = "operator,q,N,distortion\n";
    } else if (record.kind == "scan") {
        out = "operator,q,asr\n";
    } else {
        throw std::invalid_argument("unknown record kind: " + record.kind);
    }
    for (const CellRecord& cell : record.cells) {
        out += std::string(to_string(cell.op)) + "," + format_g12(cell.rate) + ",";
        if (with_n) out += std::to_string(cell.n_samples) + ",";
        out += format_g12(cell.aggregate) + "\n";
    }
    return out;
}

std::vector<CsvCellRow> record_rows_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("empty CSV");
    }
    std::size_t columns = 1;
    for (char ch : line) {
        if (ch == ',') ++columns;
    }
    if (columns != 3 && columns != 4) {
        throw std::invalid_argument("unexpected CSV header: " + line);
    }
    std::vector<CsvCellRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string field;
        CsvCellRow row;
        std::getline(fields, field, ',');
        row.op = field;
        std::getline(fields, field, ',');
        row.rate = std::stod(field);
        if (columns == 4) {
            std::getline(fields, field, ',');
            row.n_samples = std::stoi(field);
        }
        std::getline(fields, field, ',');
        row.value = std::stod(field);
        rows.push_back(std::move(row));
    }
    return rows;
}

DatasetExample make_synthetic_example(int height, int width, int patch_rows,
                                      int patch_cols, int anchor_row, int anchor_col,
                                      std::uint64_t seed, std::string attack_text,
                                      std::string benign_text) {
    std::mt19937_64 rng(mix64(seed, 0xEC5A317Full));
    std::uniform_int_distribution<int> channel(0, 255);

    std::vector<Rgb> benign_pixels(static_cast<std::size_t>(height) * width);
    for (Rgb& px : benign_pixels) {
        px = Rgb{static_cast<std::uint8_t>(channel(rng)),
                 static_cast<std::uint8_t>(channel(rng)),
                 static_cast<std::uint8_t>(channel(rng))};
    }

    std::vector<Rgb> patch_pixels(static_cast<std::size_t>(patch_rows) * patch_cols);
    for (Rgb& px : patch_pixels) {
        do {
            px = Rgb{static_cast<std::uint8_t>(channel(rng)),
                     static_cast<std::uint8_t>(channel(rng)),
                     static_cast<std::uint8_t>(channel(rng))};
        } while (px == Rgb{0, 0, 0});  // masking must always change a patch pixel
    }

    DatasetExample example;
    example.id = "synthetic-" + std::to_string(seed);
    example.benign = RasterImage(height, width, std::move(benign_pixels));
    example.patches.push_back(PatchSpec{
        RasterImage(patch_rows, patch_cols, std::move(patch_pixels)), anchor_row,
        anchor_col});
    example.attack_text = std::move(attack_text);
    example.benign_text = std::move(benign_text);
    return example;
}

void McValidationConfig::validate() const {
    profile.validate();
    if (p_values.empty() || n_values.empty()) {
        throw std::invalid_argument("validation grids must be non-empty");
    }
    for (double p : p_values) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw std::invalid_argument("p must lie in [0,1], got " + std::to_string(p));
        }
    }
    for (int n : n_values) {
        if (n < 1) throw std::invalid_argument("n_values must be >= 1");
    }
    if (trials < 1) throw std::invalid_argument("trials must be >= 1");
    if (patch_rows < 1 || patch_cols < 1 || image_height < 1 || image_width < 1 ||
        anchor_row < 0 || anchor_col < 0 || anchor_row + patch_rows > image_height ||
        anchor_col + patch_cols > image_width) {
        throw std::invalid_argument("patch placement out of bounds");
    }
    if (max_cells < 0) throw std::invalid_argument("max_cells must be >= 0");
}

McReport run_mc_validation(const McValidationConfig& config) {
    config.validate();

    const DatasetExample example = make_synthetic_example(
        config.image_height, config.image_width, config.patch_rows, config.patch_cols,
        config.anchor_row, config.anchor_col, mix64(config.seed, 0xDA7A5E7ull));
    const RasterImage adv = overlay(example.benign, example.patches[0]);

    SyntheticOracleConfig oracle;
    oracle.reference_adv_image = adv;
    oracle.patch_regions = {example.patches[0].region()};
    oracle.profile = config.profile;
    oracle.benign_text = example.benign_text;
    oracle.attack_text = example.attack_text;
    oracle.noise_seed = mix64(config.seed, 0x0AC1Eull);
    const SyntheticBackend backend(std::move(oracle));
    const KeywordJudge judge(std::vector<std::string>{example.attack_text});

    const std::int64_t patch_pixels =
        static_cast<std::int64_t>(config.patch_rows) * config.patch_cols;
    const std::int64_t total_pixels =
        static_cast<std::int64_t>(config.image_height) * config.image_width;

    McReport report;
    report.trials = config.trials;
    report.pass = true;

    int cell_index = 0;
    for (double p : config.p_values) {
        for (int n : config.n_values) {
            if (config.max_cells > 0 && cell_index >= config.max_cells) break;
            const int this_cell = cell_index++;

            CertQuery query;
            query.patch_pixels = patch_pixels;
            query.p = p;
            query.n_samples = n;
            query.profile = config.profile;
            query.tie_rule = config.tie_rule;
            const double bound =
                config.rate_model == RateModel::Kind::Bernoulli
                    ? certify(query, TailMode::Bernoulli).dsp_lower
                    : certify(query, TailMode::FixedCount, total_pixels).dsp_lower;

            std::vector<std::uint8_t> success(static_cast<std::size_t>(config.trials));
            parallel_for(config.trials, config.max_parallel, [&](int t) {
                SmoothingConfig smoothing;
                smoothing.n_samples = n;
                smoothing.perturb.op = config.op;
                smoothing.perturb.rate = RateModel{config.rate_model, p};
                smoothing.perturb.seed =
                    mix64(config.seed, static_cast<std::uint64_t>(this_cell),
                          static_cast<std::uint64_t>(t));
                smoothing.tie_rule = config.tie_rule;
                smoothing.max_parallel = 1;
                const SmoothedResult result =
                    smooth_query(adv, "", smoothing, backend, judge);
                success[static_cast<std::size_t>(t)] =
                    static_cast<std::uint8_t>(defense_success(result));
            });

            std::int64_t hits = 0;
            for (std::uint8_t s : success) hits += s;
            McCellResult cell;
            cell.p = p;
            cell.n_samples = n;
            cell.bound = bound;
            cell.empirical = static_cast<double>(hits) / config.trials;
            cell.margin =
                3.0 * std::sqrt(cell.empirical * (1.0 - cell.empirical) / config.trials);
            cell.pass = cell.empirical >= cell.bound - cell.margin;
            if (!cell.pass) report.pass = false;
            report.cells.push_back(cell);
        }
        if (config.max_cells > 0 && cell_index >= config.max_cells) break;
    }

    maybe_write(config.output_dir, "mc_report.json", to_json(report));
    return report;
}

McValidationConfig mc_validation_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    McValidationConfig config;
    config.image_height = j.value("image_height", config.image_height);
    config.image_width = j.value("image_width", config.image_width);
    config.patch_rows = j.value("patch_rows", config.patch_rows);
    config.patch_cols = j.value("patch_cols", config.patch_cols);
    config.anchor_row = j.value("anchor_row", config.anchor_row);
    config.anchor_col = j.value("anchor_col", config.anchor_col);
    if (j.contains("profile")) {
        const json& profile = j.at("profile");
        config.profile.q = profile.value("q", config.profile.q);
        config.profile.epsilon = profile.value("epsilon", config.profile.epsilon);
        config.profile.mu = profile.value("mu", config.profile.mu);
    }
    config.p_values = j.value("p_values", config.p_values);
    config.n_values = j.value("n_values", config.n_values);
    config.trials = j.value("trials", config.trials);
    config.seed = j.value("seed", config.seed);
    if (j.contains("operator")) {
        config.op = perturb_op_from_string(j.at("operator").get<std::string>());
    }
    if (j.contains("rate_model")) {
        const std::string kind = j.at("rate_model").get<std::string>();
        if (kind == "fixed_count") {
            config.rate_model = RateModel::Kind::FixedCount;
        } else if (kind == "bernoulli") {
            config.rate_model = RateModel::Kind::Bernoulli;
        } else {
            throw std::invalid_argument("unknown rate_model: " + kind);
        }
    }
    if (j.contains("tie_rule")) {
        config.tie_rule = tie_rule_from_string(j.at("tie_rule").get<std::string>());
    }
    config.max_parallel = j.value("max_parallel", config.max_parallel);
    config.max_cells = j.value("max_cells", config.max_cells);
    config.validate();
    return config;
}

McValidationConfig mc_validation_config_from_json_file(const std::string& path) {
    return mc_validation_config_from_json(read_text_file(path));
}

std::string to_json(const McReport& report) {
    json j;
    j["pass"] = report.pass;
    j["trials"] = report.trials;
    json cells = json::array();
    for (const McCellResult& cell : report.cells) {
        cells.push_back({{"p", cell.p},
                         {"n", cell.n_samples},
                         {"bound", cell.bound},
                         {"empirical", cell.empirical},
                         {"margin", cell.margin},
                         {"pass", cell.pass}});
    }
    j["cells"] = std::move(cells);
    return j.dump(2);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw std::runtime_error("short write to " + path);
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

}  // namespace patchsmooth
