#include "patchsmooth/perturb.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "patchsmooth/common.hpp"

namespace patchsmooth {

using nlohmann::json;

std::string_view to_string(PerturbOp op) {
    switch (op) {
        case PerturbOp::Mask: return "mask";
        case PerturbOp::Swap: return "swap";
        case PerturbOp::Replace: return "replace";
    }
    throw std::logic_error("unknown PerturbOp");
}

PerturbOp perturb_op_from_string(std::string_view name) {
    if (name == "mask") return PerturbOp::Mask;
    if (name == "swap") return PerturbOp::Swap;
    if (name == "replace") return PerturbOp::Replace;
    throw std::invalid_argument("unknown perturbation operator: " + std::string(name));
}

RateModel RateModel::fixed_count(double q) {
    if (!(q >= 0.0 && q <= 1.0)) {
        throw std::invalid_argument("q must lie in [0,1], got " + std::to_string(q));
    }
    return RateModel{Kind::FixedCount, q};
}

RateModel RateModel::bernoulli(double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument("p must lie in [0,1], got " + std::to_string(p));
    }
    return RateModel{Kind::Bernoulli, p};
}

Rgb apply_channel_perm(Rgb pixel, std::uint8_t perm_index) {
    if (perm_index >= kChannelPerms.size()) {
        throw std::invalid_argument("channel permutation index out of range: " +
                                    std::to_string(perm_index));
    }
    const auto& perm = kChannelPerms[perm_index];
    const std::array<std::uint8_t, 3> in = {pixel.r, pixel.g, pixel.b};
    std::array<std::uint8_t, 3> out{};
    for (int i = 0; i < 3; ++i) out[perm[i]] = in[i];
    return Rgb{out[0], out[1], out[2]};
}

namespace {

Region effective_target(const PerturbSpec& spec, ImageDims dims) {
    if (dims.height < 1 || dims.width < 1) {
        throw std::invalid_argument("image dimensions must be >= 1");
    }
    Region target = spec.target.value_or(Region{0, 0, dims.height, dims.width});
    target.require_within(dims.height, dims.width);
    return target;
}

void validate_rate(const RateModel& rate) {
    if (!(rate.value >= 0.0 && rate.value <= 1.0)) {
        throw std::invalid_argument("perturbation rate must lie in [0,1], got " +
                                    std::to_string(rate.value));
    }
}

void require_in_bounds(const RasterImage& image, const PerturbRecord& record) {
    for (const PixelCoord& px : record.selected) {
        if (px.row < 0 || px.row >= image.height() || px.col < 0 ||
            px.col >= image.width()) {
            throw std::invalid_argument("record pixel (" + std::to_string(px.row) + "," +
                                        std::to_string(px.col) + ") outside image " +
                                        std::to_string(image.height()) + "x" +
                                        std::to_string(image.width()));
        }
    }
}

}  // namespace

PerturbRecord select_pixels(const PerturbSpec& spec, ImageDims dims) {
    validate_rate(spec.rate);
    const Region target = effective_target(spec, dims);
    const std::int64_t total = target.pixel_count();

    std::mt19937_64 rng(spec.seed);
    std::vector<std::int64_t> chosen;  // flat indices into the target region

    if (spec.rate.kind == RateModel::Kind::FixedCount) {
        const std::int64_t k = ceil_count(spec.rate.value, total);
        std::vector<std::int64_t> indices(static_cast<std::size_t>(total));
        for (std::int64_t i = 0; i < total; ++i) indices[static_cast<std::size_t>(i)] = i;
        // partial Fisher-Yates: the first k entries become the sample
        for (std::int64_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::int64_t> pick(i, total - 1);
            std::swap(indices[static_cast<std::size_t>(i)],
                      indices[static_cast<std::size_t>(pick(rng))]);
        }
        chosen.assign(indices.begin(), indices.begin() + k);
    } else {
        const double p = spec.rate.value;
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (std::int64_t i = 0; i < total; ++i) {
            if (unit(rng) < p) chosen.push_back(i);
        }
    }

    std::sort(chosen.begin(), chosen.end());

    PerturbRecord record;
    record.spec = spec;
    record.selected.reserve(chosen.size());
    for (std::int64_t flat : chosen) {
        record.selected.push_back(PixelCoord{
            target.row0 + static_cast<int>(flat / target.cols),
            target.col0 + static_cast<int>(flat % target.cols)});
    }

    if (spec.op == PerturbOp::Swap) {
        std::uniform_int_distribution<int> perm(0, 5);
        record.swap_perms.reserve(record.selected.size());
        for (std::size_t i = 0; i < record.selected.size(); ++i) {
            record.swap_perms.push_back(static_cast<std::uint8_t>(perm(rng)));
        }
    } else if (spec.op == PerturbOp::Replace) {
        std::uniform_int_distribution<int> channel(0, 255);
        record.replace_colors.reserve(record.selected.size());
        for (std::size_t i = 0; i < record.selected.size(); ++i) {
            const auto r = static_cast<std::uint8_t>(channel(rng));
            const auto g = static_cast<std::uint8_t>(channel(rng));
            const auto b = static_cast<std::uint8_t>(channel(rng));
            record.replace_colors.push_back(Rgb{r, g, b});
        }
    }
    return record;
}

RasterImage apply_mask(const RasterImage& image, const PerturbRecord& record) {
    require_in_bounds(image, record);
    RasterImage out = image;
    for (const PixelCoord& px : record.selected) {
        out.set(px.row, px.col, Rgb{0, 0, 0});
    }
    return out;
}

RasterImage apply_swap(const RasterImage& image, const PerturbRecord& record) {
    require_in_bounds(image, record);
    if (record.swap_perms.size() != record.selected.size()) {
        throw std::invalid_argument("record carries " +
                                    std::to_string(record.swap_perms.size()) +
                                    " permutations for " +
                                    std::to_string(record.selected.size()) + " pixels");
    }
    RasterImage out = image;
    for (std::size_t i = 0; i < record.selected.size(); ++i) {
        const PixelCoord& px = record.selected[i];
        out.set(px.row, px.col, apply_channel_perm(image.at(px.row, px.col),
                                                   record.swap_perms[i]));
    }
    return out;
}

RasterImage apply_replace(const RasterImage& image, const PerturbRecord& record) {
    require_in_bounds(image, record);
    if (record.replace_colors.size() != record.selected.size()) {
        throw std::invalid_argument("record carries " +
                                    std::to_string(record.replace_colors.size()) +
                                    " colors for " +
                                    std::to_string(record.selected.size()) + " pixels");
    }
    RasterImage out = image;
    for (std::size_t i = 0; i < record.selected.size(); ++i) {
        const PixelCoord& px = record.selected[i];
        out.set(px.row, px.col, record.replace_colors[i]);
    }
    return out;
}

RasterImage apply_record(const RasterImage& image, const PerturbRecord& record) {
    switch (record.spec.op) {
        case PerturbOp::Mask: return apply_mask(image, record);
        case PerturbOp::Swap: return apply_swap(image, record);
        case PerturbOp::Replace: return apply_replace(image, record);
    }
    throw std::logic_error("unknown PerturbOp");
}

std::pair<RasterImage, PerturbRecord> perturb(const RasterImage& image,
                                              const PerturbSpec& spec) {
    PerturbRecord record = select_pixels(spec, ImageDims{image.height(), image.width()});
    RasterImage out = apply_record(image, record);
    return {std::move(out), std::move(record)};
}

namespace {

json region_to_json(const Region& region) {
    return json{{"row0", region.row0},
                {"col0", region.col0},
                {"rows", region.rows},
                {"cols", region.cols}};
}

Region region_from_json(const json& j) {
    return Region{j.at("row0").get<int>(), j.at("col0").get<int>(),
                  j.at("rows").get<int>(), j.at("cols").get<int>()};
}

}  // namespace

std::string to_json(const PerturbRecord& record) {
    json j;
    j["operator"] = std::string(to_string(record.spec.op));
    j["rate_model"] = {
        {"kind",
         record.spec.rate.kind == RateModel::Kind::FixedCount ? "fixed_count" : "bernoulli"},
        {"value", record.spec.rate.value}};
    j["seed"] = record.spec.seed;
    j["target"] = record.spec.target ? region_to_json(*record.spec.target) : json(nullptr);
    json selected = json::array();
    for (const PixelCoord& px : record.selected) {
        selected.push_back(json::array({px.row, px.col}));
    }
    j["selected"] = std::move(selected);
    if (record.spec.op == PerturbOp::Swap) {
        j["payload"] = record.swap_perms;
    } else if (record.spec.op == PerturbOp::Replace) {
        json colors = json::array();
        for (const Rgb& c : record.replace_colors) {
            colors.push_back(json::array({c.r, c.g, c.b}));
        }
        j["payload"] = std::move(colors);
    } else {
        j["payload"] = json(nullptr);
    }
    return j.dump();
}

PerturbRecord perturb_record_from_json(const std::string& text) {
    const json j = json::parse(text);
    PerturbRecord record;
    record.spec.op = perturb_op_from_string(j.at("operator").get<std::string>());
    const json& rm = j.at("rate_model");
    const std::string kind = rm.at("kind").get<std::string>();
    if (kind == "fixed_count") {
        record.spec.rate = RateModel::fixed_count(rm.at("value").get<double>());
    } else if (kind == "bernoulli") {
        record.spec.rate = RateModel::bernoulli(rm.at("value").get<double>());
    } else {
        throw std::invalid_argument("unknown rate model kind: " + kind);
    }
    record.spec.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("target").is_null()) {
        record.spec.target = region_from_json(j.at("target"));
    }
    for (const json& px : j.at("selected")) {
        record.selected.push_back(PixelCoord{px.at(0).get<int>(), px.at(1).get<int>()});
    }
    if (record.spec.op == PerturbOp::Swap) {
        record.swap_perms = j.at("payload").get<std::vector<std::uint8_t>>();
    } else if (record.spec.op == PerturbOp::Replace) {
        for (const json& c : j.at("payload")) {
            record.replace_colors.push_back(Rgb{c.at(0).get<std::uint8_t>(),
                                                c.at(1).get<std::uint8_t>(),
                                                c.at(2).get<std::uint8_t>()});
        }
    }
    return record;
}

}  // namespace patchsmooth
