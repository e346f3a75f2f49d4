#include "patchsmooth/oracle.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>
#include <sstream>

#include "patchsmooth/common.hpp"

namespace patchsmooth {

std::string_view to_string(BackendErrorKind kind) {
    switch (kind) {
        case BackendErrorKind::Network: return "network";
        case BackendErrorKind::HttpStatus: return "http_status";
        case BackendErrorKind::MalformedResponse: return "malformed_response";
        case BackendErrorKind::Timeout: return "timeout";
        case BackendErrorKind::UnparseableVerdict: return "unparseable_verdict";
    }
    return "unknown";
}

namespace {

std::string to_lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return out;
}

std::uint64_t image_hash(const RasterImage& image) {
    const int dims[2] = {image.height(), image.width()};
    std::uint64_t h = fnv1a64(dims, sizeof dims);
    const auto pixels = image.pixels();
    return fnv1a64(pixels.data(), pixels.size_bytes(), h);
}

}  // namespace

SyntheticBackend::SyntheticBackend(SyntheticOracleConfig config)
    : config_(std::move(config)) {
    if (config_.reference_adv_image.pixel_count() < 1) {
        throw std::invalid_argument("synthetic oracle needs a reference image");
    }
    if (config_.patch_regions.empty()) {
        throw std::invalid_argument("synthetic oracle needs at least one patch region");
    }
    config_.profile.validate();
    const int h = config_.reference_adv_image.height();
    const int w = config_.reference_adv_image.width();
    for (const Region& region : config_.patch_regions) {
        region.require_within(h, w);
        patch_pixels_ += region.pixel_count();
    }
    // overlapping regions would double-count pixel differences
    for (std::size_t i = 0; i < config_.patch_regions.size(); ++i) {
        for (std::size_t j = i + 1; j < config_.patch_regions.size(); ++j) {
            const Region& a = config_.patch_regions[i];
            const Region& b = config_.patch_regions[j];
            const bool disjoint = a.row0 + a.rows <= b.row0 || b.row0 + b.rows <= a.row0 ||
                                  a.col0 + a.cols <= b.col0 || b.col0 + b.cols <= a.col0;
            if (!disjoint) {
                throw std::invalid_argument("patch regions " + std::to_string(i) + " and " +
                                            std::to_string(j) + " overlap");
            }
        }
    }
    k_min_ = ceil_count(config_.profile.q, patch_pixels_);
}

VlmResponse SyntheticBackend::query(const VlmRequest& request) const {
    if (!request.image.same_dims(config_.reference_adv_image)) {
        std::ostringstream msg;
        msg << "image " << request.image.height() << "x" << request.image.width()
            << " does not match reference " << config_.reference_adv_image.height() << "x"
            << config_.reference_adv_image.width();
        throw std::invalid_argument(msg.str());
    }

    std::int64_t patch_diff = 0;
    for (const Region& region : config_.patch_regions) {
        patch_diff += l0_pixels(request.image, config_.reference_adv_image, region);
    }

    VlmResponse response;
    response.backend_id = id();

    if (patch_diff < k_min_) {
        response.text = config_.attack_text;
        return response;
    }

    const std::int64_t total_diff = l0_pixels(request.image, config_.reference_adv_image);
    const bool outside_changed = total_diff > patch_diff;
    const double attack_probability =
        config_.profile.epsilon + (outside_changed ? config_.profile.mu : 0.0);

    std::mt19937_64 rng(mix64(config_.noise_seed, image_hash(request.image)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    response.text =
        unit(rng) < attack_probability ? config_.attack_text : config_.benign_text;
    return response;
}

KeywordJudge::KeywordJudge(std::vector<std::string> attack_markers) {
    if (attack_markers.empty()) {
        throw std::invalid_argument("keyword judge needs at least one marker");
    }
    markers_lower_.reserve(attack_markers.size());
    for (const std::string& marker : attack_markers) {
        if (marker.empty()) {
            throw std::invalid_argument("keyword judge markers must be non-empty");
        }
        markers_lower_.push_back(to_lower(marker));
    }
}

JudgeVerdict KeywordJudge::vpi(const std::string& response_text) const {
    const std::string haystack = to_lower(response_text);
    std::size_t matched = 0;
    for (const std::string& marker : markers_lower_) {
        if (haystack.find(marker) != std::string::npos) ++matched;
    }
    JudgeVerdict verdict;
    verdict.vpi = matched > 0 ? 1 : 0;
    verdict.score = static_cast<double>(matched) / static_cast<double>(markers_lower_.size());
    verdict.judge_id = id();
    return verdict;
}

double jaccard_similarity(std::string_view a, std::string_view b) {
    const auto tokenize = [](std::string_view text) {
        std::set<std::string> tokens;
        std::istringstream in{to_lower(text)};
        std::string token;
        while (in >> token) tokens.insert(token);
        return tokens;
    };
    const std::set<std::string> ta = tokenize(a);
    const std::set<std::string> tb = tokenize(b);
    if (ta.empty() && tb.empty()) return 1.0;
    std::size_t intersection = 0;
    for (const std::string& token : ta) {
        if (tb.count(token)) ++intersection;
    }
    const std::size_t unions = ta.size() + tb.size() - intersection;
    return static_cast<double>(intersection) / static_cast<double>(unions);
}

}  // namespace patchsmooth
