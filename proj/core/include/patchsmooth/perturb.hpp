#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "patchsmooth/raster.hpp"

namespace patchsmooth {

enum class PerturbOp { Mask, Swap, Replace };

std::string_view to_string(PerturbOp op);
PerturbOp perturb_op_from_string(std::string_view name);

/// How many pixels a perturbation touches. FixedCount selects exactly
/// ceil(q * target_pixels) distinct pixels; Bernoulli includes each target
/// pixel independently with probability p.
struct RateModel {
    enum class Kind { FixedCount, Bernoulli };

    Kind kind = Kind::FixedCount;
    double value = 0.0;  // q for FixedCount, p for Bernoulli

    static RateModel fixed_count(double q);
    static RateModel bernoulli(double p);

    bool operator==(const RateModel&) const = default;
};

struct PerturbSpec {
    PerturbOp op = PerturbOp::Mask;
    RateModel rate = RateModel{RateModel::Kind::FixedCount, 0.1};
    std::uint64_t seed = 0;
    std::optional<Region> target;  // nullopt = whole image

    bool operator==(const PerturbSpec&) const = default;
};

struct PixelCoord {
    int row = 0;
    int col = 0;
    auto operator<=>(const PixelCoord&) const = default;
};

// The 6 permutations of (r,g,b). Applying table entry P to a pixel sends the
// value of channel i to channel P[i], so {1,2,0} maps (r,g,b) -> (b,r,g).
inline constexpr std::array<std::array<std::uint8_t, 3>, 6> kChannelPerms = {{
    {0, 1, 2},
    {0, 2, 1},
    {1, 0, 2},
    {1, 2, 0},
    {2, 0, 1},
    {2, 1, 0},
}};

Rgb apply_channel_perm(Rgb pixel, std::uint8_t perm_index);

/// Everything needed to replay a perturbation without the RNG: which pixels
/// were selected (sorted row-major, no duplicates) and the per-pixel action
/// payload. Serializes to JSON.
struct PerturbRecord {
    PerturbSpec spec;
    std::vector<PixelCoord> selected;
    std::vector<std::uint8_t> swap_perms;  // one index into kChannelPerms per pixel
    std::vector<Rgb> replace_colors;       // one color per pixel

    bool operator==(const PerturbRecord&) const = default;
};

struct ImageDims {
    int height = 0;
    int width = 0;
};

/// Samples the pixel selection and per-pixel payload for a spec.
/// Deterministic given (spec, dims); the spec's seed drives a private RNG.
PerturbRecord select_pixels(const PerturbSpec& spec, ImageDims dims);

RasterImage apply_mask(const RasterImage& image, const PerturbRecord& record);
RasterImage apply_swap(const RasterImage& image, const PerturbRecord& record);
RasterImage apply_replace(const RasterImage& image, const PerturbRecord& record);

/// Dispatches on record.spec.op.
RasterImage apply_record(const RasterImage& image, const PerturbRecord& record);

/// select_pixels followed by the operator's apply. Returns the perturbed
/// image and the replayable record.
std::pair<RasterImage, PerturbRecord> perturb(const RasterImage& image,
                                              const PerturbSpec& spec);

std::string to_json(const PerturbRecord& record);
PerturbRecord perturb_record_from_json(const std::string& text);

}  // namespace patchsmooth
