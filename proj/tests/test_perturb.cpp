#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "patchsmooth/common.hpp"
#include "patchsmooth/perturb.hpp"
#include "support/test_util.hpp"

using namespace patchsmooth;

namespace {

PerturbSpec mask_spec(RateModel rate, std::uint64_t seed,
                      std::optional<Region> target = std::nullopt) {
    PerturbSpec spec;
    spec.op = PerturbOp::Mask;
    spec.rate = rate;
    spec.seed = seed;
    spec.target = target;
    return spec;
}

}  // namespace

TEST_SUITE_BEGIN("perturb");

TEST_CASE("fixed-count selection is exactly ceil(q*T)") {
    CHECK(select_pixels(mask_spec(RateModel::fixed_count(0.5), 1), {2, 2})
              .selected.size() == 2);
    // 224x224 whole image at q=0.05: ceil(0.05 * 50176) = 2509
    CHECK(select_pixels(mask_spec(RateModel::fixed_count(0.05), 1), {224, 224})
              .selected.size() == 2509);
}

TEST_CASE("fixed-count cardinality holds for random (q, T) pairs") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> q_dist(0.0, 1.0);
    std::uniform_int_distribution<int> dim(1, 70);
    for (int trial = 0; trial < 200; ++trial) {
        const int h = dim(rng);
        const int w = dim(rng);
        const double q = q_dist(rng);
        const auto record =
            select_pixels(mask_spec(RateModel::fixed_count(q), rng()), {h, w});
        const std::int64_t expected = ceil_count(q, static_cast<std::int64_t>(h) * w);
        CHECK(static_cast<std::int64_t>(record.selected.size()) == expected);
        // no duplicates (selected is sorted)
        CHECK(std::adjacent_find(record.selected.begin(), record.selected.end()) ==
              record.selected.end());
    }
}

TEST_CASE("bernoulli degenerate probabilities") {
    CHECK(select_pixels(mask_spec(RateModel::bernoulli(0.0), 3), {10, 10})
              .selected.empty());
    CHECK(select_pixels(mask_spec(RateModel::bernoulli(1.0), 3), {10, 10})
              .selected.size() == 100);
}

TEST_CASE("bernoulli selection count has the right mean") {
    const int trials = 10000;
    double total = 0.0;
    for (int t = 0; t < trials; ++t) {
        total += static_cast<double>(
            select_pixels(mask_spec(RateModel::bernoulli(0.3), mix64(900, t)), {10, 10})
                .selected.size());
    }
    const double mean = total / trials;
    const double standard_error = std::sqrt(100 * 0.3 * 0.7 / trials);
    CHECK(std::fabs(mean - 30.0) <= 3.0 * standard_error);
}

TEST_CASE("mask post-state: selected pixels black, complement untouched") {
    std::mt19937_64 rng(22);
    const RasterImage image = testutil::random_image(rng, 12, 9);
    const auto record = select_pixels(mask_spec(RateModel::fixed_count(0.2), 7),
                                      {image.height(), image.width()});
    const RasterImage out = apply_mask(image, record);
    std::set<std::pair<int, int>> selected;
    for (const PixelCoord& px : record.selected) selected.insert({px.row, px.col});
    for (int r = 0; r < image.height(); ++r) {
        for (int c = 0; c < image.width(); ++c) {
            if (selected.count({r, c})) {
                CHECK(out.at(r, c) == Rgb{0, 0, 0});
            } else {
                CHECK(out.at(r, c) == image.at(r, c));
            }
        }
    }
}

TEST_CASE("masking an already-black pixel is a fixed point") {
    RasterImage image(3, 3, Rgb{0, 0, 0});
    PerturbRecord record;
    record.spec = mask_spec(RateModel::fixed_count(0.2), 0);
    record.selected = {{1, 1}};
    CHECK(apply_mask(image, record) == image);
}

TEST_CASE("empty record is identity for all operators") {
    std::mt19937_64 rng(23);
    const RasterImage image = testutil::random_image(rng, 5, 5);
    for (PerturbOp op : {PerturbOp::Mask, PerturbOp::Swap, PerturbOp::Replace}) {
        PerturbRecord record;
        record.spec.op = op;
        CHECK(apply_record(image, record) == image);
    }
}

TEST_CASE("swap applies the recorded channel permutation") {
    // the {1,2,0} table entry cycles the value of r into g, g into b, b into r
    const auto it = std::find(kChannelPerms.begin(), kChannelPerms.end(),
                              std::array<std::uint8_t, 3>{1, 2, 0});
    REQUIRE(it != kChannelPerms.end());
    const auto index = static_cast<std::uint8_t>(it - kChannelPerms.begin());
    CHECK(apply_channel_perm(Rgb{10, 20, 30}, index) == Rgb{30, 10, 20});

    RasterImage image(1, 1, Rgb{10, 20, 30});
    PerturbRecord record;
    record.spec.op = PerturbOp::Swap;
    record.selected = {{0, 0}};
    record.swap_perms = {index};
    CHECK(apply_swap(image, record).at(0, 0) == Rgb{30, 10, 20});
}

TEST_CASE("the permutation table produces all 6 arrangements") {
    std::set<std::array<std::uint8_t, 3>> seen;
    for (std::uint8_t i = 0; i < 6; ++i) {
        const Rgb out = apply_channel_perm(Rgb{1, 2, 3}, i);
        seen.insert({out.r, out.g, out.b});
    }
    CHECK(seen.size() == 6);
}

TEST_CASE("gray pixels are unchanged by any swap") {
    for (std::uint8_t i = 0; i < 6; ++i) {
        CHECK(apply_channel_perm(Rgb{77, 77, 77}, i) == Rgb{77, 77, 77});
    }
}

TEST_CASE("swap preserves the per-pixel channel multiset") {
    std::mt19937_64 rng(24);
    for (int trial = 0; trial < 100; ++trial) {
        const RasterImage image = testutil::random_image(rng, 6, 8);
        PerturbSpec spec = mask_spec(RateModel::fixed_count(0.5), rng());
        spec.op = PerturbOp::Swap;
        const auto [out, record] = perturb(image, spec);
        for (int r = 0; r < image.height(); ++r) {
            for (int c = 0; c < image.width(); ++c) {
                std::array<std::uint8_t, 3> before{image.at(r, c).r, image.at(r, c).g,
                                                   image.at(r, c).b};
                std::array<std::uint8_t, 3> after{out.at(r, c).r, out.at(r, c).g,
                                                  out.at(r, c).b};
                std::sort(before.begin(), before.end());
                std::sort(after.begin(), after.end());
                CHECK(before == after);
            }
        }
    }
}

TEST_CASE("replace applies recorded colors; l0 bounded by selection size") {
    std::mt19937_64 rng(25);
    const RasterImage image = testutil::random_image(rng, 7, 7);
    PerturbSpec spec = mask_spec(RateModel::fixed_count(3.0 / 49.0), 5);
    spec.op = PerturbOp::Replace;
    const auto [out, record] = perturb(image, spec);
    REQUIRE(record.selected.size() == 3);
    CHECK(l0_pixels(image, out) <= 3);
    for (std::size_t i = 0; i < record.selected.size(); ++i) {
        const PixelCoord& px = record.selected[i];
        CHECK(out.at(px.row, px.col) == record.replace_colors[i]);
    }
}

TEST_CASE("replacement equal to the original contributes 0 to l0") {
    const RasterImage image(2, 2, Rgb{9, 9, 9});
    PerturbRecord record;
    record.spec.op = PerturbOp::Replace;
    record.selected = {{0, 0}};
    record.replace_colors = {Rgb{9, 9, 9}};
    CHECK(l0_pixels(image, apply_replace(image, record)) == 0);
}

TEST_CASE("perturb is deterministic in (image, spec, seed)") {
    std::mt19937_64 rng(26);
    const RasterImage image = testutil::random_image(rng, 10, 10);
    for (PerturbOp op : {PerturbOp::Mask, PerturbOp::Swap, PerturbOp::Replace}) {
        PerturbSpec spec = mask_spec(RateModel::bernoulli(0.4), 99);
        spec.op = op;
        const auto [out1, rec1] = perturb(image, spec);
        const auto [out2, rec2] = perturb(image, spec);
        CHECK(out1 == out2);
        CHECK(rec1 == rec2);
    }
}

TEST_CASE("mask with q=1 blacks out the whole image") {
    std::mt19937_64 rng(27);
    const RasterImage image = testutil::random_image(rng, 4, 6);
    const auto [out, record] = perturb(image, mask_spec(RateModel::fixed_count(1.0), 1));
    CHECK(out == RasterImage(4, 6, Rgb{0, 0, 0}));
    CHECK(record.selected.size() == 24);
}

TEST_CASE("region targets leave the outside untouched") {
    std::mt19937_64 rng(28);
    const RasterImage image = testutil::random_image(rng, 10, 10);
    const Region target{2, 3, 4, 4};
    for (PerturbOp op : {PerturbOp::Mask, PerturbOp::Swap, PerturbOp::Replace}) {
        PerturbSpec spec = mask_spec(RateModel::fixed_count(0.9), rng(), target);
        spec.op = op;
        const auto [out, record] = perturb(image, spec);
        // the fixed count is taken over the region, not the whole image
        CHECK(record.selected.size() == 15);  // ceil(0.9 * 16)
        for (int r = 0; r < 10; ++r) {
            for (int c = 0; c < 10; ++c) {
                if (!target.contains(r, c)) CHECK(out.at(r, c) == image.at(r, c));
            }
        }
        for (const PixelCoord& px : record.selected) {
            CHECK(target.contains(px.row, px.col));
        }
    }
}

TEST_CASE("out-of-bounds records and targets are rejected") {
    const RasterImage image(4, 4, Rgb{1, 2, 3});
    PerturbRecord record;
    record.spec.op = PerturbOp::Mask;
    record.selected = {{4, 0}};
    CHECK_THROWS_AS(apply_mask(image, record), std::invalid_argument);
    CHECK_THROWS_AS(
        select_pixels(mask_spec(RateModel::fixed_count(0.5), 0, Region{2, 2, 3, 3}),
                      {4, 4}),
        std::invalid_argument);
    CHECK_THROWS_AS(RateModel::fixed_count(1.5), std::invalid_argument);
    CHECK_THROWS_AS(RateModel::bernoulli(-0.1), std::invalid_argument);
}

TEST_CASE("records replay bit-exactly through JSON, independent of the seed") {
    std::mt19937_64 rng(29);
    for (PerturbOp op : {PerturbOp::Mask, PerturbOp::Swap, PerturbOp::Replace}) {
        const RasterImage image = testutil::random_image(rng, 8, 8);
        PerturbSpec spec;
        spec.op = op;
        spec.rate = RateModel::bernoulli(0.35);
        spec.seed = rng();
        spec.target = Region{1, 1, 6, 6};
        const auto [out, record] = perturb(image, spec);

        PerturbRecord parsed = perturb_record_from_json(to_json(record));
        CHECK(parsed == record);

        parsed.spec.seed ^= 0xDEADBEEFull;  // replay must not consult the seed
        CHECK(apply_record(image, parsed) == out);
    }
}

TEST_SUITE_END();
