#include "patchsmooth/raster.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "patchsmooth/common.hpp"

namespace patchsmooth {

std::int64_t ceil_count(double fraction, std::int64_t total) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("fraction must lie in [0,1], got " +
                                    std::to_string(fraction));
    }
    if (total < 0) {
        throw std::invalid_argument("total must be nonnegative");
    }
    const long double product = static_cast<long double>(fraction) * total;
    auto k = static_cast<std::int64_t>(std::ceil(product - 1e-9L));
    if (k < 0) k = 0;
    if (k > total) k = total;
    return k;
}

RasterImage::RasterImage(int height, int width, Rgb fill)
    : height_(height), width_(width) {
    if (height < 1 || width < 1) {
        throw std::invalid_argument("image dimensions must be >= 1, got " +
                                    std::to_string(height) + "x" + std::to_string(width));
    }
    pixels_.assign(static_cast<std::size_t>(height) * width, fill);
}

RasterImage::RasterImage(int height, int width, std::vector<Rgb> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
    if (height < 1 || width < 1) {
        throw std::invalid_argument("image dimensions must be >= 1, got " +
                                    std::to_string(height) + "x" + std::to_string(width));
    }
    if (pixels_.size() != static_cast<std::size_t>(height) * width) {
        throw std::invalid_argument("pixel buffer size " + std::to_string(pixels_.size()) +
                                    " does not match " + std::to_string(height) + "x" +
                                    std::to_string(width));
    }
}

void Region::require_within(int height, int width) const {
    if (rows < 1 || cols < 1) {
        throw std::invalid_argument("region must be non-empty, got " +
                                    std::to_string(rows) + "x" + std::to_string(cols));
    }
    if (row0 < 0 || col0 < 0 || row0 + rows > height || col0 + cols > width) {
        std::ostringstream msg;
        msg << "region [" << row0 << "," << col0 << " " << rows << "x" << cols
            << "] exceeds image " << height << "x" << width;
        throw std::invalid_argument(msg.str());
    }
}

void PatchSpec::require_fits(int host_height, int host_width) const {
    if (patch.height() < 1 || patch.width() < 1) {
        throw std::invalid_argument("patch must be non-empty");
    }
    if (anchor_row < 0 || anchor_col < 0 ||
        anchor_row + patch.height() > host_height ||
        anchor_col + patch.width() > host_width) {
        std::ostringstream msg;
        msg << "patch " << patch.height() << "x" << patch.width() << " at (row="
            << anchor_row << ",col=" << anchor_col << ") exceeds host "
            << host_height << "x" << host_width;
        throw std::invalid_argument(msg.str());
    }
}

PatchSpec PatchSpec::from_bottom_left(int host_height, RasterImage patch, int i, int j) {
    const int anchor_row = host_height - j - patch.height();
    return PatchSpec{std::move(patch), anchor_row, i};
}

RasterImage overlay(const RasterImage& host, const PatchSpec& patch) {
    patch.require_fits(host.height(), host.width());
    RasterImage out = host;
    for (int r = 0; r < patch.patch.height(); ++r) {
        for (int c = 0; c < patch.patch.width(); ++c) {
            out.set(patch.anchor_row + r, patch.anchor_col + c, patch.patch.at(r, c));
        }
    }
    return out;
}

RasterImage overlay_multi(const RasterImage& host, std::span<const PatchSpec> patches) {
    RasterImage out = host;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        try {
            out = overlay(out, patches[i]);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("patch " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

std::int64_t l0_pixels(const RasterImage& a, const RasterImage& b) {
    return l0_pixels(a, b, Region{0, 0, a.height(), a.width()});
}

std::int64_t l0_pixels(const RasterImage& a, const RasterImage& b, const Region& region) {
    if (!a.same_dims(b)) {
        std::ostringstream msg;
        msg << "dimension mismatch: " << a.height() << "x" << a.width() << " vs "
            << b.height() << "x" << b.width();
        throw std::invalid_argument(msg.str());
    }
    region.require_within(a.height(), a.width());
    std::int64_t count = 0;
    for (int r = region.row0; r < region.row0 + region.rows; ++r) {
        for (int c = region.col0; c < region.col0 + region.cols; ++c) {
            if (a.at(r, c) != b.at(r, c)) ++count;
        }
    }
    return count;
}

namespace {

// Reads one whitespace-delimited header token starting at pos; leaves pos one
// past the token.
std::string next_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string token;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) {
        token.push_back(static_cast<char>(bytes[pos]));
        ++pos;
    }
    return token;
}

int parse_header_int(const std::string& token, const char* field) {
    if (token.empty()) {
        throw PpmError(PpmErrorKind::BadHeader, std::string("missing ") + field);
    }
    for (char ch : token) {
        if (!std::isdigit(static_cast<unsigned char>(ch))) {
            throw PpmError(PpmErrorKind::BadHeader,
                           std::string("non-numeric ") + field + ": " + token);
        }
    }
    long value = 0;
    try {
        value = std::stol(token);
    } catch (const std::exception&) {
        throw PpmError(PpmErrorKind::BadHeader, std::string("unparseable ") + field);
    }
    if (value < 1 || value > 1 << 20) {
        throw PpmError(PpmErrorKind::BadHeader,
                       std::string(field) + " out of range: " + token);
    }
    return static_cast<int>(value);
}

}  // namespace

RasterImage read_ppm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    const std::string magic = next_token(bytes, pos);
    if (magic != "P6") {
        throw PpmError(PpmErrorKind::BadMagic, "expected magic P6, got \"" + magic + "\"");
    }
    const int width = parse_header_int(next_token(bytes, pos), "width");
    const int height = parse_header_int(next_token(bytes, pos), "height");
    const std::string maxval = next_token(bytes, pos);
    if (maxval.empty()) {
        throw PpmError(PpmErrorKind::BadHeader, "missing maxval");
    }
    if (maxval != "255") {
        throw PpmError(PpmErrorKind::BadMaxval, "maxval must be 255, got " + maxval);
    }
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw PpmError(PpmErrorKind::BadHeader, "missing whitespace after maxval");
    }
    ++pos;  // exactly one whitespace byte separates header and payload

    const std::size_t payload = static_cast<std::size_t>(width) * height * 3;
    if (bytes.size() - pos < payload) {
        throw PpmError(PpmErrorKind::Truncated,
                       "payload has " + std::to_string(bytes.size() - pos) +
                           " bytes, expected " + std::to_string(payload));
    }
    if (bytes.size() - pos > payload) {
        throw PpmError(PpmErrorKind::TrailingData,
                       std::to_string(bytes.size() - pos - payload) +
                           " bytes after pixel payload");
    }
    std::vector<Rgb> pixels(static_cast<std::size_t>(width) * height);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        pixels[i] = Rgb{bytes[pos + 3 * i], bytes[pos + 3 * i + 1], bytes[pos + 3 * i + 2]};
    }
    return RasterImage(height, width, std::move(pixels));
}

std::vector<std::uint8_t> write_ppm(const RasterImage& image) {
    if (image.height() < 1 || image.width() < 1) {
        throw std::invalid_argument("cannot serialize an empty image");
    }
    const std::string header = "P6\n" + std::to_string(image.width()) + " " +
                               std::to_string(image.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + image.pixel_count() * 3);
    for (const Rgb& px : image.pixels()) {
        out.push_back(px.r);
        out.push_back(px.g);
        out.push_back(px.b);
    }
    return out;
}

RasterImage read_ppm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return read_ppm(bytes);
}

void write_ppm_file(const RasterImage& image, const std::string& path) {
    const auto bytes = write_ppm(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("short write to " + path);
    }
}

}  // namespace patchsmooth
