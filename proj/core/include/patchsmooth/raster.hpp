#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchsmooth {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    bool operator==(const Rgb&) const = default;
};

/// 8-bit RGB raster, row-major, top-left origin. Immutable by convention:
/// all operations below return new images.
class RasterImage {
  public:
    RasterImage() = default;  // empty placeholder; real images have h,w >= 1
    RasterImage(int height, int width, Rgb fill = Rgb{});
    RasterImage(int height, int width, std::vector<Rgb> pixels);

    int height() const { return height_; }
    int width() const { return width_; }
    std::int64_t pixel_count() const {
        return static_cast<std::int64_t>(height_) * width_;
    }

    const Rgb& at(int row, int col) const { return pixels_[index(row, col)]; }
    void set(int row, int col, Rgb value) { pixels_[index(row, col)] = value; }

    std::span<const Rgb> pixels() const { return pixels_; }

    bool same_dims(const RasterImage& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    bool operator==(const RasterImage&) const = default;

  private:
    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * width_ + col;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<Rgb> pixels_;
};

/// Rectangular pixel set inside an image, top-left origin.
struct Region {
    int row0 = 0;
    int col0 = 0;
    int rows = 0;
    int cols = 0;

    std::int64_t pixel_count() const {
        return static_cast<std::int64_t>(rows) * cols;
    }
    bool contains(int row, int col) const {
        return row >= row0 && row < row0 + rows && col >= col0 && col < col0 + cols;
    }
    // throws std::invalid_argument when empty or not inside an h x w image
    void require_within(int height, int width) const;

    bool operator==(const Region&) const = default;
};

/// A patch image plus its placement inside a host image. Anchors are
/// top-left, row-major — the same convention as RasterImage storage.
struct PatchSpec {
    RasterImage patch;
    int anchor_row = 0;
    int anchor_col = 0;

    Region region() const {
        return Region{anchor_row, anchor_col, patch.height(), patch.width()};
    }
    // throws std::invalid_argument with the offending coordinates
    void require_fits(int host_height, int host_width) const;

    /// Converts a placement given as "bottom-left corner at column i, row j
    /// counted from the image bottom" into the top-left convention used here:
    /// anchor_row = host_height - j - patch.height(), anchor_col = i.
    static PatchSpec from_bottom_left(int host_height, RasterImage patch, int i, int j);
};

/// Returns host with the patch pixels written over the patch region.
RasterImage overlay(const RasterImage& host, const PatchSpec& patch);

/// Sequential overlay; later patches win on overlap. Rejects an
/// out-of-bounds patch with its index in the message.
RasterImage overlay_multi(const RasterImage& host, std::span<const PatchSpec> patches);

/// Number of pixel positions whose (r,g,b) triples differ. A pixel counts
/// once no matter how many channels differ.
std::int64_t l0_pixels(const RasterImage& a, const RasterImage& b);
std::int64_t l0_pixels(const RasterImage& a, const RasterImage& b, const Region& region);

enum class PpmErrorKind {
    BadMagic,
    BadHeader,
    BadMaxval,
    Truncated,
    TrailingData,
};

class PpmError : public std::runtime_error {
  public:
    PpmError(PpmErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    PpmErrorKind kind() const { return kind_; }

  private:
    PpmErrorKind kind_;
};

/// Binary PPM (P6), maxval 255 only. write_ppm/read_ppm round-trip
/// bit-exactly on the pixel payload.
RasterImage read_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_ppm(const RasterImage& image);

RasterImage read_ppm_file(const std::string& path);
void write_ppm_file(const RasterImage& image, const std::string& path);

}  // namespace patchsmooth
