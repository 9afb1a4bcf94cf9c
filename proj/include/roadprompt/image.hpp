#pragma once

#include "roadprompt/grid.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace roadprompt {

/// 8-bit RGB raster, row-major, interleaved channels.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

    std::uint8_t& at(int row, int col, int ch) {
        return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
    }
    std::uint8_t at(int row, int col, int ch) const {
        return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
    }
    bool operator==(const Image&) const = default;
};

/// Raised for unreadable, undecodable or inconsistent raster files.
class RasterError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Decoded PNG with its original channel count (1 = gray, 3 = RGB).
struct Raster {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;
};

Raster decode_png(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_png(const Raster& raster);

Raster read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Raster& raster);

/// Any PNG as RGB; gray inputs are replicated, alpha is dropped.
Image image_from_raster(const Raster& raster);
Raster raster_from_image(const Image& image);

/// Single-channel 0/255 encoding of a mask.
Raster raster_from_mask(const BinaryMask& mask);
/// Thresholds at 128 for 8-bit masks; a {0,1}-valued raster is taken as is.
BinaryMask mask_from_raster(const Raster& raster);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

} // namespace roadprompt
