#include "roadprompt/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

namespace roadprompt {

Raster decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw RasterError(std::string("undecodable PNG: ") + img.message);
    }
    const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Raster out;
    out.height = static_cast<int>(img.height);
    out.width = static_cast<int>(img.width);
    out.channels = gray ? 1 : 3;
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw RasterError(std::string("undecodable PNG: ") + img.message);
    }
    return out;
}

std::vector<std::uint8_t> encode_png(const Raster& raster) {
    if (raster.channels != 1 && raster.channels != 3) {
        throw RasterError("PNG encoding supports 1 or 3 channels");
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(raster.width);
    img.height = static_cast<png_uint_32>(raster.height);
    img.format = raster.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(img, size, 0, raster.pixels.data(), 0, nullptr)) {
        throw RasterError(std::string("PNG encoding failed: ") + img.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, raster.pixels.data(), 0, nullptr)) {
        throw RasterError(std::string("PNG encoding failed: ") + img.message);
    }
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RasterError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RasterError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Raster read_png(const std::filesystem::path& path) {
    try {
        return decode_png(read_file(path));
    } catch (const RasterError& e) {
        throw RasterError(path.string() + ": " + e.what());
    }
}

void write_png(const std::filesystem::path& path, const Raster& raster) {
    write_file(path, encode_png(raster));
}

Image image_from_raster(const Raster& raster) {
    Image img(raster.height, raster.width);
    if (raster.channels == 3) {
        img.rgb = raster.pixels;
    } else if (raster.channels == 1) {
        for (std::size_t i = 0; i < raster.pixels.size(); ++i) {
            std::fill_n(img.rgb.begin() + static_cast<std::ptrdiff_t>(i * 3), 3, raster.pixels[i]);
        }
    } else {
        throw RasterError("image raster must have 1 or 3 channels");
    }
    return img;
}

Raster raster_from_image(const Image& image) { return {image.height, image.width, 3, image.rgb}; }

Raster raster_from_mask(const BinaryMask& mask) {
    Raster r{mask.height(), mask.width(), 1, {}};
    r.pixels.resize(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) r.pixels[i] = mask.at_flat(i) ? 255 : 0;
    return r;
}

BinaryMask mask_from_raster(const Raster& raster) {
    std::vector<std::uint8_t> gray;
    if (raster.channels == 1) {
        gray = raster.pixels;
    } else if (raster.channels == 3) {
        gray.resize(raster.pixels.size() / 3);
        for (std::size_t i = 0; i < gray.size(); ++i) {
            const auto* px = &raster.pixels[i * 3];
            if (px[0] != px[1] || px[1] != px[2]) {
                throw RasterError("mask raster is not grayscale at pixel " + std::to_string(i));
            }
            gray[i] = px[0];
        }
    } else {
        throw RasterError("mask raster must have 1 or 3 channels");
    }
    const bool unit = std::all_of(gray.begin(), gray.end(), [](std::uint8_t v) { return v <= 1; });
    if (!unit) {
        for (auto& v : gray) v = v >= 128 ? 1 : 0;
    }
    return BinaryMask(raster.height, raster.width, std::move(gray));
}

} // namespace roadprompt
