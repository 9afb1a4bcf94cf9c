#include "roadprompt/grid.hpp"

#include <algorithm>
#include <numeric>

namespace roadprompt {

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill)
    : height_(height), width_(width) {
    if (height <= 0 || width <= 0) {
        throw InvalidArgument("mask dimensions must be positive, got " + std::to_string(height) +
                              "x" + std::to_string(width));
    }
    if (fill > 1) throw InvalidArgument("mask fill must be 0 or 1");
    values_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> values)
    : height_(height), width_(width), values_(std::move(values)) {
    if (height <= 0 || width <= 0) {
        throw InvalidArgument("mask dimensions must be positive, got " + std::to_string(height) +
                              "x" + std::to_string(width));
    }
    if (values_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
        throw InvalidArgument("mask value count does not match " + std::to_string(height) + "x" +
                              std::to_string(width));
    }
    if (std::any_of(values_.begin(), values_.end(), [](std::uint8_t v) { return v > 1; })) {
        throw InvalidArgument("mask values must be 0 or 1");
    }
}

std::size_t BinaryMask::count() const {
    return std::accumulate(values_.begin(), values_.end(), std::size_t{0});
}

BinaryMask BinaryMask::operator|(const BinaryMask& other) const {
    require_same_shape(*this, other, "mask union");
    BinaryMask out = *this;
    for (std::size_t i = 0; i < values_.size(); ++i) out.values_[i] |= other.values_[i];
    return out;
}

BinaryMask BinaryMask::operator&(const BinaryMask& other) const {
    require_same_shape(*this, other, "mask intersection");
    BinaryMask out = *this;
    for (std::size_t i = 0; i < values_.size(); ++i) out.values_[i] &= other.values_[i];
    return out;
}

BinaryMask BinaryMask::operator~() const {
    BinaryMask out = *this;
    for (auto& v : out.values_) v ^= 1;
    return out;
}

BinaryMask BinaryMask::minus(const BinaryMask& other) const {
    require_same_shape(*this, other, "mask difference");
    BinaryMask out = *this;
    for (std::size_t i = 0; i < values_.size(); ++i) out.values_[i] &= other.values_[i] ^ 1;
    return out;
}

bool BinaryMask::subset_of(const BinaryMask& other) const {
    require_same_shape(*this, other, "mask subset test");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (values_[i] > other.values_[i]) return false;
    }
    return true;
}

std::string shape_string(const BinaryMask& m) {
    return std::to_string(m.height()) + "x" + std::to_string(m.width());
}

void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (!a.same_shape(b)) {
        throw InvalidArgument(std::string(what) + ": dimension mismatch " + shape_string(a) +
                              " vs " + shape_string(b));
    }
}

const char* to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }

PatchGrid::PatchGrid(int patch_h, int patch_w, int image_h, int image_w)
    : patch_h_(patch_h), patch_w_(patch_w), image_h_(image_h), image_w_(image_w) {
    if (patch_h < 1 || patch_w < 1) {
        throw InvalidArgument("patch size must be at least 1x1, got " + std::to_string(patch_h) +
                              "x" + std::to_string(patch_w));
    }
    if (image_h < 1 || image_w < 1) {
        throw InvalidArgument("image size must be positive, got " + std::to_string(image_h) + "x" +
                              std::to_string(image_w));
    }
}

void require_in_bounds(const PointPrompt& point, int height, int width) {
    if (point.h < 0 || point.h >= height || point.w < 0 || point.w >= width) {
        throw InvalidArgument(std::string(to_string(point.polarity)) + " point (" +
                              std::to_string(point.h) + ", " + std::to_string(point.w) +
                              ") outside " + std::to_string(height) + "x" + std::to_string(width) +
                              " image");
    }
}

PatchIndex patch_of(const PointPrompt& point, const PatchGrid& grid) {
    require_in_bounds(point, grid.image_h(), grid.image_w());
    return {point.h / grid.patch_h(), point.w / grid.patch_w()};
}

PixelRect patch_pixels(PatchIndex idx, const PatchGrid& grid) {
    if (!grid.valid(idx)) {
        throw InvalidArgument("patch index (" + std::to_string(idx.i) + ", " +
                              std::to_string(idx.j) + ") outside " + std::to_string(grid.rows()) +
                              "x" + std::to_string(grid.cols()) + " patch grid");
    }
    const int r0 = idx.i * grid.patch_h();
    const int c0 = idx.j * grid.patch_w();
    return {r0, std::min(r0 + grid.patch_h(), grid.image_h()), c0,
            std::min(c0 + grid.patch_w(), grid.image_w())};
}

BinaryMask patch_union_mask(std::span<const PatchIndex> indices, const PatchGrid& grid) {
    BinaryMask out(grid.image_h(), grid.image_w());
    for (const auto& idx : indices) {
        const PixelRect r = patch_pixels(idx, grid);
        for (int row = r.row_begin; row < r.row_end; ++row) {
            for (int col = r.col_begin; col < r.col_end; ++col) out.set(row, col, true);
        }
    }
    return out;
}

std::vector<PatchIndex> patches_of(std::span<const PointPrompt> points, const PatchGrid& grid) {
    std::vector<PatchIndex> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(patch_of(p, grid));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

} // namespace roadprompt
