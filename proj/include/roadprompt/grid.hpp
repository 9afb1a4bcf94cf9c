#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace roadprompt {

/// Raised when a caller hands an operation arguments outside its contract
/// (out-of-bounds points, mismatched dimensions, even kernels, ...).
class InvalidArgument : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// H x W raster of {0,1} road labels, row-major.
class BinaryMask {
  public:
    BinaryMask() = default;
    BinaryMask(int height, int width, std::uint8_t fill = 0);
    /// Takes ownership of row-major values; every value must be 0 or 1.
    BinaryMask(int height, int width, std::vector<std::uint8_t> values);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    std::uint8_t operator()(int row, int col) const { return values_[index(row, col)]; }
    void set(int row, int col, bool on) { values_[index(row, col)] = on ? 1 : 0; }

    std::span<const std::uint8_t> values() const { return values_; }
    std::uint8_t at_flat(std::size_t i) const { return values_[i]; }
    void set_flat(std::size_t i, bool on) { values_[i] = on ? 1 : 0; }

    std::size_t count() const;
    bool same_shape(const BinaryMask& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    BinaryMask operator|(const BinaryMask& other) const;
    BinaryMask operator&(const BinaryMask& other) const;
    BinaryMask operator~() const;
    /// Elementwise a AND NOT b.
    BinaryMask minus(const BinaryMask& other) const;
    /// True when every foreground pixel of this mask is also foreground in `other`.
    bool subset_of(const BinaryMask& other) const;

    bool operator==(const BinaryMask&) const = default;

  private:
    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(col);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> values_;
};

std::string shape_string(const BinaryMask& m);
void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what);

enum class Polarity : std::uint8_t { negative = 0, positive = 1 };

const char* to_string(Polarity p);

/// A clicked pixel. Coordinates are (row, column) with the origin top-left.
struct PointPrompt {
    int h = 0;
    int w = 0;
    Polarity polarity = Polarity::positive;

    bool operator==(const PointPrompt&) const = default;
};

inline PointPrompt positive_at(int h, int w) { return {h, w, Polarity::positive}; }
inline PointPrompt negative_at(int h, int w) { return {h, w, Polarity::negative}; }

struct PatchIndex {
    int i = 0;
    int j = 0;

    bool operator==(const PatchIndex&) const = default;
    auto operator<=>(const PatchIndex&) const = default;
};

/// Half-open pixel rectangle [row_begin, row_end) x [col_begin, col_end).
struct PixelRect {
    int row_begin = 0;
    int row_end = 0;
    int col_begin = 0;
    int col_end = 0;

    int height() const { return row_end - row_begin; }
    int width() const { return col_end - col_begin; }
    bool contains(int row, int col) const {
        return row >= row_begin && row < row_end && col >= col_begin && col < col_end;
    }
    bool operator==(const PixelRect&) const = default;
};

/// Non-overlapping l_h x l_w tiling of an H x W image. Sizes that are not a
/// multiple of the patch size get truncated edge patches.
class PatchGrid {
  public:
    PatchGrid(int patch_h, int patch_w, int image_h, int image_w);

    int patch_h() const { return patch_h_; }
    int patch_w() const { return patch_w_; }
    int image_h() const { return image_h_; }
    int image_w() const { return image_w_; }
    int rows() const { return (image_h_ + patch_h_ - 1) / patch_h_; }
    int cols() const { return (image_w_ + patch_w_ - 1) / patch_w_; }
    int patch_count() const { return rows() * cols(); }

    bool contains(int h, int w) const { return h >= 0 && h < image_h_ && w >= 0 && w < image_w_; }
    bool valid(PatchIndex idx) const {
        return idx.i >= 0 && idx.i < rows() && idx.j >= 0 && idx.j < cols();
    }

    /// Same patch size over a different image.
    PatchGrid resized(int image_h, int image_w) const {
        return {patch_h_, patch_w_, image_h, image_w};
    }

    bool operator==(const PatchGrid&) const = default;

  private:
    int patch_h_;
    int patch_w_;
    int image_h_;
    int image_w_;
};

/// The point-to-patch mapping: (floor(h / l_h), floor(w / l_w)).
PatchIndex patch_of(const PointPrompt& point, const PatchGrid& grid);
PixelRect patch_pixels(PatchIndex idx, const PatchGrid& grid);
BinaryMask patch_union_mask(std::span<const PatchIndex> indices, const PatchGrid& grid);

/// Distinct patches touched by `points`, in ascending (i, j) order.
std::vector<PatchIndex> patches_of(std::span<const PointPrompt> points, const PatchGrid& grid);

void require_in_bounds(const PointPrompt& point, int height, int width);

} // namespace roadprompt
