#include "roadprompt/morph.hpp"

#include <algorithm>
#include <string>

namespace roadprompt {

void OpeningConfig::validate() const {
    for (int k : {fnm_kernel, fpm_kernel}) {
        if (k < 1 || k % 2 == 0) {
            throw InvalidArgument("opening kernels must be odd and >= 1, got " + std::to_string(k));
        }
    }
    if (density < 1) throw InvalidArgument("prompt density must be >= 1");
}

ErrorMaps error_maps(const BinaryMask& prediction, const BinaryMask& truth) {
    require_same_shape(prediction, truth, "error_maps");
    return {truth.minus(prediction), prediction.minus(truth)};
}

namespace {

enum class Pool { min, max };

void require_odd(int k) {
    if (k < 1 || k % 2 == 0) {
        throw InvalidArgument("morphology kernel must be odd and >= 1, got " + std::to_string(k));
    }
}

// One separable pass of a k-wide window along rows (stride = 1) or columns
// (stride = width). A running count of foreground pixels in the window decides
// the output: min needs all k in-bounds pixels set, max needs any.
void pool_line(const std::uint8_t* in, std::uint8_t* out, int length, std::ptrdiff_t stride, int k,
               Pool op) {
    const int r = k / 2;
    int ones = 0;
    for (int x = 0; x < std::min(r, length); ++x) ones += in[x * stride];
    for (int x = 0; x < length; ++x) {
        const int enter = x + r;
        const int leave = x - r - 1;
        if (enter < length) ones += in[enter * stride];
        if (leave >= 0) ones -= in[leave * stride];
        out[x * stride] = op == Pool::max ? (ones > 0) : (ones == k);
    }
}

BinaryMask pool(const BinaryMask& mask, int k, Pool op) {
    require_odd(k);
    if (k == 1) return mask;
    const int h = mask.height();
    const int w = mask.width();
    std::vector<std::uint8_t> src(mask.values().begin(), mask.values().end());
    std::vector<std::uint8_t> tmp(src.size());
    for (int row = 0; row < h; ++row) {
        pool_line(src.data() + static_cast<std::ptrdiff_t>(row) * w,
                  tmp.data() + static_cast<std::ptrdiff_t>(row) * w, w, 1, k, op);
    }
    for (int col = 0; col < w; ++col) pool_line(tmp.data() + col, src.data() + col, h, w, k, op);
    return BinaryMask(h, w, std::move(src));
}

} // namespace

BinaryMask erode(const BinaryMask& mask, int k) { return pool(mask, k, Pool::min); }

BinaryMask dilate(const BinaryMask& mask, int k) { return pool(mask, k, Pool::max); }

BinaryMask opening(const BinaryMask& mask, int k) { return dilate(erode(mask, k), k); }

std::vector<PointPrompt> prompts_from_map(const BinaryMask& opened, int density, Polarity polarity,
                                          const PatchGrid& grid) {
    if (opened.height() != grid.image_h() || opened.width() != grid.image_w()) {
        throw InvalidArgument("prompt generation: map " + shape_string(opened) +
                              " does not match patch grid");
    }
    std::vector<PointPrompt> out;
    struct Candidate {
        long dist2;
        int row;
        int col;
    };
    std::vector<Candidate> candidates;
    for (int i = 0; i < grid.rows(); ++i) {
        for (int j = 0; j < grid.cols(); ++j) {
            const PixelRect rect = patch_pixels({i, j}, grid);
            // Doubled coordinates keep the (possibly half-pixel) center integral.
            const int center_r2 = rect.row_begin + rect.row_end - 1;
            const int center_c2 = rect.col_begin + rect.col_end - 1;
            candidates.clear();
            for (int row = rect.row_begin; row < rect.row_end; ++row) {
                for (int col = rect.col_begin; col < rect.col_end; ++col) {
                    if (!opened(row, col)) continue;
                    const long dr = 2L * row - center_r2;
                    const long dc = 2L * col - center_c2;
                    candidates.push_back({dr * dr + dc * dc, row, col});
                }
            }
            if (candidates.empty()) continue;
            const auto take = std::min<std::size_t>(static_cast<std::size_t>(density), candidates.size());
            std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                              candidates.end(), [](const Candidate& a, const Candidate& b) {
                                  if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
                                  if (a.row != b.row) return a.row < b.row;
                                  return a.col < b.col;
                              });
            for (std::size_t k = 0; k < take; ++k) {
                out.push_back({candidates[k].row, candidates[k].col, polarity});
            }
        }
    }
    return out;
}

PromptBatch generate_prompts(const ErrorMaps& errs, const OpeningConfig& cfg, const PatchGrid& grid) {
    cfg.validate();
    PromptBatch batch;
    batch.positives = prompts_from_map(opening(errs.fnm, cfg.fnm_kernel), cfg.density, Polarity::positive, grid);
    batch.negatives = prompts_from_map(opening(errs.fpm, cfg.fpm_kernel), cfg.density, Polarity::negative, grid);
    return batch;
}

} // namespace roadprompt
