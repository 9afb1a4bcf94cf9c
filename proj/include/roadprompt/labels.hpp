#pragma once

#include "roadprompt/grid.hpp"

#include <span>

namespace roadprompt {

/// Localized supervision for one sampled prompt set.
struct LabelPair {
    BinaryMask positive; // M restricted to patches holding a positive prompt
    BinaryMask negative; // M with every negatively prompted patch zeroed
};

BinaryMask make_positive_label(const BinaryMask& truth, std::span<const PointPrompt> positives,
                               const PatchGrid& grid);
BinaryMask make_negative_label(const BinaryMask& truth, std::span<const PointPrompt> negatives,
                               const PatchGrid& grid);

/// (1 - m_n) * M: the road pixels a negative prompt set asks to remove.
/// Rejects an m_n that is not contained in M.
BinaryMask removed_region(const BinaryMask& truth, const BinaryMask& negative_label);

LabelPair make_labels(const BinaryMask& truth, std::span<const PointPrompt> positives,
                      std::span<const PointPrompt> negatives, const PatchGrid& grid);

} // namespace roadprompt
