#include "roadprompt/labels.hpp"

namespace roadprompt {

namespace {

void require_grid_matches(const BinaryMask& truth, const PatchGrid& grid) {
    if (truth.height() != grid.image_h() || truth.width() != grid.image_w()) {
        throw InvalidArgument("label synthesis: mask " + shape_string(truth) +
                              " does not match patch grid image " +
                              std::to_string(grid.image_h()) + "x" + std::to_string(grid.image_w()));
    }
}

} // namespace

BinaryMask make_positive_label(const BinaryMask& truth, std::span<const PointPrompt> positives,
                               const PatchGrid& grid) {
    require_grid_matches(truth, grid);
    const auto patches = patches_of(positives, grid);
    return truth & patch_union_mask(patches, grid);
}

BinaryMask make_negative_label(const BinaryMask& truth, std::span<const PointPrompt> negatives,
                               const PatchGrid& grid) {
    require_grid_matches(truth, grid);
    const auto patches = patches_of(negatives, grid);
    return truth.minus(patch_union_mask(patches, grid));
}

BinaryMask removed_region(const BinaryMask& truth, const BinaryMask& negative_label) {
    require_same_shape(truth, negative_label, "removed_region");
    if (!negative_label.subset_of(truth)) {
        throw InvalidArgument("removed_region: negative label has foreground outside the road mask");
    }
    return truth.minus(negative_label);
}

LabelPair make_labels(const BinaryMask& truth, std::span<const PointPrompt> positives,
                      std::span<const PointPrompt> negatives, const PatchGrid& grid) {
    return {make_positive_label(truth, positives, grid), make_negative_label(truth, negatives, grid)};
}

} // namespace roadprompt
