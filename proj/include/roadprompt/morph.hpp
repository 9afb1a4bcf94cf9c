#pragma once

#include "roadprompt/grid.hpp"
#include "roadprompt/sampler.hpp"

namespace roadprompt {

struct ErrorMaps {
    BinaryMask fnm; // truth AND NOT prediction
    BinaryMask fpm; // prediction AND NOT truth
};

/// Test-time prompt synthesis settings. Defaults are the reported optima.
struct OpeningConfig {
    int fnm_kernel = 3;
    int fpm_kernel = 7;
    int density = 1; // prompts per qualifying patch

    void validate() const;
};

ErrorMaps error_maps(const BinaryMask& prediction, const BinaryMask& truth);

/// Square k x k stride-1 min pooling; out-of-image pixels count as background.
BinaryMask erode(const BinaryMask& mask, int k);
/// Square k x k stride-1 max pooling; out-of-image pixels count as background.
BinaryMask dilate(const BinaryMask& mask, int k);
/// dilate(erode(mask, k), k).
BinaryMask opening(const BinaryMask& mask, int k);

/// Opens both error maps, then places `density` prompts in every patch whose
/// opened restriction is nonempty: positives from the false-negative map,
/// negatives from the false-positive map. Within a patch, prompts go to the
/// foreground pixels nearest the patch center (ties row-major).
PromptBatch generate_prompts(const ErrorMaps& errs, const OpeningConfig& cfg, const PatchGrid& grid);

/// The placement rule used by generate_prompts, for one already-opened map.
std::vector<PointPrompt> prompts_from_map(const BinaryMask& opened, int density, Polarity polarity,
                                          const PatchGrid& grid);

} // namespace roadprompt
