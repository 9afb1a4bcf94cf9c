#pragma once

#include "roadprompt/grid.hpp"

#include <random>
#include <vector>

namespace roadprompt {

/// Every stochastic component takes one of these explicitly; nothing holds
/// hidden random state.
using Rng = std::mt19937_64;

/// Random prompt-count configuration for training. Field names follow the
/// config-file keys: base_points, positive_ratio, delta_n, delta_r.
struct SamplerConfig {
    int base_points = 20;
    double positive_ratio = 0.5;
    double delta_n = 1.3;
    double delta_r = 1.0;

    void validate() const;
};

struct PromptCounts {
    int total = 0;
    int positives = 0;
    int negatives = 0;
};

struct PromptBatch {
    std::vector<PointPrompt> positives;
    std::vector<PointPrompt> negatives;

    bool empty() const { return positives.empty() && negatives.empty(); }
    std::size_t size() const { return positives.size() + negatives.size(); }
    bool operator==(const PromptBatch&) const = default;
};

/// N = max(0, N_B + randint(-trunc(N_B*dN), trunc(N_B*dN))), R = clip(R_F + U(-dR, dR), 0, 1),
/// N_P = floor(N*R), N_N = N - N_P.
PromptCounts draw_counts(const SamplerConfig& cfg, Rng& rng);

/// Draws positives and negatives independently, each uniformly without
/// replacement from the mask's foreground. Counts above the foreground size are
/// truncated.
PromptBatch sample_points(const BinaryMask& mask, int positives, int negatives, Rng& rng);

} // namespace roadprompt
