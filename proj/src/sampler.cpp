#include "roadprompt/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace roadprompt {

void SamplerConfig::validate() const {
    if (base_points < 0) throw InvalidArgument("base_points must be >= 0");
    if (!(positive_ratio >= 0.0 && positive_ratio <= 1.0)) {
        throw InvalidArgument("positive_ratio must lie in [0, 1]");
    }
    if (!(delta_n >= 0.0)) throw InvalidArgument("delta_n must be >= 0");
    if (!(delta_r >= 0.0)) throw InvalidArgument("delta_r must be >= 0");
}

PromptCounts draw_counts(const SamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto span = static_cast<long>(std::trunc(cfg.base_points * cfg.delta_n));
    long jitter = 0;
    if (span > 0) jitter = std::uniform_int_distribution<long>(-span, span)(rng);
    const int total = static_cast<int>(std::max(0L, cfg.base_points + jitter));

    double ratio = cfg.positive_ratio;
    if (cfg.delta_r > 0.0) {
        ratio += std::uniform_real_distribution<double>(-cfg.delta_r, cfg.delta_r)(rng);
    }
    ratio = std::clamp(ratio, 0.0, 1.0);

    PromptCounts out;
    out.total = total;
    out.positives = static_cast<int>(std::floor(total * ratio));
    out.negatives = total - out.positives;
    return out;
}

namespace {

// Partial Fisher-Yates over a copy of the candidate list.
std::vector<PointPrompt> draw_without_replacement(std::vector<std::size_t> pool, int count,
                                                  int width, Polarity polarity, Rng& rng) {
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(std::max(count, 0)), pool.size());
    std::vector<PointPrompt> out;
    out.reserve(take);
    for (std::size_t k = 0; k < take; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
        std::swap(pool[k], pool[pick(rng)]);
        const auto flat = pool[k];
        out.push_back({static_cast<int>(flat / static_cast<std::size_t>(width)),
                       static_cast<int>(flat % static_cast<std::size_t>(width)), polarity});
    }
    return out;
}

} // namespace

PromptBatch sample_points(const BinaryMask& mask, int positives, int negatives, Rng& rng) {
    if (positives < 0 || negatives < 0) throw InvalidArgument("prompt counts must be >= 0");
    std::vector<std::size_t> foreground;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask.at_flat(i)) foreground.push_back(i);
    }
    PromptBatch batch;
    if (foreground.empty()) return batch;
    batch.positives = draw_without_replacement(foreground, positives, mask.width(), Polarity::positive, rng);
    batch.negatives = draw_without_replacement(foreground, negatives, mask.width(), Polarity::negative, rng);
    return batch;
}

} // namespace roadprompt
