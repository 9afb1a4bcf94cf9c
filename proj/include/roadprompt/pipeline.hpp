#pragma once

// Three-stage inference, mask fusion, metrics and the automated refinement
// simulator.

#include "roadprompt/data.hpp"
#include "roadprompt/morph.hpp"
#include "roadprompt/net.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace roadprompt {

/// Pixel confusion counts. Sums are associative, so per-image counts can be
/// merged in any order.
struct Confusion {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    static Confusion of(const BinaryMask& pred, const BinaryMask& truth);
    Confusion& operator+=(const Confusion& o);
    bool operator==(const Confusion&) const = default;
};

/// Percentages in [0, 100].
struct MetricReport {
    double precision = 0.0;
    double recall = 0.0;
    double iou = 0.0;
    double f1 = 0.0;
};

/// An empty denominator yields 100 when prediction and truth are both empty
/// (no positives anywhere), else 0.
MetricReport report_from(const Confusion& c);
MetricReport metrics(const BinaryMask& pred, const BinaryMask& truth);

enum class FusionStrategy : std::uint8_t { sum, mfm };
const char* to_string(FusionStrategy s);
FusionStrategy fusion_from_string(const std::string& s);

inline constexpr double kDefaultThreshold = 0.5;

struct Stage1Result {
    BinaryMask auto_mask;
    BinaryMask highrecall_mask;
    ImageEmbedding embedding;
};

/// Encodes once, then decodes the automatic head without prompts and the
/// high-recall head.
Stage1Result stage1(const Image& image, const RoadModel& model, double threshold = kDefaultThreshold);
BinaryMask stage2_remove(const ImageEmbedding& emb, std::span<const PointPrompt> negatives, const RoadModel& model,
                         double threshold = kDefaultThreshold);
BinaryMask stage3_add(const ImageEmbedding& emb, std::span<const PointPrompt> positives, const RoadModel& model,
                      double threshold = kDefaultThreshold);

/// Everything needed by the fusion head path of finalize.
struct FusionInputs {
    const RoadModel* model = nullptr;
    const ImageEmbedding* embedding = nullptr;
    const nn::Tensor* feat_automatic = nullptr;
    const nn::Tensor* feat_prompted = nullptr;
};

/// sum: stage2 | stage3. mfm: binarized fusion-head output (needs `fusion`).
BinaryMask finalize(const BinaryMask& stage2, const BinaryMask& stage3, FusionStrategy strategy,
                    const FusionInputs* fusion = nullptr, double threshold = kDefaultThreshold);

struct StageResult {
    BinaryMask auto_mask;
    BinaryMask highrecall_mask;
    BinaryMask stage2_mask;
    BinaryMask stage3_mask;
    BinaryMask final_mask;
    FusionStrategy strategy = FusionStrategy::sum;
};

/// Stages 2, 3 and the final mask against an existing embedding. Under sum,
/// an empty positive list skips Stage 3 (its mask is empty).
StageResult refine(const ImageEmbedding& emb, const BinaryMask& auto_mask, const BinaryMask& highrecall_mask,
                   const PromptBatch& prompts, const RoadModel& model, FusionStrategy strategy,
                   double threshold = kDefaultThreshold);

struct RefinementConfig {
    OpeningConfig opening;
    FusionStrategy strategy = FusionStrategy::sum;
    double threshold = kDefaultThreshold;
};

struct RefinementReport {
    RefinementConfig config;
    std::int64_t images = 0;
    std::int64_t positive_prompts = 0;
    std::int64_t negative_prompts = 0;
    Confusion before;
    Confusion after;

    MetricReport before_metrics() const { return report_from(before); }
    MetricReport after_metrics() const { return report_from(after); }
    std::int64_t prompts() const { return positive_prompts + negative_prompts; }
};

/// Image/truth pairs by index; lets callers stream from disk.
struct PairSource {
    std::size_t count = 0;
    std::function<std::pair<Image, BinaryMask>(std::size_t)> load;

    static PairSource from_entries(std::vector<DatasetEntry> entries);
    static PairSource from_pairs(const std::vector<std::pair<Image, BinaryMask>>& pairs);
};

/// Per image: stage 1, error maps against truth, prompt synthesis, stages 2/3,
/// fusion. Counts are accumulated over the whole set before ratios are taken.
RefinementReport simulate_refinement(const PairSource& data, const RoadModel& model, const RefinementConfig& cfg);

struct SweepAxes {
    std::vector<int> fnm_kernels{1, 3, 5, 7};
    std::vector<int> densities{1, 2, 4};
    int fpm_kernel = 7;
    FusionStrategy strategy = FusionStrategy::sum;
    double threshold = kDefaultThreshold;
};

/// One report per (fnm_kernel, density) in row-major axis order. Stage 1 runs
/// once per image and is shared by every combination.
std::vector<RefinementReport> sweep(const PairSource& data, const RoadModel& model, const SweepAxes& axes);

/// Machine-readable rows: kernels, density, strategy, P/R/IoU/F1 before and after.
std::string reports_to_json(std::span<const RefinementReport> rows);
std::string reports_to_csv(std::span<const RefinementReport> rows);
std::string reports_to_text(std::span<const RefinementReport> rows);

/// Aggregate Stage-1 metrics of the automatic and high-recall heads.
struct Stage1Evaluation {
    Confusion automatic;
    Confusion highrecall;
};
Stage1Evaluation evaluate_stage1(const PairSource& data, const RoadModel& model, double threshold = kDefaultThreshold);

} // namespace roadprompt
