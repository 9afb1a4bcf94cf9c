#include "roadprompt/pipeline.hpp"

#include <json.hpp>

#include <cstdio>
#include <sstream>

namespace roadprompt {

Confusion Confusion::of(const BinaryMask& pred, const BinaryMask& truth) {
    require_same_shape(pred, truth, "metrics");
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.at_flat(i), t = truth.at_flat(i);
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

Confusion& Confusion::operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

MetricReport report_from(const Confusion& c) {
    // Both masks empty is the only case where every ratio is 0/0.
    const bool both_empty = c.tp == 0 && c.fp == 0 && c.fn == 0;
    const auto ratio = [&](std::int64_t num, std::int64_t den) {
        if (den == 0) return both_empty ? 100.0 : 0.0;
        return 100.0 * static_cast<double>(num) / static_cast<double>(den);
    };
    MetricReport r;
    r.precision = ratio(c.tp, c.tp + c.fp);
    r.recall = ratio(c.tp, c.tp + c.fn);
    r.iou = ratio(c.tp, c.tp + c.fp + c.fn);
    const double s = r.precision + r.recall;
    r.f1 = s > 0.0 ? 2.0 * r.precision * r.recall / s : (both_empty ? 100.0 : 0.0);
    return r;
}

MetricReport metrics(const BinaryMask& pred, const BinaryMask& truth) { return report_from(Confusion::of(pred, truth)); }

const char* to_string(FusionStrategy s) { return s == FusionStrategy::sum ? "sum" : "mfm"; }

FusionStrategy fusion_from_string(const std::string& s) {
    if (s == "sum") return FusionStrategy::sum;
    if (s == "mfm") return FusionStrategy::mfm;
    throw InvalidArgument("unknown fusion strategy '" + s + "' (expected sum or mfm)");
}

Stage1Result stage1(const Image& image, const RoadModel& model, double threshold) {
    Stage1Result r;
    r.embedding = model.encode_image(image);
    r.auto_mask = model.decode_auto(r.embedding, {}).logits.binarize(threshold);
    r.highrecall_mask = model.decode_highrecall(r.embedding).binarize(threshold);
    return r;
}

BinaryMask stage2_remove(const ImageEmbedding& emb, std::span<const PointPrompt> negatives, const RoadModel& model,
                         double threshold) {
    return model.decode_auto(emb, negatives).logits.binarize(threshold);
}

BinaryMask stage3_add(const ImageEmbedding& emb, std::span<const PointPrompt> positives, const RoadModel& model,
                      double threshold) {
    return model.decode_prompted(emb, positives).logits.binarize(threshold);
}

BinaryMask finalize(const BinaryMask& stage2, const BinaryMask& stage3, FusionStrategy strategy,
                    const FusionInputs* fusion, double threshold) {
    require_same_shape(stage2, stage3, "finalize");
    if (strategy == FusionStrategy::sum) return stage2 | stage3;
    if (!fusion || !fusion->model || !fusion->embedding || !fusion->feat_automatic || !fusion->feat_prompted) {
        throw InvalidArgument("finalize: the mfm strategy needs decoder features");
    }
    BinaryMask out = fusion->model->fuse(*fusion->feat_automatic, *fusion->feat_prompted, *fusion->embedding)
                         .binarize(threshold);
    require_same_shape(out, stage2, "finalize");
    return out;
}

StageResult refine(const ImageEmbedding& emb, const BinaryMask& auto_mask, const BinaryMask& highrecall_mask,
                   const PromptBatch& prompts, const RoadModel& model, FusionStrategy strategy, double threshold) {
    StageResult r;
    r.strategy = strategy;
    r.auto_mask = auto_mask;
    r.highrecall_mask = highrecall_mask;
    const DecodeResult a = model.decode_auto(emb, prompts.negatives);
    r.stage2_mask = a.logits.binarize(threshold);
    if (prompts.positives.empty() && strategy == FusionStrategy::sum) {
        // Stage 3 only runs on user-supplied positives.
        r.stage3_mask = BinaryMask(r.stage2_mask.height(), r.stage2_mask.width());
        r.final_mask = r.stage2_mask;
        return r;
    }
    const DecodeResult p = model.decode_prompted(emb, prompts.positives);
    r.stage3_mask = p.logits.binarize(threshold);
    const FusionInputs fusion{&model, &emb, &a.features, &p.features};
    r.final_mask = finalize(r.stage2_mask, r.stage3_mask, strategy, &fusion, threshold);
    return r;
}

PairSource PairSource::from_entries(std::vector<DatasetEntry> entries) {
    PairSource s;
    s.count = entries.size();
    s.load = [entries = std::move(entries)](std::size_t i) { return load_pair(entries.at(i)); };
    return s;
}

PairSource PairSource::from_pairs(const std::vector<std::pair<Image, BinaryMask>>& pairs) {
    PairSource s;
    s.count = pairs.size();
    s.load = [&pairs](std::size_t i) { return pairs.at(i); };
    return s;
}

namespace {

void accumulate(RefinementReport& report, const Stage1Result& s1, const BinaryMask& truth, const RoadModel& model) {
    const RefinementConfig& cfg = report.config;
    const PatchGrid grid = model.grid_for(truth.height(), truth.width());
    const PromptBatch prompts = generate_prompts(error_maps(s1.auto_mask, truth), cfg.opening, grid);
    const BinaryMask final_mask =
        refine(s1.embedding, s1.auto_mask, s1.highrecall_mask, prompts, model, cfg.strategy, cfg.threshold).final_mask;
    ++report.images;
    report.positive_prompts += static_cast<std::int64_t>(prompts.positives.size());
    report.negative_prompts += static_cast<std::int64_t>(prompts.negatives.size());
    report.before += Confusion::of(s1.auto_mask, truth);
    report.after += Confusion::of(final_mask, truth);
}

} // namespace

RefinementReport simulate_refinement(const PairSource& data, const RoadModel& model, const RefinementConfig& cfg) {
    cfg.opening.validate();
    RefinementReport report;
    report.config = cfg;
    for (std::size_t i = 0; i < data.count; ++i) {
        const auto [image, truth] = data.load(i);
        accumulate(report, stage1(image, model, cfg.threshold), truth, model);
    }
    return report;
}

std::vector<RefinementReport> sweep(const PairSource& data, const RoadModel& model, const SweepAxes& axes) {
    std::vector<RefinementReport> rows;
    for (int k : axes.fnm_kernels) {
        for (int d : axes.densities) {
            RefinementReport r;
            r.config.opening = {k, axes.fpm_kernel, d};
            r.config.opening.validate();
            r.config.strategy = axes.strategy;
            r.config.threshold = axes.threshold;
            rows.push_back(r);
        }
    }
    for (std::size_t i = 0; i < data.count; ++i) {
        const auto [image, truth] = data.load(i);
        const Stage1Result s1 = stage1(image, model, axes.threshold);
        for (auto& row : rows) accumulate(row, s1, truth, model);
    }
    return rows;
}

std::string reports_to_json(std::span<const RefinementReport> rows) {
    nlohmann::json out = nlohmann::json::array();
    const auto metric_json = [](const MetricReport& m) {
        return nlohmann::json{{"precision", m.precision}, {"recall", m.recall}, {"iou", m.iou}, {"f1", m.f1}};
    };
    for (const auto& r : rows) {
        out.push_back({{"fnm_kernel", r.config.opening.fnm_kernel},
                       {"fpm_kernel", r.config.opening.fpm_kernel},
                       {"density", r.config.opening.density},
                       {"strategy", to_string(r.config.strategy)},
                       {"threshold", r.config.threshold},
                       {"images", r.images},
                       {"positive_prompts", r.positive_prompts},
                       {"negative_prompts", r.negative_prompts},
                       {"before", metric_json(r.before_metrics())},
                       {"after", metric_json(r.after_metrics())}});
    }
    return out.dump(2);
}

std::string reports_to_csv(std::span<const RefinementReport> rows) {
    std::ostringstream os;
    os << "fnm_kernel,fpm_kernel,density,strategy,images,positive_prompts,negative_prompts,"
          "precision_before,recall_before,iou_before,f1_before,precision_after,recall_after,iou_after,f1_after\n";
    char buf[256];
    for (const auto& r : rows) {
        const auto b = r.before_metrics(), a = r.after_metrics();
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%s,%lld,%lld,%lld,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n",
                      r.config.opening.fnm_kernel, r.config.opening.fpm_kernel, r.config.opening.density,
                      to_string(r.config.strategy), static_cast<long long>(r.images),
                      static_cast<long long>(r.positive_prompts), static_cast<long long>(r.negative_prompts),
                      b.precision, b.recall, b.iou, b.f1, a.precision, a.recall, a.iou, a.f1);
        os << buf;
    }
    return os.str();
}

std::string reports_to_text(std::span<const RefinementReport> rows) {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-5s %-5s %-7s %-8s %9s %9s %9s %9s\n", "fnm", "fpm", "density", "prompts",
                  "IoU pre", "IoU post", "F1 pre", "F1 post");
    os << buf;
    for (const auto& r : rows) {
        const auto b = r.before_metrics(), a = r.after_metrics();
        std::snprintf(buf, sizeof(buf), "%-5d %-5d %-7d %-8lld %9.2f %9.2f %9.2f %9.2f\n", r.config.opening.fnm_kernel,
                      r.config.opening.fpm_kernel, r.config.opening.density, static_cast<long long>(r.prompts()),
                      b.iou, a.iou, b.f1, a.f1);
        os << buf;
    }
    return os.str();
}

Stage1Evaluation evaluate_stage1(const PairSource& data, const RoadModel& model, double threshold) {
    Stage1Evaluation e;
    for (std::size_t i = 0; i < data.count; ++i) {
        const auto [image, truth] = data.load(i);
        const Stage1Result s1 = stage1(image, model, threshold);
        e.automatic += Confusion::of(s1.auto_mask, truth);
        e.highrecall += Confusion::of(s1.highrecall_mask, truth);
    }
    return e;
}

} // namespace roadprompt
