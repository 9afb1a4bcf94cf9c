#include "oracles.hpp"
#include "roadprompt/pipeline.hpp"

#include <doctest.h>
#include <json.hpp>

using namespace roadprompt;

namespace {

ModelConfig small_config(std::uint64_t seed = 0) {
    ModelConfig cfg;
    cfg.patch_h = cfg.patch_w = 16;
    cfg.seed = seed;
    return cfg;
}

std::vector<std::pair<Image, BinaryMask>> small_scenes(int n, int size = 48) {
    SyntheticSpec s;
    s.image_size = size;
    s.min_foreground = 0.0;
    std::vector<std::pair<Image, BinaryMask>> out;
    for (int i = 0; i < n; ++i) out.push_back(render_synthetic(s, i));
    return out;
}

} // namespace

TEST_CASE("metrics: worked example and empty cases") {
    // TP=2, FP=1, FN=1.
    const BinaryMask pred(1, 5, std::vector<std::uint8_t>{1, 1, 1, 0, 0});
    const BinaryMask truth(1, 5, std::vector<std::uint8_t>{1, 1, 0, 1, 0});
    const MetricReport r = metrics(pred, truth);
    CHECK(r.precision == doctest::Approx(66.6667).epsilon(1e-4));
    CHECK(r.recall == doctest::Approx(66.6667).epsilon(1e-4));
    CHECK(r.iou == doctest::Approx(50.0));
    CHECK(r.f1 == doctest::Approx(66.6667).epsilon(1e-4));

    const BinaryMask empty(3, 3);
    CHECK(metrics(empty, empty).iou == 100.0);
    BinaryMask one(3, 3);
    one.set(1, 1, true);
    CHECK(metrics(empty, one).recall == 0.0);
    CHECK(metrics(empty, one).iou == 0.0);
    CHECK_THROWS_AS(metrics(empty, BinaryMask(3, 4)), InvalidArgument);
}

TEST_CASE("metrics: precision and recall swap under exchange; counts merge in any order") {
    std::mt19937_64 rng(1);
    Confusion fwd, bwd;
    for (int i = 0; i < 10; ++i) {
        const BinaryMask a = oracle::random_mask(9, 11, 0.3, rng);
        const BinaryMask b = oracle::random_mask(9, 11, 0.4, rng);
        CHECK(metrics(a, b).precision == doctest::Approx(metrics(b, a).recall));
        CHECK(metrics(a, b).iou == doctest::Approx(metrics(b, a).iou));
        fwd += Confusion::of(a, b);
    }
    std::mt19937_64 rng2(1);
    std::vector<Confusion> parts;
    for (int i = 0; i < 10; ++i) {
        const BinaryMask a = oracle::random_mask(9, 11, 0.3, rng2);
        const BinaryMask b = oracle::random_mask(9, 11, 0.4, rng2);
        parts.push_back(Confusion::of(a, b));
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) bwd += *it;
    CHECK(fwd == bwd);
}

TEST_CASE("stage 2 without prompts is stage 1; sum without prompts keeps the automatic mask") {
    const RoadModel model(small_config(2));
    for (const auto& [image, truth] : small_scenes(3)) {
        const Stage1Result s1 = stage1(image, model);
        CHECK(stage2_remove(s1.embedding, {}, model) == s1.auto_mask);
        const StageResult r = refine(s1.embedding, s1.auto_mask, s1.highrecall_mask, {}, model, FusionStrategy::sum);
        CHECK(r.final_mask == s1.auto_mask);
        CHECK(r.stage3_mask.count() == 0);
        const StageResult m = refine(s1.embedding, s1.auto_mask, s1.highrecall_mask, {}, model, FusionStrategy::mfm);
        CHECK(m.final_mask.height() == truth.height());
    }
}

TEST_CASE("finalize") {
    const BinaryMask a(1, 3, std::vector<std::uint8_t>{1, 0, 0});
    const BinaryMask b(1, 3, std::vector<std::uint8_t>{0, 0, 1});
    CHECK(finalize(a, b, FusionStrategy::sum) == BinaryMask(1, 3, std::vector<std::uint8_t>{1, 0, 1}));
    CHECK_THROWS_AS(finalize(a, b, FusionStrategy::mfm), InvalidArgument);
    CHECK_THROWS_AS(fusion_from_string("max"), InvalidArgument);
}

TEST_CASE("simulation against the model's own output generates no prompts") {
    const RoadModel model(small_config(3));
    auto scenes = small_scenes(4);
    for (auto& [image, truth] : scenes) truth = stage1(image, model).auto_mask;
    const RefinementReport r = simulate_refinement(PairSource::from_pairs(scenes), model, {});
    CHECK(r.images == 4);
    CHECK(r.prompts() == 0);
    CHECK(r.before == r.after);
}

TEST_CASE("sweep: grid order, shared stage 1, prompt counts shrink with the kernel") {
    const RoadModel model(small_config(4));
    const auto scenes = small_scenes(4);
    const PairSource data = PairSource::from_pairs(scenes);
    SweepAxes axes;
    const auto rows = sweep(data, model, axes);
    REQUIRE(rows.size() == 12);
    CHECK(rows[0].config.opening.fnm_kernel == 1);
    CHECK(rows[0].config.opening.density == 1);
    CHECK(rows[1].config.opening.density == 2);
    CHECK(rows[11].config.opening.fnm_kernel == 7);
    CHECK(rows[11].config.opening.density == 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].before == rows[0].before);
        if (i + 3 < rows.size()) CHECK(rows[i + 3].positive_prompts <= rows[i].positive_prompts);
    }
    // One row equals a standalone simulation.
    const RefinementReport single = simulate_refinement(data, model, {{3, 7, 2}, FusionStrategy::sum, 0.5});
    CHECK(single.after == rows[4].after);
    CHECK(single.prompts() == rows[4].prompts());

    const auto j = nlohmann::json::parse(reports_to_json(rows));
    REQUIRE(j.size() == 12);
    for (const char* key : {"fnm_kernel", "fpm_kernel", "density", "strategy", "before", "after"})
        CHECK(j[0].contains(key));
    const std::string csv = reports_to_csv(rows);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
    CHECK(reports_to_text(rows).find("IoU") != std::string::npos);
}
