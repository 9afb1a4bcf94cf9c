#include "oracles.hpp"
#include "roadprompt/labels.hpp"
#include "roadprompt/morph.hpp"
#include "roadprompt/sampler.hpp"

#include <doctest.h>

#include <set>

using namespace roadprompt;

TEST_CASE("patch_of floors coordinates by patch size") {
    const PatchGrid g(32, 32, 128, 128);
    CHECK(patch_of({0, 0}, g) == PatchIndex{0, 0});
    CHECK(patch_of({40, 70}, g) == PatchIndex{1, 2});
    CHECK(patch_of({127, 127}, g) == PatchIndex{3, 3});
    CHECK(patch_of({31, 32}, g) == PatchIndex{0, 1});
    CHECK_THROWS_AS(patch_of({128, 0}, g), InvalidArgument);
    CHECK_THROWS_AS(patch_of({0, -1}, g), InvalidArgument);
}

TEST_CASE("truncated edge patches") {
    const PatchGrid g(32, 32, 100, 70);
    CHECK(g.rows() == 4);
    CHECK(g.cols() == 3);
    const PixelRect r = patch_pixels({3, 2}, g);
    CHECK(r.row_begin == 96);
    CHECK(r.row_end == 100);
    CHECK(r.col_begin == 64);
    CHECK(r.col_end == 70);
    CHECK_THROWS_AS(patch_pixels({4, 0}, g), InvalidArgument);
    CHECK_THROWS_AS(PatchGrid(0, 32, 10, 10), InvalidArgument);
}

TEST_CASE("patches_of is sorted and distinct") {
    const PatchGrid g(32, 32, 128, 128);
    const std::vector<PointPrompt> pts{{100, 5}, {1, 1}, {2, 3}, {40, 70}};
    const auto idx = patches_of(pts, g);
    REQUIRE(idx.size() == 3);
    CHECK(idx[0] == PatchIndex{0, 0});
    CHECK(idx[1] == PatchIndex{1, 2});
    CHECK(idx[2] == PatchIndex{3, 0});
}

TEST_CASE("mask values are validated") {
    CHECK_THROWS_AS(BinaryMask(2, 2, std::vector<std::uint8_t>{0, 1, 2, 0}), InvalidArgument);
    CHECK_THROWS_AS(BinaryMask(2, 2, std::vector<std::uint8_t>{0, 1, 1}), InvalidArgument);
    CHECK_THROWS_AS(BinaryMask(0, 3), InvalidArgument);
}

TEST_CASE("labels: worked example at (40,70)") {
    std::mt19937_64 rng(1);
    const BinaryMask m = oracle::random_mask(128, 128, 0.3, rng);
    const PatchGrid g(32, 32, 128, 128);
    const std::vector<PointPrompt> p{{40, 70, Polarity::positive}};
    const BinaryMask pos = make_positive_label(m, p, g);
    const BinaryMask neg = make_negative_label(m, std::vector<PointPrompt>{{40, 70, Polarity::negative}}, g);
    for (int r = 0; r < 128; ++r) {
        for (int c = 0; c < 128; ++c) {
            const bool inside = r >= 32 && r < 64 && c >= 64 && c < 96;
            CHECK(pos(r, c) == (inside ? m(r, c) : 0));
            CHECK(neg(r, c) == (inside ? 0 : m(r, c)));
        }
    }
}

TEST_CASE("labels: empty and full prompt sets") {
    std::mt19937_64 rng(2);
    const BinaryMask m = oracle::random_mask(64, 96, 0.4, rng);
    const PatchGrid g(32, 32, 64, 96);
    CHECK(make_positive_label(m, {}, g).count() == 0);
    CHECK(make_negative_label(m, {}, g) == m);
    std::vector<PointPrompt> every;
    for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) every.push_back({i * 32 + 5, j * 32 + 7});
    CHECK(make_positive_label(m, every, g) == m);
    CHECK(make_negative_label(m, every, g).count() == 0);
}

TEST_CASE("labels: partition identities") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
        const BinaryMask m = oracle::random_mask(96, 80, 0.3, rng);
        const PatchGrid g(16, 24, 96, 80);
        std::vector<PointPrompt> pp, np;
        for (int i = 0; i < g.rows(); ++i) {
            for (int j = 0; j < g.cols(); ++j) {
                const PixelRect r = patch_pixels({i, j}, g);
                (rng() % 2 ? pp : np).push_back({r.row_begin, r.col_begin});
            }
        }
        const BinaryMask pos = make_positive_label(m, pp, g);
        const BinaryMask neg = make_negative_label(m, np, g);
        // Every patch is prompted, so both labels keep M exactly on the positive patches.
        CHECK(pos == neg);
        const BinaryMask removed = removed_region(m, neg);
        CHECK((removed | neg) == m);
        CHECK((removed & neg).count() == 0);
        const auto idx = patches_of(pp, g);
        CHECK(pos == (m & patch_union_mask(idx, g)));
    }
}

TEST_CASE("labels: dimension mismatch and bad negative label") {
    const BinaryMask m(64, 64, 1);
    const PatchGrid g(32, 32, 32, 32);
    CHECK_THROWS_AS(make_positive_label(m, {}, g), InvalidArgument);
    const BinaryMask outside(64, 64, 0);
    BinaryMask not_subset(64, 64, 1);
    CHECK_THROWS_AS(removed_region(outside, not_subset), InvalidArgument);
}

TEST_CASE("morphology: small worked examples") {
    BinaryMask dot(9, 9);
    dot.set(4, 4, true);
    CHECK(erode(dot, 1) == dot);
    CHECK(erode(dot, 3).count() == 0);
    const BinaryMask d = dilate(dot, 3);
    CHECK(d.count() == 9);
    CHECK(d(3, 3) == 1);
    CHECK(d(5, 5) == 1);

    BinaryMask corner(5, 5);
    corner.set(0, 0, true);
    CHECK(dilate(corner, 3).count() == 4);

    BinaryMask square(11, 11);
    for (int r = 3; r < 8; ++r)
        for (int c = 3; c < 8; ++c) square.set(r, c, true);
    const BinaryMask e = erode(square, 3);
    CHECK(e.count() == 9);
    CHECK(e(4, 4) == 1);
    CHECK(e(6, 6) == 1);
    CHECK(opening(square, 3) == square);
    CHECK(opening(square, 7).count() == 0);

    CHECK_THROWS_AS(erode(dot, 2), InvalidArgument);
    CHECK_THROWS_AS(dilate(dot, 0), InvalidArgument);
}

TEST_CASE("morphology: pooling equals the pixel scan") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 40; ++t) {
        const int h = 1 + static_cast<int>(rng() % 60), w = 1 + static_cast<int>(rng() % 60);
        const BinaryMask m = oracle::blobby_mask(h, w, rng);
        for (int k : {1, 3, 5, 7, 9}) {
            CHECK(erode(m, k) == oracle::naive_erode(m, k));
            CHECK(dilate(m, k) == oracle::naive_dilate(m, k));
            const BinaryMask o = opening(m, k);
            CHECK(opening(o, k) == o);
            CHECK(o.subset_of(m));
        }
    }
}

TEST_CASE("error maps") {
    std::mt19937_64 rng(5);
    const BinaryMask t = oracle::random_mask(20, 30, 0.5, rng);
    const BinaryMask zero(20, 30), one(20, 30, 1);
    CHECK(error_maps(t, t).fnm.count() == 0);
    CHECK(error_maps(t, t).fpm.count() == 0);
    CHECK(error_maps(zero, t).fnm == t);
    CHECK(error_maps(zero, t).fpm.count() == 0);
    CHECK(error_maps(one, t).fpm == ~t);
    CHECK_THROWS_AS(error_maps(BinaryMask(20, 31), t), InvalidArgument);
}

TEST_CASE("prompt generation: nearest-to-center placement") {
    const PatchGrid g(32, 32, 64, 64);
    ErrorMaps errs{BinaryMask(64, 64), BinaryMask(64, 64)};
    // A 4x4 block in patch (0,0) and another in patch (1,1).
    for (int r = 10; r < 14; ++r)
        for (int c = 20; c < 24; ++c) errs.fnm.set(r, c, true);
    for (int r = 40; r < 44; ++r)
        for (int c = 40; c < 44; ++c) errs.fnm.set(r, c, true);
    const PromptBatch b = generate_prompts(errs, {3, 7, 1}, g);
    REQUIRE(b.positives.size() == 2);
    CHECK(b.negatives.empty());
    // Patch center of (0,0) is (15.5, 15.5); nearest block pixel is (13, 20).
    CHECK(b.positives[0] == PointPrompt{13, 20, Polarity::positive});
    CHECK(b.positives[1] == PointPrompt{43, 43, Polarity::positive});
    const PromptBatch b4 = generate_prompts(errs, {3, 7, 4}, g);
    CHECK(b4.positives.size() == 8);
    for (const auto& p : b4.positives) CHECK(errs.fnm(p.h, p.w) == 1);
    // A kernel wider than the blocks removes them.
    CHECK(generate_prompts(errs, {5, 7, 1}, g).positives.empty());
    CHECK_THROWS_AS(generate_prompts(errs, {2, 7, 1}, g), InvalidArgument);
    CHECK_THROWS_AS(generate_prompts(errs, {3, 7, 0}, g), InvalidArgument);
}

TEST_CASE("sampler: counts follow the draw formula") {
    Rng rng(6);
    const SamplerConfig cfg;
    std::set<int> seen;
    for (int i = 0; i < 5000; ++i) {
        const PromptCounts c = draw_counts(cfg, rng);
        CHECK(c.total >= 0);
        CHECK(c.total <= 46);
        CHECK(c.positives + c.negatives == c.total);
        CHECK(c.positives >= 0);
        seen.insert(c.total);
    }
    // max(0, 20 + U{-26..26}) reaches both ends.
    CHECK(seen.count(0) == 1);
    CHECK(seen.count(46) == 1);

    SamplerConfig fixed{10, 0.3, 0.0, 0.0};
    const PromptCounts c = draw_counts(fixed, rng);
    CHECK(c.total == 10);
    CHECK(c.positives == 3);
    CHECK_THROWS_AS(draw_counts(SamplerConfig{-1, 0.5, 1.0, 1.0}, rng), InvalidArgument);
}

TEST_CASE("sampler: points are foreground, distinct per polarity, truncated") {
    Rng rng(7);
    BinaryMask m(16, 16);
    for (int c = 0; c < 16; ++c) m.set(5, c, true);
    const PromptBatch b = sample_points(m, 10, 40, rng);
    CHECK(b.positives.size() == 10);
    CHECK(b.negatives.size() == 16);
    std::set<std::pair<int, int>> uniq;
    for (const auto& p : b.positives) {
        CHECK(m(p.h, p.w) == 1);
        CHECK(p.polarity == Polarity::positive);
        uniq.insert({p.h, p.w});
    }
    CHECK(uniq.size() == 10);
    for (const auto& p : b.negatives) CHECK(p.polarity == Polarity::negative);
    CHECK(sample_points(BinaryMask(4, 4), 3, 3, rng).empty());
}

TEST_CASE("sampler: same seed, same prompts") {
    std::mt19937_64 mr(8);
    const BinaryMask m = oracle::random_mask(64, 64, 0.2, mr);
    Rng a(99), b(99);
    CHECK(sample_points(m, 12, 7, a) == sample_points(m, 12, 7, b));
}
