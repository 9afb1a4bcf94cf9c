// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
// summary. Exit status is nonzero on infrastructure errors, and on any
// criterion failure only under --strict.

#include "oracles.hpp"
#include "roadprompt/labels.hpp"
#include "roadprompt/serve.hpp"
#include "roadprompt/train.hpp"
#include "tempdir.hpp"

#include <CLI11.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

using namespace roadprompt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- 1: label synthesis ---------------------------------------------------------

Outcome labels_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    int mismatches = 0;
    for (int t = 0; t < 1000; ++t) {
        const int h = std::uniform_int_distribution<int>(1, 160)(rng);
        const int w = std::uniform_int_distribution<int>(1, 160)(rng);
        const int lh = std::uniform_int_distribution<int>(1, 48)(rng);
        const int lw = std::uniform_int_distribution<int>(1, 48)(rng);
        const BinaryMask m = t % 2 ? oracle::random_mask(h, w, 0.3, rng) : oracle::blobby_mask(h, w, rng);
        const PatchGrid grid(lh, lw, h, w);
        std::vector<PointPrompt> pos, neg;
        const int np = std::uniform_int_distribution<int>(0, 12)(rng);
        const int nn = std::uniform_int_distribution<int>(0, 12)(rng);
        std::uniform_int_distribution<int> rr(0, h - 1), cc(0, w - 1);
        for (int k = 0; k < np; ++k) pos.push_back({rr(rng), cc(rng), Polarity::positive});
        for (int k = 0; k < nn; ++k) neg.push_back({rr(rng), cc(rng), Polarity::negative});
        if (make_positive_label(m, pos, grid) != oracle::brute_positive(m, pos, lh, lw)) ++mismatches;
        if (make_negative_label(m, neg, grid) != oracle::brute_negative(m, neg, lh, lw)) ++mismatches;
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 60.0, fmt("1000 triples, %d mismatches, %.1f s", mismatches, secs)};
}

// --- 2: morphology -------------------------------------------------------------

Outcome morphology_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(202);
    int mismatches = 0, not_idempotent = 0;
    for (int t = 0; t < 500; ++t) {
        const int h = std::uniform_int_distribution<int>(1, 256)(rng);
        const int w = std::uniform_int_distribution<int>(1, 256)(rng);
        const int k = 2 * std::uniform_int_distribution<int>(0, 4)(rng) + 1;
        const BinaryMask m = t % 3 == 0 ? oracle::random_mask(h, w, 0.5, rng) : oracle::blobby_mask(h, w, rng);
        const BinaryMask e = erode(m, k), d = dilate(m, k), o = opening(m, k);
        if (e != oracle::naive_erode(m, k)) ++mismatches;
        if (d != oracle::naive_dilate(m, k)) ++mismatches;
        if (o != oracle::naive_dilate(oracle::naive_erode(m, k), k)) ++mismatches;
        if (opening(o, k) != o) ++not_idempotent;
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && not_idempotent == 0 && secs < 120.0,
            fmt("500 masks, %d mismatches, %d non-idempotent openings, %.1f s", mismatches, not_idempotent, secs)};
}

// --- 3: sampler ----------------------------------------------------------------

Outcome sampler_bounds() {
    const SamplerConfig cfg; // 20, 0.5, 1.3, 1.0
    Rng rng(303);
    // Fixed foreground of 150 pixels scattered on a 40x40 canvas.
    Rng mask_rng(7);
    BinaryMask mask(40, 40);
    while (mask.count() < 150)
        mask.set(std::uniform_int_distribution<int>(0, 39)(mask_rng), std::uniform_int_distribution<int>(0, 39)(mask_rng),
                 true);
    std::map<std::pair<int, int>, std::int64_t> hits;
    int bad_n = 0, bad_split = 0, off_fg = 0, duplicates = 0;
    std::int64_t positives = 0;
    for (int draw = 0; draw < 10000; ++draw) {
        const PromptCounts n = draw_counts(cfg, rng);
        if (n.total < 0 || n.total > 46) ++bad_n;
        if (n.positives + n.negatives != n.total || n.positives < 0 || n.negatives < 0) ++bad_split;
        const PromptBatch b = sample_points(mask, n.positives, n.negatives, rng);
        std::set<std::pair<int, int>> seen;
        for (const auto& p : b.positives) {
            if (!mask(p.h, p.w)) ++off_fg;
            if (!seen.insert({p.h, p.w}).second) ++duplicates;
            ++hits[{p.h, p.w}];
            ++positives;
        }
        for (const auto& p : b.negatives)
            if (!mask(p.h, p.w)) ++off_fg;
    }
    const double expected = static_cast<double>(positives) / static_cast<double>(mask.count());
    double chi2 = 0.0;
    for (int r = 0; r < 40; ++r) {
        for (int c = 0; c < 40; ++c) {
            if (!mask(r, c)) continue;
            const auto it = hits.find({r, c});
            const double o = it == hits.end() ? 0.0 : static_cast<double>(it->second);
            chi2 += (o - expected) * (o - expected) / expected;
        }
    }
    const double df = static_cast<double>(mask.count() - 1);
    const double p = boost::math::gamma_q(df / 2.0, chi2 / 2.0);
    const bool ok = bad_n == 0 && bad_split == 0 && off_fg == 0 && duplicates == 0 && p > 0.01;
    return {ok, fmt("10000 draws, N out of range %d, split errors %d, off-foreground %d, duplicates %d, "
                    "chi2=%.1f df=%.0f p=%.3f",
                    bad_n, bad_split, off_fg, duplicates, chi2, df, p)};
}

// --- 4: losses -----------------------------------------------------------------

std::vector<float> random_logits(std::size_t n, Rng& rng) {
    std::normal_distribution<double> d(0.0, 1.5);
    std::vector<float> o(n);
    for (auto& v : o) v = static_cast<float>(d(rng));
    return o;
}

Outcome loss_correctness() {
    Rng rng(404);
    const BinaryMask m = oracle::random_mask(12, 12, 0.35, rng);
    const BinaryMask mn = m & oracle::random_mask(12, 12, 0.5, rng);
    const auto o = random_logits(m.size(), rng);
    std::vector<double> pd(o.size());
    std::vector<float> pf(o.size());
    for (std::size_t i = 0; i < o.size(); ++i) {
        pd[i] = 0.05 + 0.9 * std::uniform_real_distribution<double>(0, 1)(rng);
        pf[i] = static_cast<float>(pd[i]);
    }
    for (std::size_t i = 0; i < o.size(); ++i) pd[i] = pf[i];

    double worst = 0.0;
    // Central differences of the double-precision reference at 20 random probes.
    auto probe = [&](auto&& ref, const std::vector<double>& x, const std::vector<float>& analytic) {
        for (int k = 0; k < 20; ++k) {
            const std::size_t i = rng() % x.size();
            const double h = 1e-5;
            auto plus = x, minus = x;
            plus[i] += h;
            minus[i] -= h;
            const double fd = (ref(plus) - ref(minus)) / (2 * h);
            const double a = analytic[i];
            worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8}));
        }
    };
    std::vector<double> od(o.begin(), o.end());

    probe([&](const std::vector<double>& x) { return oracle::dice(x, m); }, pd, dice_loss(pf, m).grad);
    probe([&](const std::vector<double>& x) { return oracle::focal(x, m); }, pd, focal_loss(pf, m).grad);
    probe([&](const std::vector<double>& x) { return oracle::head(x, m); }, od, head_loss(o, m).grad);
    probe([&](const std::vector<double>& x) { return oracle::negative_region(x, m, mn); }, od,
          negative_region_loss(o, m, mn).grad);
    probe([&](const std::vector<double>& x) { return oracle::highrecall(x, m); }, od, highrecall_loss(o, m).grad);

    int nonzero_off_road = 0;
    const LossValue nr = negative_region_loss(o, m, mn);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (!m.at_flat(i) && nr.grad[i] != 0.0f) ++nonzero_off_road;

    // Composite weights against separately computed components.
    const auto p = oracle::sigmoid_of(o);
    const double head_ref = 0.3 * oracle::dice(p, m) + 0.7 * oracle::focal(p, m);
    const double hr_ref = 0.3 * oracle::dice(p, m) + 0.65 * oracle::focal(p, m) + 0.05 * oracle::recall_only(o, m);
    const double head_err = std::abs(head_loss(o, m).value - head_ref);
    const double hr_err = std::abs(highrecall_loss(o, m).value - hr_ref);

    const bool ok = worst < 1e-3 && nonzero_off_road == 0 && head_err < 1e-6 && hr_err < 1e-6;
    return {ok, fmt("5 losses x 20 probes, worst relative error %.2e, nonzero off-road gradients %d, "
                    "composite errors %.1e / %.1e",
                    worst, nonzero_off_road, head_err, hr_err)};
}

// --- shared trained model ------------------------------------------------------

struct Trained {
    DatasetManifest data;
    std::shared_ptr<const RoadModel> model;
    FitResult fit;
};

TrainConfig load_toy_config(const fs::path& path, std::optional<int> epochs) {
    TrainConfig cfg = load_train_config(path);
    if (epochs) cfg.epochs = *epochs;
    return cfg;
}

SyntheticSpec corpus_spec() {
    SyntheticSpec s;
    s.count = 500;
    s.image_size = 128;
    s.seed = 0;
    return s;
}

// --- 5: patch constraint -------------------------------------------------------

Outcome patch_constraint(const Trained& t) {
    const RoadModel& model = *t.model;
    const double val_iou = t.fit.epochs.empty() ? 0.0 : t.fit.epochs.back().val_iou;
    const auto test = t.data.split(Split::test);
    Rng rng(505);

    // (a) single negative prompts on predicted road.
    double outside_sum = 0.0, removed_sum = 0.0;
    int neg_probes = 0;
    // (b) single positive prompts on true road.
    std::int64_t inside = 0, total = 0;
    int pos_probes = 0;
    for (std::size_t k = 0; (neg_probes < 100 || pos_probes < 100) && k < 100 * test.size(); ++k) {
        const auto [img, truth] = load_pair(test[k % test.size()]);
        const Stage1Result s1 = stage1(img, model);
        const PatchGrid grid = model.grid_for(img.height, img.width);
        auto pick = [&](const BinaryMask& m) -> std::optional<PointPrompt> {
            std::vector<std::size_t> fg;
            for (std::size_t i = 0; i < m.size(); ++i)
                if (m.at_flat(i)) fg.push_back(i);
            if (fg.empty()) return std::nullopt;
            const std::size_t i = fg[rng() % fg.size()];
            return PointPrompt{static_cast<int>(i) / m.width(), static_cast<int>(i) % m.width(), Polarity::positive};
        };
        if (neg_probes < 100) {
            if (auto p = pick(s1.auto_mask)) {
                p->polarity = Polarity::negative;
                const PixelRect r = patch_pixels(patch_of(*p, grid), grid);
                const BinaryMask s2 = stage2_remove(s1.embedding, std::vector<PointPrompt>{*p}, model);
                std::int64_t changed_out = 0, road_in = 0, removed_in = 0;
                for (int y = 0; y < img.height; ++y) {
                    for (int x = 0; x < img.width; ++x) {
                        const bool in = r.contains(y, x);
                        if (!in && s2(y, x) != s1.auto_mask(y, x)) ++changed_out;
                        if (in && s1.auto_mask(y, x)) {
                            ++road_in;
                            if (!s2(y, x)) ++removed_in;
                        }
                    }
                }
                outside_sum += static_cast<double>(changed_out) / static_cast<double>(img.height * img.width);
                removed_sum += static_cast<double>(removed_in) / static_cast<double>(road_in);
                ++neg_probes;
            }
        }
        if (pos_probes < 100) {
            if (auto p = pick(truth)) {
                const PixelRect r = patch_pixels(patch_of(*p, grid), grid);
                const BinaryMask s3 = stage3_add(s1.embedding, std::vector<PointPrompt>{*p}, model);
                for (int y = 0; y < img.height; ++y) {
                    for (int x = 0; x < img.width; ++x) {
                        if (!s3(y, x)) continue;
                        ++total;
                        if (r.contains(y, x)) ++inside;
                    }
                }
                ++pos_probes;
            }
        }
    }
    const double outside = neg_probes ? outside_sum / neg_probes : 1.0;
    const double removed = neg_probes ? removed_sum / neg_probes : 0.0;
    const double inside_frac = total ? static_cast<double>(inside) / static_cast<double>(total) : 1.0;

    // (c) recall of the two Stage-1 heads on the test split.
    const Stage1Evaluation ev = evaluate_stage1(PairSource::from_entries(test), model);
    const double rec_auto = report_from(ev.automatic).recall;
    const double rec_hr = report_from(ev.highrecall).recall;

    const bool trained = val_iou >= 80.0;
    const bool a = neg_probes == 100 && outside < 0.01 && removed >= 0.80;
    const bool b = pos_probes == 100 && inside_frac >= 0.95;
    const bool c = rec_hr >= rec_auto;
    return {trained && a && b && c,
            fmt("val IoU %.2f after %zu epochs [%s]; (a) outside change %.3f%%, removed %.1f%% [%s]; "
                "(b) inside %.1f%% of %lld px [%s]; (c) recall high-recall %.2f vs automatic %.2f [%s]",
                val_iou, t.fit.epochs.size(), trained ? "ok" : "below 80", 100 * outside, 100 * removed,
                a ? "ok" : "fail", 100 * inside_frac, static_cast<long long>(total), b ? "ok" : "fail", rec_hr,
                rec_auto, c ? "ok" : "fail")};
}

// --- 6: refinement gain --------------------------------------------------------

Outcome refinement_gain(const Trained& t) {
    const RefinementConfig cfg{{3, 7, 1}, FusionStrategy::sum, kDefaultThreshold};
    const RefinementReport r = simulate_refinement(PairSource::from_entries(t.data.split(Split::test)), *t.model, cfg);
    const double before = r.before_metrics().iou, after = r.after_metrics().iou;
    return {after - before >= 3.0,
            fmt("IoU %.2f -> %.2f (%+.2f points) with %lld positive and %lld negative prompts on %lld images", before,
                after, after - before, static_cast<long long>(r.positive_prompts),
                static_cast<long long>(r.negative_prompts), static_cast<long long>(r.images))};
}

// --- 7: sweep ------------------------------------------------------------------

Outcome sweep_grid(const Trained& t) {
    const SweepAxes axes; // {1,3,5,7} x {1,2,4}
    const auto rows = sweep(PairSource::from_entries(t.data.split(Split::test)), *t.model, axes);
    std::set<std::pair<int, int>> cells;
    for (const auto& r : rows) cells.insert({r.config.opening.fnm_kernel, r.config.opening.density});
    const bool complete = rows.size() == 12 && cells.size() == 12;
    int violations = 0;
    for (const auto& a : rows) {
        for (const auto& b : rows) {
            if (a.config.opening.density != b.config.opening.density) continue;
            if (a.config.opening.fnm_kernel < b.config.opening.fnm_kernel) {
                if (b.positive_prompts > a.positive_prompts || b.prompts() > a.prompts()) ++violations;
            }
        }
    }
    std::ostringstream counts;
    for (const auto& r : rows)
        counts << (counts.tellp() ? " " : "") << r.config.opening.fnm_kernel << "/" << r.config.opening.density << ":"
               << r.prompts();
    return {complete && violations == 0,
            fmt("%zu rows, %d monotonicity violations; prompts by kernel/density ", rows.size(), violations) +
                counts.str()};
}

// --- 8: determinism ------------------------------------------------------------

Outcome determinism(const Trained& t, const TrainConfig& toy, const fs::path& work) {
    SyntheticSpec spec = corpus_spec();
    spec.count = 40;
    const DatasetManifest a = generate_synthetic(spec, work / "det_a");
    const DatasetManifest b = generate_synthetic(spec, work / "det_b");
    int corpus_diffs = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (read_file(a.entries[i].image) != read_file(b.entries[i].image)) ++corpus_diffs;
        if (read_file(a.entries[i].mask) != read_file(b.entries[i].mask)) ++corpus_diffs;
    }

    std::vector<Sample> samples;
    for (const auto& e : a.split(Split::train)) {
        auto [img, mask] = load_pair(e);
        samples.push_back({std::move(img), std::move(mask), samples.size()});
    }
    auto trace = [&] {
        Trainer tr(toy, 10);
        std::vector<double> out;
        Rng aug(toy.seed);
        for (int step = 0; step < 10; ++step) {
            std::vector<Sample> batch;
            for (int k = 0; k < toy.batch_size; ++k) {
                const Sample& s = samples[(step * toy.batch_size + k) % samples.size()];
                auto [img, mask] = augment(s.image, s.mask, toy.augment, tr.rng());
                batch.push_back({std::move(img), std::move(mask), s.index});
            }
            out.push_back(tr.train_step(batch).total);
        }
        return out;
    };
    const auto t1 = trace(), t2 = trace();

    const PairSource test = PairSource::from_entries(t.data.split(Split::test));
    const RefinementReport r1 = simulate_refinement(test, *t.model, {});
    const RefinementReport r2 = simulate_refinement(test, *t.model, {});
    const bool reports_equal = r1.before == r2.before && r1.after == r2.after && r1.prompts() == r2.prompts() &&
                               reports_to_json(std::span(&r1, 1)) == reports_to_json(std::span(&r2, 1));

    return {corpus_diffs == 0 && t1 == t2 && reports_equal,
            fmt("corpus files differing %d of %zu; 10-step loss traces %s (first %.6f, last %.6f); "
                "simulation reports %s",
                corpus_diffs, 2 * a.size(), t1 == t2 ? "identical" : "DIFFER", t1.front(), t1.back(),
                reports_equal ? "identical" : "DIFFER")};
}

// --- 9: service contract -------------------------------------------------------

Outcome service_contract(const Trained& t) {
    SessionStore store(t.model);
    const auto test = t.data.split(Split::test);
    const auto before_runs = t.model->encoder_invocations();
    Rng rng(909);
    const int sessions = 4;
    int undo_mismatches = 0, encoder_violations = 0, isolation_failures = 0;

    struct Op {
        int kind; // 0 refine, 1 undo, 2 get
        PromptBatch prompts;
    };
    std::vector<std::string> ids;
    std::vector<std::vector<Op>> scripts(sessions);
    std::vector<std::vector<BinaryMask>> stacks(sessions);
    for (int s = 0; s < sessions; ++s) {
        const Image img = load_pair(test[static_cast<std::size_t>(s) % test.size()]).first;
        const SessionView v = store.create(img);
        ids.push_back(v.id);
        stacks[s].push_back(v.result.final_mask);
    }
    // Interleave 20 steps per session.
    for (int step = 0; step < 20; ++step) {
        for (int s = 0; s < sessions; ++s) {
            const std::string& id = ids[s];
            Op op;
            op.kind = static_cast<int>(rng() % 3);
            if (op.kind == 0) {
                std::uniform_int_distribution<int> coord(0, 127);
                const int np = static_cast<int>(rng() % 3), nn = static_cast<int>(rng() % 3);
                for (int k = 0; k < np; ++k) op.prompts.positives.push_back({coord(rng), coord(rng), Polarity::positive});
                for (int k = 0; k < nn; ++k) op.prompts.negatives.push_back({coord(rng), coord(rng), Polarity::negative});
                stacks[s].push_back(store.refine(id, op.prompts).result.final_mask);
            } else if (op.kind == 1) {
                const SessionView v = store.undo(id);
                if (stacks[s].size() > 1) stacks[s].pop_back();
                if (v.result.final_mask != stacks[s].back()) ++undo_mismatches;
                if (store.mask(id, MaskKind::final) != stacks[s].back()) ++undo_mismatches;
            } else {
                if (store.view(id).result.final_mask != stacks[s].back()) ++undo_mismatches;
            }
            scripts[s].push_back(std::move(op));
            if (store.encoder_runs(id) != 1) ++encoder_violations;
        }
    }
    const auto runs = t.model->encoder_invocations() - before_runs;
    if (runs != sessions) ++encoder_violations;

    // Each session alone in a fresh store ends where the interleaved one did.
    for (int s = 0; s < sessions; ++s) {
        SessionStore solo(t.model);
        const Image img = load_pair(test[static_cast<std::size_t>(s) % test.size()]).first;
        const std::string id = solo.create(img).id;
        for (const Op& op : scripts[s]) {
            if (op.kind == 0) solo.refine(id, op.prompts);
            if (op.kind == 1) solo.undo(id);
        }
        for (MaskKind k : {MaskKind::automatic, MaskKind::highrecall, MaskKind::stage2, MaskKind::stage3,
                           MaskKind::final}) {
            if (solo.mask(id, k) != store.mask(ids[s], k)) ++isolation_failures;
        }
    }
    const bool ok = undo_mismatches == 0 && encoder_violations == 0 && isolation_failures == 0;
    return {ok, fmt("%d sessions x 20 interleaved steps: encoder runs %lld, encoder violations %d, undo/get "
                    "mismatches %d, isolation failures %d",
                    sessions, static_cast<long long>(runs), encoder_violations, undo_mismatches, isolation_failures)};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance run"};
    std::string config_path = ROADPROMPT_TOY_CONFIG;
    std::string workdir;
    std::optional<int> epochs;
    std::optional<double> stop_at;
    bool strict = false;
    app.add_option("--config", config_path, "Toy training config")->check(CLI::ExistingFile);
    app.add_option("--workdir", workdir, "Keep corpus and checkpoints here instead of a temporary directory");
    app.add_option("--epochs", epochs, "Override the config's epoch count");
    app.add_option("--stop-at-iou", stop_at, "Stop training once validation IoU (percent) reaches this value");
    app.add_flag("--strict", strict, "Exit nonzero when any criterion fails");
    CLI11_PARSE(app, argc, argv);

    std::optional<test::TempDir> tmp;
    fs::path work;
    if (workdir.empty()) {
        tmp.emplace();
        work = tmp->path();
    } else {
        work = workdir;
        fs::create_directories(work);
    }

    int passed = 0, total = 0;
    auto report = [&](int n, const char* name, const std::function<Outcome()>& run) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        ++total;
        if (o.pass) ++passed;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << name << ": " << o.detail
                  << fmt(" (%.1f s)", seconds_since(t0)) << std::endl;
    };

    try {
        report(1, "label synthesis matches brute force", labels_oracle);
        report(2, "morphology matches naive scan", morphology_oracle);
        report(3, "sampler bounds and uniformity", sampler_bounds);
        report(4, "loss gradients and composite weights", loss_correctness);

        const TrainConfig toy = load_toy_config(config_path, epochs);
        const auto t0 = std::chrono::steady_clock::now();
        Trained t;
        const fs::path data_dir = work / "corpus";
        t.data = fs::exists(data_dir / kManifestFile) ? load_manifest(data_dir)
                                                      : generate_synthetic(corpus_spec(), data_dir);
        FitOptions opts{work / "run"};
        opts.stop_at_val_iou = stop_at;
        opts.on_epoch = [](const EpochRecord& e) {
            std::cout << fmt("  epoch %lld: loss %.4f, val IoU %.2f, recall %.2f, high-recall recall %.2f",
                             static_cast<long long>(e.epoch), e.mean_loss, e.val_iou, e.val_recall,
                             e.val_highrecall_recall)
                      << std::endl;
        };
        t.fit = fit(t.data, toy, opts);
        t.model = std::make_shared<const RoadModel>(RoadModel::load(t.fit.last_checkpoint));
        std::cout << fmt("  trained %zu epochs in %.0f s", t.fit.epochs.size(), seconds_since(t0)) << std::endl;

        report(5, "patch-constrained prompts", [&] { return patch_constraint(t); });
        report(6, "refinement gain of at least 3 IoU points", [&] { return refinement_gain(t); });
        report(7, "sweep grid and prompt-count monotonicity", [&] { return sweep_grid(t); });
        report(8, "determinism", [&] { return determinism(t, toy, work); });
        report(9, "service contract", [&] { return service_contract(t); });
    } catch (const std::exception& e) {
        std::cerr << "acceptance run aborted: " << e.what() << std::endl;
        return 2;
    }
    std::cout << "acceptance: " << passed << "/" << total << " criteria passed" << std::endl;
    return strict && passed != total ? 1 : 0;
}
