// Command-line entry point: data generation, training, evaluation, refinement
// simulation, kernel/density sweeps and the HTTP service.

#include "roadprompt/pipeline.hpp"
#include "roadprompt/serve.hpp"
#include "roadprompt/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace roadprompt;
using nlohmann::json;

namespace {

// Reports go to stdout, or to out_dir/name when a directory is given.
void emit(const std::string& text, const std::string& out_dir, const std::string& name) {
    if (out_dir.empty()) {
        std::cout << text;
        if (!text.empty() && text.back() != '\n') std::cout << '\n';
        return;
    }
    std::filesystem::create_directories(out_dir);
    const auto path = std::filesystem::path(out_dir) / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    std::printf("wrote %s\n", path.string().c_str());
}

std::string extension(const std::string& format) { return format == "text" ? "txt" : format; }

std::vector<DatasetEntry> entries_for(const std::string& root, const std::string& split) {
    const DatasetManifest m = load_manifest(root);
    std::vector<DatasetEntry> e = m.split(split_from_string(split));
    if (e.empty()) throw std::runtime_error("no '" + split + "' images under " + root);
    return e;
}

std::string render(std::span<const RefinementReport> rows, const std::string& format) {
    if (format == "json") return reports_to_json(rows);
    if (format == "csv") return reports_to_csv(rows);
    return reports_to_text(rows);
}

json metrics_json(const MetricReport& m) {
    return {{"precision", m.precision}, {"recall", m.recall}, {"iou", m.iou}, {"f1", m.f1}};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Patch-constrained promptable road segmentation toolkit"};
    app.require_subcommand(1);

    // gen-data
    SyntheticSpec spec;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "Render a synthetic road corpus with an 80/10/10 split");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--count", spec.count, "Number of scenes")->capture_default_str();
    gen->add_option("--size", spec.image_size, "Square image side")->capture_default_str();
    gen->add_option("--seed", spec.seed, "Scene seed")->capture_default_str();
    gen->add_option("--texture-seed", spec.texture_seed, "Background texture seed")->capture_default_str();
    gen->add_option("--min-roads", spec.min_roads)->capture_default_str();
    gen->add_option("--max-roads", spec.max_roads)->capture_default_str();
    gen->add_option("--min-width", spec.min_width)->capture_default_str();
    gen->add_option("--max-width", spec.max_width)->capture_default_str();
    gen->add_option("--low-contrast", spec.low_contrast_fraction, "Share of faint roads")->capture_default_str();
    gen->add_option("--max-distractors", spec.max_distractors)->capture_default_str();

    // train
    std::string train_config, train_data, train_out;
    std::optional<int> o_epochs, o_batch;
    std::optional<double> o_lr_dec, o_lr_prompt, o_lr_enc, o_target;
    std::optional<std::uint64_t> o_seed;
    std::size_t max_train = 0, max_val = 0;
    auto* train = app.add_subcommand("train", "Train a model; flags override the config file");
    train->add_option("--config", train_config, "JSON training config")->check(CLI::ExistingFile);
    train->add_option("--data", train_data, "Dataset root")->required()->check(CLI::ExistingDirectory);
    train->add_option("--out", train_out, "Run directory for checkpoints and the log")->required();
    train->add_option("--epochs", o_epochs);
    train->add_option("--batch-size", o_batch);
    train->add_option("--lr-decoders", o_lr_dec);
    train->add_option("--lr-prompted", o_lr_prompt);
    train->add_option("--lr-encoder", o_lr_enc);
    train->add_option("--seed", o_seed);
    train->add_option("--stop-at-iou", o_target, "Stop once validation IoU (percent) reaches this value");
    train->add_option("--max-train", max_train, "Cap on training images (0 = all)");
    train->add_option("--max-val", max_val, "Cap on validation images (0 = all)");

    // eval, simulate and sweep share these.
    std::string ckpt, data_root, split = "test", out, format = "text", strategy = "sum";
    double threshold = kDefaultThreshold;
    auto add_model_flags = [&](CLI::App* sub) {
        sub->add_option("--checkpoint", ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
        sub->add_option("--data", data_root, "Dataset root")->required()->check(CLI::ExistingDirectory);
        sub->add_option("--split", split, "train, val or test")->capture_default_str();
        sub->add_option("--strategy", strategy, "Fusion strategy: sum or mfm")->capture_default_str();
        sub->add_option("--threshold", threshold)->capture_default_str();
        sub->add_option("--out", out, "Directory for the report file instead of stdout");
    };

    auto* eval = app.add_subcommand("eval", "Stage-1 metrics of the automatic, high-recall and final masks");
    add_model_flags(eval);

    OpeningConfig opening;
    auto* simulate = app.add_subcommand("simulate", "Automated prompt refinement: before/after report");
    add_model_flags(simulate);
    simulate->add_option("--fnm-kernel", opening.fnm_kernel)->capture_default_str();
    simulate->add_option("--fpm-kernel", opening.fpm_kernel)->capture_default_str();
    simulate->add_option("--density", opening.density)->capture_default_str();
    simulate->add_option("--format", format, "text, json or csv")->check(CLI::IsMember({"text", "json", "csv"}));

    SweepAxes axes;
    auto* sweep_cmd = app.add_subcommand("sweep", "Refinement report over a kernel x density grid");
    add_model_flags(sweep_cmd);
    sweep_cmd->add_option("--fnm-kernels", axes.fnm_kernels)->delimiter(',')->capture_default_str();
    sweep_cmd->add_option("--densities", axes.densities)->delimiter(',')->capture_default_str();
    sweep_cmd->add_option("--fpm-kernel", axes.fpm_kernel)->capture_default_str();
    sweep_cmd->add_option("--format", format, "text, json or csv")->check(CLI::IsMember({"text", "json", "csv"}));

    std::string host = "127.0.0.1";
    int port = 8080;
    SessionConfig session_cfg;
    int idle_minutes = 30;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP refinement service");
    serve_cmd->add_option("--checkpoint", ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    serve_cmd->add_option("--host", host)->capture_default_str();
    serve_cmd->add_option("--port", port)->capture_default_str();
    serve_cmd->add_option("--idle-minutes", idle_minutes, "Session idle timeout")->capture_default_str();
    serve_cmd->add_option("--max-side", session_cfg.max_side, "Largest accepted image side")->capture_default_str();
    serve_cmd->add_option("--strategy", strategy, "Default fusion strategy")->capture_default_str();
    serve_cmd->add_option("--seed", session_cfg.seed, "Session id seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            spec.validate();
            const DatasetManifest m = generate_synthetic(spec, gen_out);
            std::printf("wrote %zu train, %zu val, %zu test pairs to %s\n", m.split(Split::train).size(),
                        m.split(Split::val).size(), m.split(Split::test).size(), gen_out.c_str());
            return 0;
        }
        if (*train) {
            TrainConfig cfg = train_config.empty() ? TrainConfig{} : load_train_config(train_config);
            if (o_epochs) cfg.epochs = *o_epochs;
            if (o_batch) cfg.batch_size = *o_batch;
            if (o_lr_dec) cfg.lr_decoders = *o_lr_dec;
            if (o_lr_prompt) cfg.lr_prompted = *o_lr_prompt;
            if (o_lr_enc) cfg.lr_encoder = *o_lr_enc;
            if (o_seed) cfg.seed = *o_seed;
            cfg.validate();
            FitOptions opts;
            opts.out_dir = train_out;
            opts.max_train = max_train;
            opts.max_val = max_val;
            opts.stop_at_val_iou = o_target;
            opts.on_epoch = [](const EpochRecord& r) {
                std::printf("epoch %lld  loss %.4f  val IoU %.2f  recall %.2f  high-recall recall %.2f\n",
                            static_cast<long long>(r.epoch), r.mean_loss, r.val_iou, r.val_recall,
                            r.val_highrecall_recall);
                std::fflush(stdout);
            };
            const FitResult res = fit(load_manifest(train_data), cfg, opts);
            std::printf("best val IoU %.2f -> %s\n", res.best_val_iou, res.best_checkpoint.string().c_str());
            return 0;
        }
        const FusionStrategy fusion = fusion_from_string(strategy);
        if (*serve_cmd) {
            auto model = std::make_shared<const RoadModel>(RoadModel::load(ckpt));
            session_cfg.idle_timeout = std::chrono::minutes(idle_minutes);
            session_cfg.default_strategy = fusion;
            SessionStore store(model, session_cfg);
            std::printf("listening on %s:%d\n", host.c_str(), port);
            std::fflush(stdout);
            if (!serve(store, host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
            return 0;
        }

        const RoadModel model = RoadModel::load(ckpt);
        const PairSource data = PairSource::from_entries(entries_for(data_root, split));
        if (*eval) {
            Confusion automatic, highrecall, final_counts;
            for (std::size_t i = 0; i < data.count; ++i) {
                const auto [image, truth] = data.load(i);
                const Stage1Result s1 = stage1(image, model, threshold);
                const StageResult r =
                    refine(s1.embedding, s1.auto_mask, s1.highrecall_mask, {}, model, fusion, threshold);
                automatic += Confusion::of(s1.auto_mask, truth);
                highrecall += Confusion::of(s1.highrecall_mask, truth);
                final_counts += Confusion::of(r.final_mask, truth);
            }
            const json report = {{"images", data.count},
                                 {"split", split},
                                 {"strategy", to_string(fusion)},
                                 {"automatic", metrics_json(report_from(automatic))},
                                 {"highrecall", metrics_json(report_from(highrecall))},
                                 {"final", metrics_json(report_from(final_counts))}};
            emit(report.dump(2), out, "eval.json");
            return 0;
        }
        if (*simulate) {
            opening.validate();
            const RefinementReport r = simulate_refinement(data, model, {opening, fusion, threshold});
            emit(render(std::span(&r, 1), format), out, "simulate." + extension(format));
            return 0;
        }
        if (*sweep_cmd) {
            axes.strategy = fusion;
            axes.threshold = threshold;
            const std::vector<RefinementReport> rows = sweep(data, model, axes);
            emit(render(rows, format), out, "sweep." + extension(format));
            return 0;
        }
    } catch (const std::invalid_argument& e) {
        // Bad flag or config values are usage errors.
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
