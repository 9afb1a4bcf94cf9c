#include "roadprompt/train.hpp"

#include "roadprompt/labels.hpp"
#include "roadprompt/pipeline.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace roadprompt {

using json = nlohmann::json;

double poly_lr(double base, std::int64_t iter, std::int64_t max_iter, double power) {
    if (max_iter <= 0) throw InvalidArgument("poly_lr: max_iter must be > 0");
    if (iter < 0 || iter > max_iter) {
        throw InvalidArgument("poly_lr: iter " + std::to_string(iter) + " outside [0, " + std::to_string(max_iter) + "]");
    }
    return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

// --- augmentation ---------------------------------------------------------------

Image flip_horizontal(const Image& image) {
    Image out(image.height, image.width);
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            for (int ch = 0; ch < 3; ++ch) out.at(r, image.width - 1 - c, ch) = image.at(r, c, ch);
        }
    }
    return out;
}

BinaryMask flip_horizontal(const BinaryMask& mask) {
    BinaryMask out(mask.height(), mask.width());
    for (int r = 0; r < mask.height(); ++r) {
        for (int c = 0; c < mask.width(); ++c) out.set(r, mask.width() - 1 - c, mask(r, c));
    }
    return out;
}

namespace {

// Destination of (r, c) after `turns` clockwise quarter turns of an h x w grid.
std::pair<int, int> rotated(int r, int c, int h, int w, int turns) {
    switch (turns) {
    case 1: return {c, h - 1 - r};
    case 2: return {h - 1 - r, w - 1 - c};
    case 3: return {w - 1 - c, r};
    default: return {r, c};
    }
}

int normalize_turns(int t) { return ((t % 4) + 4) % 4; }

} // namespace

Image rotate90(const Image& image, int quarter_turns) {
    const int t = normalize_turns(quarter_turns);
    const bool swap = t % 2 == 1;
    Image out(swap ? image.width : image.height, swap ? image.height : image.width);
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            const auto [nr, nc] = rotated(r, c, image.height, image.width, t);
            for (int ch = 0; ch < 3; ++ch) out.at(nr, nc, ch) = image.at(r, c, ch);
        }
    }
    return out;
}

BinaryMask rotate90(const BinaryMask& mask, int quarter_turns) {
    const int t = normalize_turns(quarter_turns);
    const bool swap = t % 2 == 1;
    BinaryMask out(swap ? mask.width() : mask.height(), swap ? mask.height() : mask.width());
    for (int r = 0; r < mask.height(); ++r) {
        for (int c = 0; c < mask.width(); ++c) {
            const auto [nr, nc] = rotated(r, c, mask.height(), mask.width(), t);
            out.set(nr, nc, mask(r, c));
        }
    }
    return out;
}

std::pair<Image, BinaryMask> augment(const Image& image, const BinaryMask& mask, const AugmentConfig& cfg, Rng& rng) {
    if (image.height != mask.height() || image.width != mask.width()) {
        throw InvalidArgument("augment: image and mask dims differ");
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Image img = image;
    BinaryMask m = mask;
    if (cfg.flip && unit(rng) < 0.5) {
        img = flip_horizontal(img);
        m = flip_horizontal(m);
    }
    if (cfg.rotate) {
        const int turns = std::uniform_int_distribution<int>(0, 3)(rng);
        img = rotate90(img, turns);
        m = rotate90(m, turns);
    }
    if (cfg.jitter) {
        const auto factor = [&](double spread) { return 1.0 + spread * (2.0 * unit(rng) - 1.0); };
        const double b = factor(cfg.brightness), c = factor(cfg.contrast), s = factor(cfg.saturation);
        const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
        std::vector<double> px(n * 3);
        double mean = 0.0;
        for (std::size_t i = 0; i < n * 3; ++i) {
            px[i] = img.rgb[i] * b;
            mean += px[i];
        }
        mean /= static_cast<double>(n * 3);
        for (std::size_t i = 0; i < n; ++i) {
            double* p = &px[i * 3];
            const double gray = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            for (int ch = 0; ch < 3; ++ch) {
                double v = gray + s * (p[ch] - gray);
                v = mean + c * (v - mean);
                img.rgb[i * 3 + ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return {std::move(img), std::move(m)};
}

// --- configuration --------------------------------------------------------------

void TrainConfig::validate() const {
    if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (lr_decoders < 0 || lr_prompted < 0 || (lr_encoder && *lr_encoder < 0)) {
        throw InvalidArgument("learning rates must be >= 0");
    }
    if (poly_power < 0) throw InvalidArgument("poly_power must be >= 0");
    if (weight_decay < 0) throw InvalidArgument("weight_decay must be >= 0");
    if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0) throw InvalidArgument("holdout_fraction must lie in (0, 1)");
    sampler.validate();
    loss.validate();
    model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.backbone = backbone;
    m.patch_h = patch_h;
    m.patch_w = patch_w;
    m.seed = seed;
    return m;
}

namespace {

template <typename T>
void take(json& obj, const char* key, T& dst) {
    if (auto it = obj.find(key); it != obj.end()) {
        dst = it->get<T>();
        obj.erase(it);
    }
}

void reject_leftovers(const json& obj, const std::string& where) {
    if (obj.empty()) return;
    std::string keys;
    for (auto it = obj.begin(); it != obj.end(); ++it) keys += (keys.empty() ? "" : ", ") + it.key();
    throw InvalidArgument("unknown " + where + " key(s): " + keys);
}

} // namespace

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
    TrainConfig cfg;
    try {
        take(j, "epochs", cfg.epochs);
        take(j, "batch_size", cfg.batch_size);
        take(j, "lr_decoders", cfg.lr_decoders);
        take(j, "lr_prompted", cfg.lr_prompted);
        if (auto it = j.find("lr_encoder"); it != j.end()) {
            if (!it->is_null()) cfg.lr_encoder = it->get<double>();
            j.erase(it);
        }
        take(j, "poly_power", cfg.poly_power);
        take(j, "weight_decay", cfg.weight_decay);
        take(j, "patch_h", cfg.patch_h);
        take(j, "patch_w", cfg.patch_w);
        take(j, "base_points", cfg.sampler.base_points);
        take(j, "positive_ratio", cfg.sampler.positive_ratio);
        take(j, "delta_n", cfg.sampler.delta_n);
        take(j, "delta_r", cfg.sampler.delta_r);
        take(j, "dice_weight", cfg.loss.dice_weight);
        take(j, "focal_weight", cfg.loss.focal_weight);
        take(j, "hr_dice", cfg.loss.hr_dice);
        take(j, "hr_focal", cfg.loss.hr_focal);
        take(j, "hr_recall", cfg.loss.hr_recall);
        take(j, "alphas", cfg.loss.alphas);
        take(j, "focal_gamma", cfg.loss.focal_gamma);
        take(j, "focal_balance", cfg.loss.focal_balance);
        take(j, "dice_eps", cfg.loss.dice_eps);
        take(j, "seed", cfg.seed);
        take(j, "holdout_fraction", cfg.holdout_fraction);
        if (auto it = j.find("augment"); it != j.end()) {
            json a = *it;
            j.erase(it);
            take(a, "flip", cfg.augment.flip);
            take(a, "rotate", cfg.augment.rotate);
            take(a, "jitter", cfg.augment.jitter);
            take(a, "brightness", cfg.augment.brightness);
            take(a, "contrast", cfg.augment.contrast);
            take(a, "saturation", cfg.augment.saturation);
            reject_leftovers(a, "augment");
        }
        if (auto it = j.find("backbone"); it != j.end()) {
            json b = *it;
            j.erase(it);
            if (b.is_string()) {
                cfg.backbone = backbone_from_string(b.get<std::string>()) == BackboneVariant::toy
                                   ? BackboneSpec::toy()
                                   : BackboneSpec::foundation();
            } else {
                std::string variant = "toy";
                take(b, "variant", variant);
                cfg.backbone = backbone_from_string(variant) == BackboneVariant::toy ? BackboneSpec::toy()
                                                                                     : BackboneSpec::foundation();
                take(b, "adapter_rank", cfg.backbone.adapter_rank);
                take(b, "adapter_scale", cfg.backbone.adapter_scale);
                take(b, "native_size", cfg.backbone.native_size);
                reject_leftovers(b, "backbone");
            }
        }
    } catch (const json::type_error& e) {
        throw InvalidArgument(std::string("config value has the wrong type: ") + e.what());
    }
    reject_leftovers(j, "config");
    cfg.validate();
    return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json j{{"epochs", cfg.epochs},
           {"batch_size", cfg.batch_size},
           {"lr_decoders", cfg.lr_decoders},
           {"lr_prompted", cfg.lr_prompted},
           {"lr_encoder", cfg.lr_encoder ? json(*cfg.lr_encoder) : json(nullptr)},
           {"poly_power", cfg.poly_power},
           {"weight_decay", cfg.weight_decay},
           {"patch_h", cfg.patch_h},
           {"patch_w", cfg.patch_w},
           {"base_points", cfg.sampler.base_points},
           {"positive_ratio", cfg.sampler.positive_ratio},
           {"delta_n", cfg.sampler.delta_n},
           {"delta_r", cfg.sampler.delta_r},
           {"dice_weight", cfg.loss.dice_weight},
           {"focal_weight", cfg.loss.focal_weight},
           {"hr_dice", cfg.loss.hr_dice},
           {"hr_focal", cfg.loss.hr_focal},
           {"hr_recall", cfg.loss.hr_recall},
           {"alphas", cfg.loss.alphas},
           {"focal_gamma", cfg.loss.focal_gamma},
           {"focal_balance", cfg.loss.focal_balance},
           {"dice_eps", cfg.loss.dice_eps},
           {"seed", cfg.seed},
           {"holdout_fraction", cfg.holdout_fraction},
           {"augment",
            {{"flip", cfg.augment.flip},
             {"rotate", cfg.augment.rotate},
             {"jitter", cfg.augment.jitter},
             {"brightness", cfg.augment.brightness},
             {"contrast", cfg.augment.contrast},
             {"saturation", cfg.augment.saturation}}},
           {"backbone",
            {{"variant", to_string(cfg.backbone.variant)},
             {"adapter_rank", cfg.backbone.adapter_rank},
             {"adapter_scale", cfg.backbone.adapter_scale},
             {"native_size", cfg.backbone.native_size}}}};
    return j.dump(2);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return train_config_from_json(ss.str());
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    }
}

std::string StepRecord::to_json() const {
    json j{{"type", "step"}, {"step", step}, {"epoch", epoch}, {"total", total}};
    for (std::size_t i = 0; i < parts.size(); ++i) j[kLossNames[i]] = parts[i];
    j["lr_decoders"] = lr_decoders;
    j["lr_prompted"] = lr_prompted;
    return j.dump();
}

// --- trainer ----------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, std::int64_t max_iter) : Trainer(cfg, max_iter, RoadModel(cfg.model_config())) {}

Trainer::Trainer(TrainConfig cfg, std::int64_t max_iter, RoadModel model)
    : cfg_(std::move(cfg)), max_iter_(max_iter), model_(std::move(model)),
      optimizer_(nn::AdamWConfig{0.9, 0.999, 1e-8, cfg_.weight_decay}), rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL) {
    cfg_.validate();
    if (max_iter_ < 1) throw InvalidArgument("trainer needs max_iter >= 1");
}

StepRecord Trainer::train_step(std::span<const Sample> batch) {
    if (batch.empty()) throw InvalidArgument("train_step: empty batch");
    model_.zero_grad();
    StepRecord rec;
    rec.step = state_.step;
    rec.epoch = state_.epoch;
    const float scale = 1.0f / static_cast<float>(batch.size());
    for (const Sample& s : batch) {
        const PatchGrid grid = model_.grid_for(s.mask.height(), s.mask.width());
        const PromptCounts counts = draw_counts(cfg_.sampler, rng_);
        const PromptBatch prompts = sample_points(s.mask, counts.positives, counts.negatives, rng_);
        const LabelPair labels = make_labels(s.mask, prompts.positives, prompts.negatives, grid);
        const TrainForward fwd = model_.forward_train(s.image, prompts.positives, prompts.negatives);
        const auto& o = fwd.outputs;
        TotalLoss tl = total_loss({o.automatic.span(), o.prompted.span(), o.highrecall.span(), o.fused->span()}, s.mask,
                                  labels.positive, labels.negative, cfg_.loss);
        if (!std::isfinite(tl.total)) {
            std::string indices;
            for (const Sample& b : batch) indices += (indices.empty() ? "" : ", ") + std::to_string(b.index);
            std::ostringstream msg;
            msg << "non-finite loss at step " << state_.step << " on sample " << s.index << "; batch indices ["
                << indices << "]; components";
            for (std::size_t i = 0; i < tl.parts.size(); ++i) msg << ' ' << kLossNames[i] << '=' << tl.parts[i];
            throw TrainingError(msg.str());
        }
        for (auto* g : {&tl.grad_automatic, &tl.grad_prompted, &tl.grad_highrecall, &tl.grad_fused}) {
            for (auto& v : *g) v *= scale;
        }
        model_.backward(fwd, HeadGradients{std::move(tl.grad_automatic), std::move(tl.grad_prompted),
                                           std::move(tl.grad_highrecall), std::move(tl.grad_fused)});
        rec.total += tl.total * scale;
        for (std::size_t i = 0; i < rec.parts.size(); ++i) rec.parts[i] += tl.parts[i] * scale;
    }
    const std::int64_t it = std::min(state_.step, max_iter_);
    rec.lr_decoders = poly_lr(cfg_.lr_decoders, it, max_iter_, cfg_.poly_power);
    rec.lr_prompted = poly_lr(cfg_.lr_prompted, it, max_iter_, cfg_.poly_power);
    const double lr_enc = poly_lr(cfg_.encoder_rate(), it, max_iter_, cfg_.poly_power);
    optimizer_.step(model_.parameters(), {rec.lr_decoders, rec.lr_prompted, lr_enc});
    ++state_.step;
    return rec;
}

void Trainer::save(const std::filesystem::path& path) const {
    std::ostringstream rng_text;
    rng_text << rng_;
    const json extra{{"train_state",
                      {{"step", state_.step},
                       {"epoch", state_.epoch},
                       {"best_val_iou", state_.best_val_iou},
                       {"rng", rng_text.str()},
                       {"optimizer_steps", optimizer_.steps()},
                       {"max_iter", max_iter_}}},
                     {"config", json::parse(train_config_to_json(cfg_))}};
    model_.save(path, extra.dump(), true);
}

Trainer Trainer::resume(const std::filesystem::path& path, const TrainConfig& cfg, std::int64_t max_iter) {
    std::string extra;
    RoadModel model = RoadModel::load(path, &extra);
    Trainer t(cfg, max_iter, std::move(model));
    if (extra.empty()) return t;
    const json j = json::parse(extra);
    if (!j.contains("train_state")) return t;
    const auto& s = j.at("train_state");
    t.state_.step = s.at("step").get<std::int64_t>();
    t.state_.epoch = s.at("epoch").get<std::int64_t>();
    t.state_.best_val_iou = s.at("best_val_iou").get<double>();
    t.state_.rng_state = s.at("rng").get<std::string>();
    std::istringstream in(t.state_.rng_state);
    in >> t.rng_;
    t.optimizer_.set_steps(s.at("optimizer_steps").get<std::int64_t>());
    return t;
}

// --- fit ----------------------------------------------------------------------------

FitResult fit(const DatasetManifest& data, const TrainConfig& cfg, const FitOptions& opts) {
    cfg.validate();
    std::vector<DatasetEntry> train = data.split(Split::train);
    std::vector<DatasetEntry> val = data.split(Split::val);
    if (train.empty()) throw InvalidArgument("fit: dataset has no training images under " + data.root.string());
    if (val.empty()) {
        // Hold out the tail of the training list.
        const auto hold = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(cfg.holdout_fraction * static_cast<double>(train.size()))));
        if (hold >= train.size()) throw InvalidArgument("fit: too few images to hold out a validation set");
        val.assign(train.end() - static_cast<std::ptrdiff_t>(hold), train.end());
        train.resize(train.size() - hold);
    }
    if (opts.max_train && train.size() > opts.max_train) train.resize(opts.max_train);
    if (opts.max_val && val.size() > opts.max_val) val.resize(opts.max_val);

    const auto batches_per_epoch =
        static_cast<std::int64_t>((train.size() + static_cast<std::size_t>(cfg.batch_size) - 1) / cfg.batch_size);
    const std::int64_t max_iter = std::max<std::int64_t>(1, batches_per_epoch * cfg.epochs);
    Trainer trainer(cfg, max_iter);

    std::vector<Sample> pool;
    pool.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        auto [img, mask] = load_pair(train[i]);
        auto [pimg, pmask] = trainer.model().prepare_pair(img, mask);
        pool.push_back({std::move(pimg), std::move(pmask), i});
    }
    std::vector<std::pair<Image, BinaryMask>> val_pairs;
    for (const auto& e : val) val_pairs.push_back(load_pair(e));
    const PairSource val_source = PairSource::from_pairs(val_pairs);

    std::filesystem::create_directories(opts.out_dir);
    FitResult result;
    result.best_checkpoint = opts.out_dir / "best.ckpt";
    result.last_checkpoint = opts.out_dir / "last.ckpt";
    result.log = opts.out_dir / "train_log.jsonl";
    std::ofstream log(result.log, std::ios::trunc);
    if (!log) throw InvalidArgument("cannot write " + result.log.string());

    if (cfg.epochs == 0) {
        trainer.save(result.best_checkpoint);
        trainer.save(result.last_checkpoint);
        return result;
    }

    std::vector<std::size_t> order(pool.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        trainer.state().epoch = epoch;
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), trainer.rng());
        double loss_sum = 0.0;
        std::int64_t steps = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<Sample> batch;
            for (std::size_t k = at; k < std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size)); ++k) {
                const Sample& s = pool[order[k]];
                auto [img, mask] = augment(s.image, s.mask, cfg.augment, trainer.rng());
                batch.push_back({std::move(img), std::move(mask), s.index});
            }
            const StepRecord rec = trainer.train_step(batch);
            log << rec.to_json() << '\n';
            loss_sum += rec.total;
            ++steps;
        }
        const Stage1Evaluation ev = evaluate_stage1(val_source, trainer.model());
        EpochRecord er;
        er.epoch = epoch;
        er.mean_loss = loss_sum / static_cast<double>(std::max<std::int64_t>(1, steps));
        er.val_iou = report_from(ev.automatic).iou;
        er.val_recall = report_from(ev.automatic).recall;
        er.val_highrecall_recall = report_from(ev.highrecall).recall;
        log << json{{"type", "epoch"},
                    {"epoch", er.epoch},
                    {"mean_loss", er.mean_loss},
                    {"val_iou", er.val_iou},
                    {"val_recall", er.val_recall},
                    {"val_highrecall_recall", er.val_highrecall_recall}}
                   .dump()
            << '\n';
        log.flush();
        result.epochs.push_back(er);
        if (er.val_iou > trainer.state().best_val_iou) {
            trainer.state().best_val_iou = er.val_iou;
            trainer.save(result.best_checkpoint);
        }
        trainer.state().epoch = epoch + 1;
        trainer.save(result.last_checkpoint);
        if (opts.on_epoch) opts.on_epoch(er);
        if (opts.stop_at_val_iou && er.val_iou >= *opts.stop_at_val_iou) break;
    }
    result.best_val_iou = trainer.state().best_val_iou;
    return result;
}

} // namespace roadprompt
