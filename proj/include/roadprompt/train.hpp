#pragma once

#include "roadprompt/data.hpp"
#include "roadprompt/loss.hpp"
#include "roadprompt/net.hpp"
#include "roadprompt/sampler.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace roadprompt {

/// base * (1 - iter / max_iter)^power. Rejects iter outside [0, max_iter].
double poly_lr(double base, std::int64_t iter, std::int64_t max_iter, double power);

struct AugmentConfig {
    bool flip = true;
    bool rotate = true; // multiples of 90 degrees
    bool jitter = true;
    double brightness = 0.15;
    double contrast = 0.15;
    double saturation = 0.15;
};

/// Same geometric transform on both; color jitter on the image only.
std::pair<Image, BinaryMask> augment(const Image& image, const BinaryMask& mask, const AugmentConfig& cfg, Rng& rng);

Image flip_horizontal(const Image& image);
BinaryMask flip_horizontal(const BinaryMask& mask);
/// Quarter turns clockwise.
Image rotate90(const Image& image, int quarter_turns);
BinaryMask rotate90(const BinaryMask& mask, int quarter_turns);

struct TrainConfig {
    int epochs = 10;
    int batch_size = 4;
    double lr_decoders = 1e-5; // automatic + high-recall decoders
    double lr_prompted = 1e-4; // prompted decoder, fusion head, adapters
    /// Rate for a trainable (toy) encoder; unset means lr_prompted.
    std::optional<double> lr_encoder;
    double poly_power = 3.0;
    double weight_decay = 0.0;
    int patch_h = 32;
    int patch_w = 32;
    SamplerConfig sampler;
    LossConfig loss;
    AugmentConfig augment;
    std::uint64_t seed = 0;
    BackboneSpec backbone;
    /// Share of training images held out when the dataset has no val split.
    double holdout_fraction = 0.1;

    void validate() const;
    ModelConfig model_config() const;
    double encoder_rate() const { return lr_encoder.value_or(lr_prompted); }
};

/// JSON object with the TrainConfig field names; absent keys keep defaults,
/// unknown keys are rejected.
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig load_train_config(const std::filesystem::path& path);

struct TrainState {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    double best_val_iou = -1.0;
    /// Textual engine state (operator<< form).
    std::string rng_state;
};

struct StepRecord {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    double total = 0.0;
    std::array<double, 5> parts{};
    double lr_decoders = 0.0;
    double lr_prompted = 0.0;

    std::string to_json() const;
};

class TrainingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// One training sample at model input resolution; `index` is reported in
/// diagnostics.
struct Sample {
    Image image;
    BinaryMask mask;
    std::size_t index = 0;
};

/// Owns the model, optimizer and training RNG.
class Trainer {
  public:
    Trainer(TrainConfig cfg, std::int64_t max_iter);
    Trainer(TrainConfig cfg, std::int64_t max_iter, RoadModel model);

    /// Samples prompts, builds labels, runs all heads, and applies one
    /// optimizer update over the batch with per-group poly rates.
    StepRecord train_step(std::span<const Sample> batch);

    RoadModel& model() { return model_; }
    const RoadModel& model() const { return model_; }
    const TrainConfig& config() const { return cfg_; }
    TrainState& state() { return state_; }
    Rng& rng() { return rng_; }
    std::int64_t max_iter() const { return max_iter_; }

    /// Weights, optimizer moments and TrainState in one checkpoint.
    void save(const std::filesystem::path& path) const;
    static Trainer resume(const std::filesystem::path& path, const TrainConfig& cfg, std::int64_t max_iter);

  private:
    TrainConfig cfg_;
    std::int64_t max_iter_;
    RoadModel model_;
    nn::AdamW optimizer_;
    TrainState state_;
    Rng rng_;
};

struct EpochRecord {
    std::int64_t epoch = 0;
    double mean_loss = 0.0;
    double val_iou = 0.0;    // percent
    double val_recall = 0.0; // percent
    double val_highrecall_recall = 0.0;
};

struct FitResult {
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
    std::filesystem::path log;
    double best_val_iou = 0.0;
    std::vector<EpochRecord> epochs;
};

struct FitOptions {
    std::filesystem::path out_dir;
    /// Called after each epoch; for progress output.
    std::function<void(const EpochRecord&)> on_epoch;
    /// Caps on images read per split; 0 means all.
    std::size_t max_train = 0;
    std::size_t max_val = 0;
    /// Ends training after the first epoch whose validation IoU (percent)
    /// reaches this value.
    std::optional<double> stop_at_val_iou;
};

/// Trains on the dataset's train split and validates Stage-1 IoU on its val
/// split each epoch. Writes best.ckpt, last.ckpt and train_log.jsonl under
/// out_dir. epochs == 0 writes the initialization as both checkpoints.
FitResult fit(const DatasetManifest& data, const TrainConfig& cfg, const FitOptions& opts);

} // namespace roadprompt
