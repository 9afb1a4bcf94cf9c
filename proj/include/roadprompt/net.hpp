#pragma once

// The segmentation model: one image encoder, a frozen point-prompt encoder,
// three prompt-conditioned mask decoders (automatic, prompted, high-recall)
// and a fusion head over the automatic and prompted decoder features.

#include "roadprompt/grid.hpp"
#include "roadprompt/image.hpp"
#include "roadprompt/nn.hpp"

#include <atomic>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace roadprompt {

enum class BackboneVariant : std::uint8_t { toy, foundation };

const char* to_string(BackboneVariant v);
BackboneVariant backbone_from_string(const std::string& s);

struct BackboneSpec {
    BackboneVariant variant = BackboneVariant::toy;
    /// Low-rank adapter settings on the encoder attention projections; zero rank
    /// means no adapters.
    int adapter_rank = 0;
    double adapter_scale = 0.0;
    /// Square input side the foundation encoder resizes to. Unused by toy.
    int native_size = 0;

    static BackboneSpec toy() { return {}; }
    static BackboneSpec foundation(int native = 1024) { return {BackboneVariant::foundation, 8, 32.0, native}; }
    void validate() const;
};

/// Downsampling factor between input pixels and the encoder feature grid.
inline constexpr int kEncoderStride = 8;

/// Cached encoder output for one image. Decoding any number of prompt sets
/// against it never touches the encoder again.
struct ImageEmbedding {
    nn::Tensor features;       ///< C x H/8 x W/8 over the encoder input
    nn::Tensor pixel_features; ///< high-resolution skip features over the encoder input
    int source_height = 0;     ///< original image dims
    int source_width = 0;
    int input_height = 0;      ///< encoder input dims (padded or resized)
    int input_width = 0;
};

/// Real-valued H x W map, row-major.
struct LogitMap {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    /// Foreground where sigmoid(logit) > threshold.
    BinaryMask binarize(double threshold = 0.5) const;
    std::span<const float> span() const { return values; }
};

/// Logits plus the pre-head feature grid (at encoder-input resolution) that the
/// fusion head consumes.
struct DecodeResult {
    LogitMap logits;
    nn::Tensor features;
};

struct DecoderOutputs {
    LogitMap automatic;
    LogitMap prompted;
    LogitMap highrecall;
    std::optional<LogitMap> fused;
    nn::Tensor feat_automatic;
    nn::Tensor feat_prompted;
};

/// Row-per-token prompt embedding: [positional code | polarity embedding].
using PromptTokens = nn::Mat;

struct ModelConfig {
    BackboneSpec backbone;
    int patch_h = 32;
    int patch_w = 32;
    std::uint64_t seed = 0;

    void validate() const;
};

class ModelError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace detail {
class ImageEncoder;
class PromptEncoder;
class MaskDecoder;
class FusionHead;
} // namespace detail

/// Gradients of the training loss with respect to each head's logits, at the
/// resolution returned by TrainForward.
struct HeadGradients {
    std::vector<float> automatic;
    std::vector<float> prompted;
    std::vector<float> highrecall;
    std::vector<float> fused;
};

struct TrainCache;

/// One training forward pass; logits are at encoder-input resolution, which is
/// the training-pair resolution returned by prepare_pair.
struct TrainForward {
    DecoderOutputs outputs;
    std::shared_ptr<TrainCache> cache;
};

class RoadModel {
  public:
    explicit RoadModel(ModelConfig cfg = {});
    ~RoadModel();
    RoadModel(RoadModel&&) noexcept;
    RoadModel& operator=(RoadModel&&) noexcept;

    const ModelConfig& config() const { return cfg_; }
    PatchGrid grid_for(int image_h, int image_w) const { return PatchGrid(cfg_.patch_h, cfg_.patch_w, image_h, image_w); }

    /// Requires a 3-channel raster. Increments the invocation counter.
    ImageEmbedding encode_image(const Image& image) const;
    std::int64_t encoder_invocations() const { return encoder_calls_.load(); }

    /// One token per point, or one "no-prompt" token for an empty list.
    PromptTokens encode_prompts(std::span<const PointPrompt> points, const ImageEmbedding& emb) const;

    DecodeResult decode_auto(const ImageEmbedding& emb, std::span<const PointPrompt> negatives) const;
    DecodeResult decode_prompted(const ImageEmbedding& emb, std::span<const PointPrompt> positives) const;
    LogitMap decode_highrecall(const ImageEmbedding& emb) const;
    /// Fused logits at source resolution from two decoder feature grids.
    LogitMap fuse(const nn::Tensor& feat_a, const nn::Tensor& feat_p, const ImageEmbedding& emb) const;

    // --- training ------------------------------------------------------------

    /// Training pairs are used at encoder-input resolution: identity for the toy
    /// backbone, resized to the native side for the foundation backbone.
    std::pair<Image, BinaryMask> prepare_pair(const Image& image, const BinaryMask& mask) const;

    /// All four heads with caches for backward. The image must already be at
    /// training resolution and have dims divisible by the encoder stride.
    TrainForward forward_train(const Image& image, std::span<const PointPrompt> positives,
                               std::span<const PointPrompt> negatives);
    /// Accumulates parameter gradients.
    void backward(const TrainForward& fwd, const HeadGradients& grads);

    void visit(const nn::ParamVisitor& fn);
    std::vector<nn::Param*> parameters();
    std::size_t parameter_count(std::optional<nn::ParamGroup> group = std::nullopt);
    void zero_grad();

    // --- persistence ---------------------------------------------------------

    /// Optimizer moments are stored alongside each trainable tensor when
    /// `with_optimizer_state` is set.
    void save(const std::filesystem::path& path, const std::string& extra_json = "",
              bool with_optimizer_state = false) const;
    /// Builds a model from a checkpoint; `extra_json` receives the optional
    /// trailing section written by save.
    static RoadModel load(const std::filesystem::path& path, std::string* extra_json = nullptr);

  private:
    nn::Tensor preprocess(const Image& image, int& in_h, int& in_w) const;
    nn::Mat cell_codes(const ImageEmbedding& emb) const;
    LogitMap to_source(const nn::Tensor& logits, const ImageEmbedding& emb) const;
    DecodeResult run_decoder(const detail::MaskDecoder& dec, const ImageEmbedding& emb,
                             std::span<const PointPrompt> points) const;

    ModelConfig cfg_;
    std::unique_ptr<detail::ImageEncoder> encoder_;
    std::unique_ptr<detail::PromptEncoder> prompts_;
    std::unique_ptr<detail::MaskDecoder> automatic_;
    std::unique_ptr<detail::MaskDecoder> prompted_;
    std::unique_ptr<detail::MaskDecoder> highrecall_;
    std::unique_ptr<detail::FusionHead> fusion_;
    mutable std::atomic<std::int64_t> encoder_calls_{0};
};

/// Bilinear resize of an RGB image (align-corners off).
Image resize_image(const Image& image, int height, int width);
/// Nearest-neighbour resize of a mask.
BinaryMask resize_mask(const BinaryMask& mask, int height, int width);

} // namespace roadprompt
