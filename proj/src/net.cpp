#include "roadprompt/net.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace roadprompt {

using nn::Mat;
using nn::Param;
using nn::ParamGroup;
using nn::Tensor;
using json = nlohmann::json;

namespace {

constexpr int kEmbedDim = 64;     // encoder feature channels
constexpr int kPixelDim = 16;     // high-resolution skip channels
constexpr int kCodeDim = 64;      // positional code width
constexpr int kPolarityDim = 16;  // polarity embedding width
constexpr int kTokenDim = kCodeDim + kPolarityDim;
constexpr int kAttnDim = 32;
constexpr int kFeatureDim = 8;    // decoder output features per head
constexpr float kCodeFreqStd = 3.0f;

Mat slice_cols(const Mat& m, int from, int count) { return m.middleCols(from, count); }

} // namespace

const char* to_string(BackboneVariant v) { return v == BackboneVariant::toy ? "toy" : "foundation"; }

BackboneVariant backbone_from_string(const std::string& s) {
    if (s == "toy") return BackboneVariant::toy;
    if (s == "foundation") return BackboneVariant::foundation;
    throw InvalidArgument("unknown backbone '" + s + "'");
}

void BackboneSpec::validate() const {
    if (adapter_rank < 0) throw InvalidArgument("adapter rank must be >= 0");
    if (adapter_rank > 0 && !(adapter_scale > 0.0)) throw InvalidArgument("adapter scale must be > 0");
    if (variant == BackboneVariant::foundation) {
        if (native_size < kEncoderStride || native_size % kEncoderStride != 0) {
            throw InvalidArgument("foundation native_size must be a positive multiple of 8");
        }
    }
}

void ModelConfig::validate() const {
    backbone.validate();
    if (patch_h < 1 || patch_w < 1) throw InvalidArgument("patch size must be >= 1");
}

BinaryMask LogitMap::binarize(double threshold) const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("threshold must lie in (0, 1)");
    const double cut = std::log(threshold / (1.0 - threshold));
    BinaryMask m(height, width);
    for (std::size_t i = 0; i < values.size(); ++i) m.set_flat(i, values[i] > cut);
    return m;
}

// --- resizing -------------------------------------------------------------------

namespace {

struct Tap {
    int i0, i1;
    float t;
};

std::vector<Tap> bilinear_taps(int src, int dst) {
    std::vector<Tap> taps(dst);
    const double scale = static_cast<double>(src) / dst;
    for (int d = 0; d < dst; ++d) {
        const double s = std::clamp((d + 0.5) * scale - 0.5, 0.0, src - 1.0);
        const int i0 = static_cast<int>(s);
        taps[d] = {i0, std::min(i0 + 1, src - 1), static_cast<float>(s - i0)};
    }
    return taps;
}

std::vector<float> resize_plane(const float* src, int sh, int sw, int dh, int dw) {
    const auto ty = bilinear_taps(sh, dh), tx = bilinear_taps(sw, dw);
    std::vector<float> out(static_cast<std::size_t>(dh) * dw);
    for (int r = 0; r < dh; ++r) {
        const float* a = src + static_cast<std::ptrdiff_t>(ty[r].i0) * sw;
        const float* b = src + static_cast<std::ptrdiff_t>(ty[r].i1) * sw;
        for (int c = 0; c < dw; ++c) {
            const auto& x = tx[c];
            const float top = a[x.i0] + (a[x.i1] - a[x.i0]) * x.t;
            const float bot = b[x.i0] + (b[x.i1] - b[x.i0]) * x.t;
            out[static_cast<std::size_t>(r) * dw + c] = top + (bot - top) * ty[r].t;
        }
    }
    return out;
}

} // namespace

Image resize_image(const Image& image, int height, int width) {
    if (height < 1 || width < 1) throw InvalidArgument("resize target must be positive");
    if (image.height == height && image.width == width) return image;
    Image out(height, width);
    std::vector<float> plane(static_cast<std::size_t>(image.height) * image.width);
    for (int ch = 0; ch < 3; ++ch) {
        for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = image.rgb[i * 3 + ch];
        const auto r = resize_plane(plane.data(), image.height, image.width, height, width);
        for (std::size_t i = 0; i < r.size(); ++i) {
            out.rgb[i * 3 + ch] = static_cast<std::uint8_t>(std::clamp(std::lround(r[i]), 0L, 255L));
        }
    }
    return out;
}

BinaryMask resize_mask(const BinaryMask& mask, int height, int width) {
    if (height < 1 || width < 1) throw InvalidArgument("resize target must be positive");
    BinaryMask out(height, width);
    for (int r = 0; r < height; ++r) {
        const int sr = std::min(mask.height() - 1, static_cast<int>((r + 0.5) * mask.height() / height));
        for (int c = 0; c < width; ++c) {
            const int sc = std::min(mask.width() - 1, static_cast<int>((c + 0.5) * mask.width() / width));
            out.set(r, c, mask(sr, sc));
        }
    }
    return out;
}

// --- modules --------------------------------------------------------------------

namespace detail {

class PromptEncoder {
  public:
    explicit PromptEncoder(Rng& rng) : freq_({2, kCodeDim / 2}, ParamGroup::frozen), polarity_({3, kPolarityDim}, ParamGroup::frozen) {
        std::normal_distribution<float> normal(0.0f, 1.0f);
        for (auto& v : freq_.value) v = normal(rng) * kCodeFreqStd;
        for (auto& v : polarity_.value) v = normal(rng);
    }

    /// Unit-norm random Fourier code of a patch index.
    void code(int pi, int pj, float* out) const {
        const int half = kCodeDim / 2;
        const float norm = 1.0f / std::sqrt(static_cast<float>(half));
        for (int k = 0; k < half; ++k) {
            const float a = static_cast<float>(pi) * freq_.value[k] + static_cast<float>(pj) * freq_.value[half + k];
            out[k] = std::cos(a) * norm;
            out[half + k] = std::sin(a) * norm;
        }
    }

    // Rows of polarity_: negative, positive, none.
    void polarity(int row, float* out) const {
        std::copy_n(polarity_.value.data() + static_cast<std::ptrdiff_t>(row) * kPolarityDim, kPolarityDim, out);
    }

    void visit(const nn::ParamVisitor& fn) {
        fn("prompt.freq", freq_);
        fn("prompt.polarity", polarity_);
    }

  private:
    Param freq_;
    Param polarity_;
};

struct EncoderCache {
    Tensor input;
    nn::Conv2d::Cache k1, k2, k3, k4, k5, kpix;
    Tensor e1, e2, e3, e4, r5, pix;
    Mat t0, qkv, attn, mixed, t1, hidden;
    nn::LayerNorm::Cache ln1, ln2;
    Mat ln1_out, ln2_out;
};

class ImageEncoder {
  public:
    ImageEncoder(const BackboneSpec& spec, Rng& rng) {
        const ParamGroup g = spec.variant == BackboneVariant::toy ? ParamGroup::encoder : ParamGroup::frozen;
        c1_ = nn::Conv2d(3, 16, 3, 1, g, rng);
        c2_ = nn::Conv2d(16, 24, 3, 2, g, rng);
        c3_ = nn::Conv2d(24, 48, 3, 2, g, rng);
        c4_ = nn::Conv2d(48, kEmbedDim, 3, 2, g, rng);
        c5_ = nn::Conv2d(kEmbedDim, kEmbedDim, 3, 1, g, rng);
        ln1_ = nn::LayerNorm(kEmbedDim, g);
        qkv_ = nn::Linear(kEmbedDim, 3 * kEmbedDim, g, rng);
        proj_ = nn::Linear(kEmbedDim, kEmbedDim, g, rng);
        ln2_ = nn::LayerNorm(kEmbedDim, g);
        mlp1_ = nn::Linear(kEmbedDim, 2 * kEmbedDim, g, rng);
        mlp2_ = nn::Linear(2 * kEmbedDim, kEmbedDim, g, rng);
        pix_ = nn::Conv2d(16 + 24, kPixelDim, 3, 1, g, rng);
        if (spec.adapter_rank > 0) {
            const auto scale = static_cast<float>(spec.adapter_scale);
            qkv_.add_adapter(spec.adapter_rank, scale, ParamGroup::prompted, rng);
            proj_.add_adapter(spec.adapter_rank, scale, ParamGroup::prompted, rng);
        }
        convs_trainable_ = g != ParamGroup::frozen;
    }

    std::pair<Tensor, Tensor> forward(const Tensor& x, EncoderCache* cache) const {
        EncoderCache local;
        EncoderCache& k = cache ? *cache : local;
        const bool keep = cache != nullptr;
        Tensor e1 = c1_.forward(x, keep ? &k.k1 : nullptr);
        nn::relu_inplace(e1.data);
        Tensor e2 = c2_.forward(e1, keep ? &k.k2 : nullptr);
        nn::relu_inplace(e2.data);
        Tensor e3 = c3_.forward(e2, keep ? &k.k3 : nullptr);
        nn::relu_inplace(e3.data);
        Tensor e4 = c4_.forward(e3, keep ? &k.k4 : nullptr);
        nn::relu_inplace(e4.data);
        Tensor r5 = c5_.forward(e4, keep ? &k.k5 : nullptr);
        nn::relu_inplace(r5.data);
        Tensor e5 = e4;
        for (std::size_t i = 0; i < e5.size(); ++i) e5.data[i] += r5.data[i];

        const int h = e5.h, w = e5.w;
        Mat t0 = nn::to_tokens(e5);
        Mat a_in = ln1_.forward(t0, keep ? &k.ln1 : nullptr);
        Mat qkv = qkv_.forward(a_in);
        Mat attn = slice_cols(qkv, 0, kEmbedDim) * slice_cols(qkv, kEmbedDim, kEmbedDim).transpose();
        attn *= 1.0f / std::sqrt(static_cast<float>(kEmbedDim));
        nn::softmax_rows_inplace(attn);
        Mat mixed = attn * slice_cols(qkv, 2 * kEmbedDim, kEmbedDim);
        Mat t1 = t0 + proj_.forward(mixed);
        Mat m_in = ln2_.forward(t1, keep ? &k.ln2 : nullptr);
        Mat hidden = mlp1_.forward(m_in);
        nn::relu_inplace(hidden);
        Mat t2 = t1 + mlp2_.forward(hidden);
        Tensor features = nn::from_tokens(t2, h, w);

        Tensor pix = pix_.forward(nn::concat_channels(e1, nn::upsample_nearest2x(e2)), keep ? &k.kpix : nullptr);
        nn::relu_inplace(pix.data);

        if (keep) {
            k.e1 = std::move(e1);
            k.e2 = std::move(e2);
            k.e3 = std::move(e3);
            k.e4 = std::move(e4);
            k.r5 = std::move(r5);
            k.pix = pix;
            k.t0 = std::move(t0);
            k.ln1_out = std::move(a_in);
            k.qkv = std::move(qkv);
            k.attn = std::move(attn);
            k.mixed = std::move(mixed);
            k.t1 = std::move(t1);
            k.ln2_out = std::move(m_in);
            k.hidden = std::move(hidden);
        }
        return {std::move(features), std::move(pix)};
    }

    void backward(const Tensor& g_features, const Tensor& g_pix, const EncoderCache& k) {
        const int h = g_features.h, w = g_features.w;
        const Mat g_t2 = nn::to_tokens(g_features);
        Mat g_hidden = mlp2_.backward(g_t2, k.hidden);
        nn::relu_backward_inplace(g_hidden, k.hidden);
        Mat g_t1 = g_t2 + ln2_.backward(mlp1_.backward(g_hidden, k.ln2_out), k.ln2);

        const Mat g_mixed = proj_.backward(g_t1, k.mixed);
        const Mat v = slice_cols(k.qkv, 2 * kEmbedDim, kEmbedDim);
        const Mat q = slice_cols(k.qkv, 0, kEmbedDim);
        const Mat kk = slice_cols(k.qkv, kEmbedDim, kEmbedDim);
        Mat g_attn = g_mixed * v.transpose();
        Mat g_scores = nn::softmax_rows_backward(k.attn, g_attn) * (1.0f / std::sqrt(static_cast<float>(kEmbedDim)));
        Mat g_qkv(k.qkv.rows(), k.qkv.cols());
        g_qkv.middleCols(0, kEmbedDim) = g_scores * kk;
        g_qkv.middleCols(kEmbedDim, kEmbedDim) = g_scores.transpose() * q;
        g_qkv.middleCols(2 * kEmbedDim, kEmbedDim) = k.attn.transpose() * g_mixed;
        const Mat g_t0 = g_t1 + ln1_.backward(qkv_.backward(g_qkv, k.ln1_out), k.ln1);
        if (!convs_trainable_) return;

        // e5 = e4 + relu(c5(e4))
        Tensor g_e5 = nn::from_tokens(g_t0, h, w);
        Tensor g_r5 = g_e5;
        nn::relu_backward_inplace(g_r5.data, k.r5.data);
        Tensor g_e4 = c5_.backward(g_r5, k.k5);
        for (std::size_t i = 0; i < g_e4.size(); ++i) g_e4.data[i] += g_e5.data[i];
        nn::relu_backward_inplace(g_e4.data, k.e4.data);
        Tensor g_e3 = c4_.backward(g_e4, k.k4);
        nn::relu_backward_inplace(g_e3.data, k.e3.data);
        Tensor g_e2 = c3_.backward(g_e3, k.k3);

        Tensor g_p = g_pix;
        nn::relu_backward_inplace(g_p.data, k.pix.data);
        const Tensor g_cat = pix_.backward(g_p, k.kpix);
        const std::size_t e1_size = k.e1.size();
        Tensor g_up(24, g_cat.h, g_cat.w);
        std::copy(g_cat.data.begin() + static_cast<std::ptrdiff_t>(e1_size), g_cat.data.end(), g_up.data.begin());
        const Tensor g_e2_skip = nn::upsample_nearest2x_backward(g_up);
        for (std::size_t i = 0; i < g_e2.size(); ++i) g_e2.data[i] += g_e2_skip.data[i];
        nn::relu_backward_inplace(g_e2.data, k.e2.data);
        Tensor g_e1 = c2_.backward(g_e2, k.k2);
        for (std::size_t i = 0; i < e1_size; ++i) g_e1.data[i] += g_cat.data[i];
        nn::relu_backward_inplace(g_e1.data, k.e1.data);
        c1_.backward(g_e1, k.k1, false);
    }

    void visit(const nn::ParamVisitor& fn) {
        c1_.visit("encoder.conv1", fn);
        c2_.visit("encoder.conv2", fn);
        c3_.visit("encoder.conv3", fn);
        c4_.visit("encoder.conv4", fn);
        c5_.visit("encoder.conv5", fn);
        ln1_.visit("encoder.attn_norm", fn);
        qkv_.visit("encoder.attn_qkv", fn);
        proj_.visit("encoder.attn_proj", fn);
        ln2_.visit("encoder.mlp_norm", fn);
        mlp1_.visit("encoder.mlp1", fn);
        mlp2_.visit("encoder.mlp2", fn);
        pix_.visit("encoder.pixel", fn);
    }

  private:
    nn::Conv2d c1_, c2_, c3_, c4_, c5_, pix_;
    nn::LayerNorm ln1_, ln2_;
    nn::Linear qkv_, proj_, mlp1_, mlp2_;
    bool convs_trainable_ = true;
};

struct DecoderCache {
    int h = 0, w = 0;
    Mat x0, q, tokens, keys, values, bias, attn, x1, hidden;
    Tensor d, u1, u2, feat;
    nn::Conv2d::Cache kpp, kout;
};

/// Cross-attention from feature cells to [sink | prompt tokens], with a learned
/// multiple of the code agreement between a cell's patch and each token's patch
/// added to the attention logits. Upsampling is by non-overlapping 2x2 blocks,
/// so every output pixel depends on exactly one feature cell and the skip path.
class MaskDecoder {
  public:
    MaskDecoder(std::string name, ParamGroup g, Rng& rng)
        : name_(std::move(name)), q_(kEmbedDim, kAttnDim, g, rng), k_(kTokenDim, kAttnDim, g, rng),
          v_(kTokenDim, kEmbedDim, g, rng), beta_({1}, g), sink_({1, kTokenDim}, g),
          m1_(kEmbedDim, kEmbedDim, g, rng), m2_(kEmbedDim, kEmbedDim, g, rng), u1_(kEmbedDim, 32, g, rng),
          u2_(32, 16, g, rng), u3_(16, kFeatureDim, g, rng), skip_(kPixelDim, kFeatureDim, 1, 1, g, rng),
          out_(kFeatureDim, 1, 1, 1, g, rng) {
        beta_.value[0] = 10.0f;
        std::normal_distribution<float> normal(0.0f, 0.5f);
        for (auto& v : sink_.value) v = normal(rng);
    }

    /// Returns (logits 1 x H x W, features kFeatureDim x H x W) at encoder-input size.
    std::pair<Tensor, Tensor> forward(const Tensor& emb, const Tensor& pix, const Mat& cell_codes, const Mat& prompt,
                                      DecoderCache* cache) const {
        const int h = emb.h, w = emb.w;
        Mat x0 = nn::to_tokens(emb);
        Mat q = q_.forward(x0);
        Mat tokens(prompt.rows() + 1, kTokenDim);
        tokens.row(0) = Eigen::Map<const Eigen::RowVectorXf>(sink_.value.data(), kTokenDim);
        tokens.bottomRows(prompt.rows()) = prompt;
        Mat keys = k_.forward(tokens);
        Mat values = v_.forward(tokens);
        Mat bias = Mat::Zero(x0.rows(), tokens.rows());
        bias.rightCols(prompt.rows()) = cell_codes * prompt.leftCols(kCodeDim).transpose();
        Mat attn = q * keys.transpose() * (1.0f / std::sqrt(static_cast<float>(kAttnDim))) + beta_.value[0] * bias;
        nn::softmax_rows_inplace(attn);
        Mat x1 = x0 + attn * values;
        Mat hidden = m1_.forward(x1);
        nn::relu_inplace(hidden);
        Mat x2 = x1 + m2_.forward(hidden);

        Tensor d = nn::from_tokens(x2, h, w);
        Tensor u1 = u1_.forward(d);
        nn::relu_inplace(u1.data);
        Tensor u2 = u2_.forward(u1);
        nn::relu_inplace(u2.data);
        Tensor feat = u3_.forward(u2);
        const Tensor skip = skip_.forward(pix, cache ? &cache->kpp : nullptr);
        if (!feat.same_shape(skip)) throw ModelError("decoder: skip features do not match the upsampled grid");
        for (std::size_t i = 0; i < feat.size(); ++i) feat.data[i] += skip.data[i];
        nn::relu_inplace(feat.data);
        Tensor logits = out_.forward(feat, cache ? &cache->kout : nullptr);

        if (cache) {
            cache->h = h;
            cache->w = w;
            cache->x0 = std::move(x0);
            cache->q = std::move(q);
            cache->tokens = std::move(tokens);
            cache->keys = std::move(keys);
            cache->values = std::move(values);
            cache->bias = std::move(bias);
            cache->attn = std::move(attn);
            cache->x1 = std::move(x1);
            cache->hidden = std::move(hidden);
            cache->d = std::move(d);
            cache->u1 = std::move(u1);
            cache->u2 = std::move(u2);
            cache->feat = feat;
        }
        return {std::move(logits), std::move(feat)};
    }

    /// Accumulates parameter gradients and adds input gradients into g_emb / g_pix.
    void backward(const Tensor& g_logits, const Tensor* g_feat_extra, const DecoderCache& k, Tensor& g_emb,
                  Tensor& g_pix) {
        Tensor g_feat = out_.backward(g_logits, k.kout);
        if (g_feat_extra) {
            for (std::size_t i = 0; i < g_feat.size(); ++i) g_feat.data[i] += g_feat_extra->data[i];
        }
        nn::relu_backward_inplace(g_feat.data, k.feat.data);
        const Tensor gp = skip_.backward(g_feat, k.kpp);
        for (std::size_t i = 0; i < gp.size(); ++i) g_pix.data[i] += gp.data[i];
        Tensor g_u2 = u3_.backward(g_feat, k.u2);
        nn::relu_backward_inplace(g_u2.data, k.u2.data);
        Tensor g_u1 = u2_.backward(g_u2, k.u1);
        nn::relu_backward_inplace(g_u1.data, k.u1.data);
        const Tensor g_d = u1_.backward(g_u1, k.d);

        const Mat g_x2 = nn::to_tokens(g_d);
        Mat g_hidden = m2_.backward(g_x2, k.hidden);
        nn::relu_backward_inplace(g_hidden, k.hidden);
        const Mat g_x1 = g_x2 + m1_.backward(g_hidden, k.x1);

        const Mat g_attn = g_x1 * k.values.transpose();
        const Mat g_values = k.attn.transpose() * g_x1;
        const Mat g_logit = nn::softmax_rows_backward(k.attn, g_attn);
        beta_.grad[0] += (g_logit.array() * k.bias.array()).sum();
        const float inv = 1.0f / std::sqrt(static_cast<float>(kAttnDim));
        const Mat g_q = g_logit * k.keys * inv;
        const Mat g_keys = g_logit.transpose() * k.q * inv;
        Mat g_tokens = k_.backward(g_keys, k.tokens);
        g_tokens += v_.backward(g_values, k.tokens);
        for (int c = 0; c < kTokenDim; ++c) sink_.grad[c] += g_tokens(0, c);
        const Mat g_x0 = g_x1 + q_.backward(g_q, k.x0);
        const Tensor ge = nn::from_tokens(g_x0, k.h, k.w);
        for (std::size_t i = 0; i < ge.size(); ++i) g_emb.data[i] += ge.data[i];
    }

    void visit(const nn::ParamVisitor& fn) {
        q_.visit(name_ + ".query", fn);
        k_.visit(name_ + ".key", fn);
        v_.visit(name_ + ".value", fn);
        fn(name_ + ".code_bias", beta_);
        fn(name_ + ".sink", sink_);
        m1_.visit(name_ + ".mlp1", fn);
        m2_.visit(name_ + ".mlp2", fn);
        u1_.visit(name_ + ".up1", fn);
        u2_.visit(name_ + ".up2", fn);
        u3_.visit(name_ + ".up3", fn);
        skip_.visit(name_ + ".skip", fn);
        out_.visit(name_ + ".head", fn);
    }

  private:
    std::string name_;
    nn::Linear q_, k_, v_;
    Param beta_;
    Param sink_;
    nn::Linear m1_, m2_;
    nn::ConvTranspose2x2 u1_, u2_, u3_;
    nn::Conv2d skip_, out_;
};

struct FusionCache {
    nn::Conv2d::Cache k1, k2;
    Tensor hidden;
};

class FusionHead {
  public:
    FusionHead(ParamGroup g, Rng& rng)
        : c1_(2 * kFeatureDim, 4, 3, 1, g, rng), c2_(4, 1, 3, 1, g, rng) {}

    Tensor forward(const Tensor& fa, const Tensor& fp, FusionCache* cache) const {
        if (!fa.same_shape(fp)) throw InvalidArgument("fuse: feature grids differ in shape");
        if (fa.c != kFeatureDim) throw InvalidArgument("fuse: expected " + std::to_string(kFeatureDim) + " channels");
        Tensor hidden = c1_.forward(nn::concat_channels(fa, fp), cache ? &cache->k1 : nullptr);
        nn::relu_inplace(hidden.data);
        Tensor out = c2_.forward(hidden, cache ? &cache->k2 : nullptr);
        if (cache) cache->hidden = std::move(hidden);
        return out;
    }

    std::pair<Tensor, Tensor> backward(const Tensor& g_out, const FusionCache& k) {
        Tensor g_hidden = c2_.backward(g_out, k.k2);
        nn::relu_backward_inplace(g_hidden.data, k.hidden.data);
        const Tensor g_cat = c1_.backward(g_hidden, k.k1);
        Tensor ga(kFeatureDim, g_cat.h, g_cat.w), gp(kFeatureDim, g_cat.h, g_cat.w);
        const auto half = static_cast<std::ptrdiff_t>(ga.size());
        std::copy(g_cat.data.begin(), g_cat.data.begin() + half, ga.data.begin());
        std::copy(g_cat.data.begin() + half, g_cat.data.end(), gp.data.begin());
        return {std::move(ga), std::move(gp)};
    }

    void visit(const nn::ParamVisitor& fn) {
        c1_.visit("fusion.conv1", fn);
        c2_.visit("fusion.conv2", fn);
    }

  private:
    nn::Conv2d c1_, c2_;
};

} // namespace detail

struct TrainCache {
    detail::EncoderCache encoder;
    detail::DecoderCache automatic, prompted, highrecall;
    detail::FusionCache fusion;
    int height = 0, width = 0;
};

// --- RoadModel ------------------------------------------------------------------------

RoadModel::RoadModel(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    encoder_ = std::make_unique<detail::ImageEncoder>(cfg_.backbone, rng);
    prompts_ = std::make_unique<detail::PromptEncoder>(rng);
    automatic_ = std::make_unique<detail::MaskDecoder>("automatic", ParamGroup::automatic, rng);
    prompted_ = std::make_unique<detail::MaskDecoder>("prompted", ParamGroup::prompted, rng);
    highrecall_ = std::make_unique<detail::MaskDecoder>("highrecall", ParamGroup::automatic, rng);
    fusion_ = std::make_unique<detail::FusionHead>(ParamGroup::prompted, rng);
}

RoadModel::~RoadModel() = default;

RoadModel::RoadModel(RoadModel&& o) noexcept
    : cfg_(o.cfg_), encoder_(std::move(o.encoder_)), prompts_(std::move(o.prompts_)),
      automatic_(std::move(o.automatic_)), prompted_(std::move(o.prompted_)),
      highrecall_(std::move(o.highrecall_)), fusion_(std::move(o.fusion_)), encoder_calls_(o.encoder_calls_.load()) {}

RoadModel& RoadModel::operator=(RoadModel&& o) noexcept {
    cfg_ = o.cfg_;
    encoder_ = std::move(o.encoder_);
    prompts_ = std::move(o.prompts_);
    automatic_ = std::move(o.automatic_);
    prompted_ = std::move(o.prompted_);
    highrecall_ = std::move(o.highrecall_);
    fusion_ = std::move(o.fusion_);
    encoder_calls_ = o.encoder_calls_.load();
    return *this;
}

namespace {

Tensor normalize(const Image& image, int padded_h, int padded_w) {
    Tensor x(3, padded_h, padded_w, 0.0f);
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                x.at(ch, r, c) = (static_cast<float>(image.at(r, c, ch)) / 255.0f - 0.5f) / 0.25f;
            }
        }
    }
    return x;
}

int round_up(int v, int m) { return (v + m - 1) / m * m; }

} // namespace

Tensor RoadModel::preprocess(const Image& image, int& in_h, int& in_w) const {
    if (image.height < 1 || image.width < 1) throw InvalidArgument("image must be non-empty");
    if (image.rgb.size() != static_cast<std::size_t>(image.height) * image.width * 3) {
        throw InvalidArgument("image must have exactly 3 channels (got " +
                              std::to_string(image.rgb.size() / (static_cast<std::size_t>(image.height) * image.width)) +
                              " values per pixel)");
    }
    if (cfg_.backbone.variant == BackboneVariant::foundation) {
        in_h = in_w = cfg_.backbone.native_size;
        return normalize(resize_image(image, in_h, in_w), in_h, in_w);
    }
    in_h = round_up(image.height, kEncoderStride);
    in_w = round_up(image.width, kEncoderStride);
    return normalize(image, in_h, in_w);
}

ImageEmbedding RoadModel::encode_image(const Image& image) const {
    ImageEmbedding emb;
    const Tensor x = preprocess(image, emb.input_height, emb.input_width);
    ++encoder_calls_;
    auto [features, pix] = encoder_->forward(x, nullptr);
    emb.features = std::move(features);
    emb.pixel_features = std::move(pix);
    emb.source_height = image.height;
    emb.source_width = image.width;
    return emb;
}

PromptTokens RoadModel::encode_prompts(std::span<const PointPrompt> points, const ImageEmbedding& emb) const {
    if (points.empty()) {
        PromptTokens t = PromptTokens::Zero(1, kTokenDim);
        prompts_->polarity(2, t.row(0).data() + kCodeDim);
        return t;
    }
    const PatchGrid grid = grid_for(emb.source_height, emb.source_width);
    PromptTokens t(static_cast<Eigen::Index>(points.size()), kTokenDim);
    for (std::size_t n = 0; n < points.size(); ++n) {
        const PatchIndex p = patch_of(points[n], grid);
        float* row = t.row(static_cast<Eigen::Index>(n)).data();
        prompts_->code(p.i, p.j, row);
        prompts_->polarity(points[n].polarity == Polarity::positive ? 1 : 0, row + kCodeDim);
    }
    return t;
}

Mat RoadModel::cell_codes(const ImageEmbedding& emb) const {
    const int h = emb.features.h, w = emb.features.w;
    Mat codes(static_cast<Eigen::Index>(h) * w, kCodeDim);
    const double sy = static_cast<double>(emb.source_height) / emb.input_height;
    const double sx = static_cast<double>(emb.source_width) / emb.input_width;
    for (int r = 0; r < h; ++r) {
        // Centre of the cell, mapped back to source pixels.
        const int y = std::min(emb.source_height - 1, static_cast<int>((r * kEncoderStride + kEncoderStride / 2) * sy));
        for (int c = 0; c < w; ++c) {
            const int x = std::min(emb.source_width - 1, static_cast<int>((c * kEncoderStride + kEncoderStride / 2) * sx));
            prompts_->code(y / cfg_.patch_h, x / cfg_.patch_w, codes.row(static_cast<Eigen::Index>(r) * w + c).data());
        }
    }
    return codes;
}

LogitMap RoadModel::to_source(const Tensor& logits, const ImageEmbedding& emb) const {
    LogitMap out{emb.source_height, emb.source_width, {}};
    if (cfg_.backbone.variant == BackboneVariant::foundation) {
        out.values = resize_plane(logits.data.data(), logits.h, logits.w, emb.source_height, emb.source_width);
        return out;
    }
    out.values.resize(static_cast<std::size_t>(out.height) * out.width);
    for (int r = 0; r < out.height; ++r) {
        std::copy_n(logits.data.data() + static_cast<std::size_t>(r) * logits.w, out.width, out.values.begin() + static_cast<std::ptrdiff_t>(r) * out.width);
    }
    return out;
}

namespace {

void require_polarity(std::span<const PointPrompt> points, Polarity want, const char* op) {
    for (const auto& p : points) {
        if (p.polarity != want) {
            throw InvalidArgument(std::string(op) + " accepts only " +
                                  (want == Polarity::positive ? "positive" : "negative") + " prompts; got (" +
                                  std::to_string(p.h) + ", " + std::to_string(p.w) + ")");
        }
    }
}

void require_embedding(const ImageEmbedding& emb) {
    if (emb.features.c != kEmbedDim || emb.features.h * kEncoderStride != emb.input_height ||
        emb.features.w * kEncoderStride != emb.input_width || emb.pixel_features.h != emb.input_height ||
        emb.pixel_features.w != emb.input_width || emb.source_height < 1 || emb.source_width < 1) {
        throw InvalidArgument("malformed image embedding");
    }
}

} // namespace

DecodeResult RoadModel::run_decoder(const detail::MaskDecoder& dec, const ImageEmbedding& emb,
                                std::span<const PointPrompt> points) const {
    require_embedding(emb);
    const PromptTokens tokens = encode_prompts(points, emb);
    auto [logits, feat] = dec.forward(emb.features, emb.pixel_features, cell_codes(emb), tokens, nullptr);
    return {to_source(logits, emb), std::move(feat)};
}

DecodeResult RoadModel::decode_auto(const ImageEmbedding& emb, std::span<const PointPrompt> negatives) const {
    require_polarity(negatives, Polarity::negative, "decode_auto");
    return run_decoder(*automatic_, emb, negatives);
}

DecodeResult RoadModel::decode_prompted(const ImageEmbedding& emb, std::span<const PointPrompt> positives) const {
    require_polarity(positives, Polarity::positive, "decode_prompted");
    return run_decoder(*prompted_, emb, positives);
}

LogitMap RoadModel::decode_highrecall(const ImageEmbedding& emb) const {
    return run_decoder(*highrecall_, emb, {}).logits;
}

LogitMap RoadModel::fuse(const Tensor& feat_a, const Tensor& feat_p, const ImageEmbedding& emb) const {
    if (feat_a.h != emb.input_height || feat_a.w != emb.input_width) {
        throw InvalidArgument("fuse: feature grid does not match the embedding");
    }
    return to_source(fusion_->forward(feat_a, feat_p, nullptr), emb);
}

std::pair<Image, BinaryMask> RoadModel::prepare_pair(const Image& image, const BinaryMask& mask) const {
    if (image.height != mask.height() || image.width != mask.width()) {
        throw InvalidArgument("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                              " does not match mask " + shape_string(mask));
    }
    if (cfg_.backbone.variant == BackboneVariant::foundation) {
        const int n = cfg_.backbone.native_size;
        return {resize_image(image, n, n), resize_mask(mask, n, n)};
    }
    const int ph = round_up(image.height, kEncoderStride), pw = round_up(image.width, kEncoderStride);
    if (ph == image.height && pw == image.width) return {image, mask};
    Image img(ph, pw);
    std::fill(img.rgb.begin(), img.rgb.end(), std::uint8_t{128});
    BinaryMask m(ph, pw);
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = image.at(r, c, ch);
            m.set(r, c, mask(r, c));
        }
    }
    return {std::move(img), std::move(m)};
}

TrainForward RoadModel::forward_train(const Image& image, std::span<const PointPrompt> positives,
                                  std::span<const PointPrompt> negatives) {
    require_polarity(positives, Polarity::positive, "forward_train");
    require_polarity(negatives, Polarity::negative, "forward_train");
    if (image.height % kEncoderStride != 0 || image.width % kEncoderStride != 0) {
        throw InvalidArgument("training images must have dims divisible by 8; use prepare_pair");
    }
    auto cache = std::make_shared<TrainCache>();
    cache->height = image.height;
    cache->width = image.width;
    // Training runs at the pair's own resolution; the embedding describes it as
    // its own source so prompts and codes share one coordinate frame.
    ImageEmbedding emb;
    emb.source_height = emb.input_height = image.height;
    emb.source_width = emb.input_width = image.width;
    auto [features, pix] = encoder_->forward(normalize(image, image.height, image.width), &cache->encoder);
    emb.features = std::move(features);
    emb.pixel_features = std::move(pix);
    const Mat codes = cell_codes(emb);

    const auto to_map = [&](const Tensor& t) { return LogitMap{t.h, t.w, t.data}; };
    TrainForward out;
    auto [la, fa] = automatic_->forward(emb.features, emb.pixel_features, codes, encode_prompts(negatives, emb),
                                        &cache->automatic);
    auto [lp, fp] = prompted_->forward(emb.features, emb.pixel_features, codes, encode_prompts(positives, emb),
                                       &cache->prompted);
    auto [lh, fh] = highrecall_->forward(emb.features, emb.pixel_features, codes, encode_prompts({}, emb),
                                         &cache->highrecall);
    const Tensor lm = fusion_->forward(fa, fp, &cache->fusion);
    out.outputs.automatic = to_map(la);
    out.outputs.prompted = to_map(lp);
    out.outputs.highrecall = to_map(lh);
    out.outputs.fused = to_map(lm);
    out.outputs.feat_automatic = std::move(fa);
    out.outputs.feat_prompted = std::move(fp);
    out.cache = std::move(cache);
    return out;
}

void RoadModel::backward(const TrainForward& fwd, const HeadGradients& grads) {
    const TrainCache& k = *fwd.cache;
    const std::size_t n = static_cast<std::size_t>(k.height) * k.width;
    for (const auto* g : {&grads.automatic, &grads.prompted, &grads.highrecall, &grads.fused}) {
        if (g->size() != n) throw InvalidArgument("head gradient size does not match the training forward");
    }
    const auto as_tensor = [&](const std::vector<float>& g) {
        Tensor t(1, k.height, k.width);
        t.data = g;
        return t;
    };
    const auto [g_fa, g_fp] = fusion_->backward(as_tensor(grads.fused), k.fusion);
    Tensor g_emb(kEmbedDim, k.height / kEncoderStride, k.width / kEncoderStride);
    Tensor g_pix(kPixelDim, k.height, k.width);
    automatic_->backward(as_tensor(grads.automatic), &g_fa, k.automatic, g_emb, g_pix);
    prompted_->backward(as_tensor(grads.prompted), &g_fp, k.prompted, g_emb, g_pix);
    highrecall_->backward(as_tensor(grads.highrecall), nullptr, k.highrecall, g_emb, g_pix);
    encoder_->backward(g_emb, g_pix, k.encoder);
}

void RoadModel::visit(const nn::ParamVisitor& fn) {
    encoder_->visit(fn);
    prompts_->visit(fn);
    automatic_->visit(fn);
    prompted_->visit(fn);
    highrecall_->visit(fn);
    fusion_->visit(fn);
}

std::vector<nn::Param*> RoadModel::parameters() {
    std::vector<nn::Param*> out;
    visit([&](const std::string&, Param& p) { out.push_back(&p); });
    return out;
}

std::size_t RoadModel::parameter_count(std::optional<ParamGroup> group) {
    std::size_t n = 0;
    visit([&](const std::string&, Param& p) {
        if (!group || p.group == *group) n += p.size();
    });
    return n;
}

void RoadModel::zero_grad() {
    visit([](const std::string&, Param& p) { p.zero_grad(); });
}

// --- checkpoints ----------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'R', 'P', 'C', 'K', 'P', 'T', '0', '1'};
constexpr int kFormatVersion = 1;

} // namespace

void RoadModel::save(const std::filesystem::path& path, const std::string& extra_json, bool with_optimizer_state) const {
    json header;
    header["format_version"] = kFormatVersion;
    header["backbone"] = {{"variant", to_string(cfg_.backbone.variant)},
                          {"adapter_rank", cfg_.backbone.adapter_rank},
                          {"adapter_scale", cfg_.backbone.adapter_scale},
                          {"native_size", cfg_.backbone.native_size}};
    header["patch_grid"] = {{"patch_h", cfg_.patch_h}, {"patch_w", cfg_.patch_w}};
    header["seed"] = cfg_.seed;
    if (!extra_json.empty()) header["extra"] = json::parse(extra_json);

    std::vector<const std::vector<float>*> blobs;
    json index = json::array();
    std::size_t offset = 0;
    const auto add = [&](const std::string& name, const std::vector<int>& shape, ParamGroup g,
                         const std::vector<float>& data) {
        index.push_back({{"name", name}, {"shape", shape}, {"group", nn::to_string(g)}, {"offset", offset},
                         {"count", data.size()}});
        offset += data.size();
        blobs.push_back(&data);
    };
    const_cast<RoadModel*>(this)->visit([&](const std::string& name, Param& p) {
        add(name, p.shape, p.group, p.value);
        if (with_optimizer_state && p.m1.size() == p.size()) {
            add(name + "#m1", p.shape, p.group, p.m1);
            add(name + "#m2", p.shape, p.group, p.m2);
        }
    });
    header["tensors"] = std::move(index);

    const std::string text = header.dump();
    std::vector<std::uint8_t> bytes(sizeof(kMagic) + 8 + text.size() + offset * sizeof(float));
    std::size_t at = 0;
    std::memcpy(bytes.data(), kMagic, sizeof(kMagic));
    at += sizeof(kMagic);
    const std::uint64_t len = text.size();
    for (int b = 0; b < 8; ++b) bytes[at++] = static_cast<std::uint8_t>(len >> (8 * b));
    std::memcpy(bytes.data() + at, text.data(), text.size());
    at += text.size();
    for (const auto* blob : blobs) {
        std::memcpy(bytes.data() + at, blob->data(), blob->size() * sizeof(float));
        at += blob->size() * sizeof(float);
    }
    write_file(path, bytes);
}

RoadModel RoadModel::load(const std::filesystem::path& path, std::string* extra_json) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file(path);
    } catch (const RasterError& e) {
        throw ModelError(e.what());
    }
    if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ModelError(path.string() + ": not a checkpoint");
    }
    std::uint64_t len = 0;
    for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(bytes[sizeof(kMagic) + b]) << (8 * b);
    const std::size_t body = sizeof(kMagic) + 8;
    if (len > bytes.size() - body) throw ModelError(path.string() + ": truncated header");
    json header;
    try {
        header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(body),
                             bytes.begin() + static_cast<std::ptrdiff_t>(body + len));
    } catch (const json::exception& e) {
        throw ModelError(path.string() + ": bad header: " + e.what());
    }
    if (header.value("format_version", 0) != kFormatVersion) {
        throw ModelError(path.string() + ": unsupported format_version " + header.value("format_version", json()).dump());
    }
    ModelConfig cfg;
    const auto& bb = header.at("backbone");
    cfg.backbone.variant = backbone_from_string(bb.at("variant").get<std::string>());
    cfg.backbone.adapter_rank = bb.at("adapter_rank").get<int>();
    cfg.backbone.adapter_scale = bb.at("adapter_scale").get<double>();
    cfg.backbone.native_size = bb.at("native_size").get<int>();
    cfg.patch_h = header.at("patch_grid").at("patch_h").get<int>();
    cfg.patch_w = header.at("patch_grid").at("patch_w").get<int>();
    cfg.seed = header.value("seed", std::uint64_t{0});
    if (extra_json) *extra_json = header.contains("extra") ? header["extra"].dump() : std::string();

    std::map<std::string, json> tensors;
    for (const auto& t : header.at("tensors")) tensors[t.at("name").get<std::string>()] = t;
    const float* data = reinterpret_cast<const float*>(bytes.data() + body + len);
    const std::size_t available = (bytes.size() - body - len) / sizeof(float);

    RoadModel model(cfg);
    const auto fetch = [&](const std::string& name, const std::vector<int>& shape, std::vector<float>& dst) {
        const auto it = tensors.find(name);
        if (it == tensors.end()) return false;
        if (it->second.at("shape").get<std::vector<int>>() != shape) {
            throw ModelError(path.string() + ": shape mismatch for " + name);
        }
        const auto off = it->second.at("offset").get<std::size_t>();
        const auto count = it->second.at("count").get<std::size_t>();
        if (off + count > available) throw ModelError(path.string() + ": truncated tensor data for " + name);
        // Unaligned source; copy bytewise.
        dst.resize(count);
        std::memcpy(dst.data(), reinterpret_cast<const std::uint8_t*>(data) + off * sizeof(float), count * sizeof(float));
        return true;
    };
    model.visit([&](const std::string& name, Param& p) {
        if (!fetch(name, p.shape, p.value)) throw ModelError(path.string() + ": missing tensor " + name);
        if (fetch(name + "#m1", p.shape, p.m1)) {
            if (!fetch(name + "#m2", p.shape, p.m2)) throw ModelError(path.string() + ": missing tensor " + name + "#m2");
        }
    });
    return model;
}

} // namespace roadprompt
