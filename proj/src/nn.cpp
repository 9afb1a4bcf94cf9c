#include "roadprompt/nn.hpp"

#include <cmath>

namespace roadprompt::nn {

const char* to_string(ParamGroup g) {
    switch (g) {
    case ParamGroup::automatic: return "automatic";
    case ParamGroup::prompted: return "prompted";
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::frozen: return "frozen";
    }
    return "unknown";
}

Param::Param(std::vector<int> dims, ParamGroup g) : shape(std::move(dims)), group(g) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    value.assign(n, 0.0f);
    grad.assign(n, 0.0f);
}

void Param::init_uniform(float bound, Rng& rng) {
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (auto& v : value) v = dist(rng);
}

// --- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, ParamGroup group, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride),
      weight_({out_ch, in_ch * kernel * kernel}, group), bias_({out_ch}, group) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_ch * kernel * kernel));
    weight_.init_uniform(bound, rng);
    bias_.init_uniform(bound, rng);
}

Tensor Conv2d::forward(const Tensor& x, Cache* cache) const {
    if (x.c != in_ch_) {
        throw InvalidArgument("conv: expected " + std::to_string(in_ch_) + " input channels, got " +
                              std::to_string(x.c));
    }
    const int k = kernel_, s = stride_, pad = kernel_ / 2;
    const int oh = (x.h + 2 * pad - k) / s + 1;
    const int ow = (x.w + 2 * pad - k) / s + 1;
    Mat cols(static_cast<Eigen::Index>(in_ch_) * k * k, static_cast<Eigen::Index>(oh) * ow);
    for (int ci = 0; ci < in_ch_; ++ci) {
        const float* src = x.data.data() + ci * x.plane();
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* dst = cols.row((ci * k + ky) * k + kx).data();
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s + ky - pad;
                    float* drow = dst + static_cast<std::ptrdiff_t>(oy) * ow;
                    if (iy < 0 || iy >= x.h) {
                        std::fill(drow, drow + ow, 0.0f);
                        continue;
                    }
                    const float* srow = src + static_cast<std::ptrdiff_t>(iy) * x.w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * s + kx - pad;
                        drow[ox] = (ix >= 0 && ix < x.w) ? srow[ix] : 0.0f;
                    }
                }
            }
        }
    }
    Tensor y(out_ch_, oh, ow);
    ConstMatMap wmat(weight_.value.data(), out_ch_, cols.rows());
    auto ym = y.matrix();
    ym.noalias() = wmat * cols;
    for (int co = 0; co < out_ch_; ++co) ym.row(co).array() += bias_.value[co];
    if (cache) {
        cache->cols = std::move(cols);
        cache->in_c = x.c;
        cache->in_h = x.h;
        cache->in_w = x.w;
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& gy, const Cache& cache, bool need_input_grad) {
    const auto gym = gy.matrix();
    if (weight_.trainable()) {
        MatMap dw(weight_.grad.data(), out_ch_, cache.cols.rows());
        dw.noalias() += gym * cache.cols.transpose();
        for (int co = 0; co < out_ch_; ++co) bias_.grad[co] += gym.row(co).sum();
    }
    if (!need_input_grad) return {};

    ConstMatMap wmat(weight_.value.data(), out_ch_, cache.cols.rows());
    Mat dcols = wmat.transpose() * gym;
    const int k = kernel_, s = stride_, pad = kernel_ / 2;
    const int oh = gy.h, ow = gy.w;
    Tensor gx(cache.in_c, cache.in_h, cache.in_w);
    for (int ci = 0; ci < in_ch_; ++ci) {
        float* dst = gx.data.data() + ci * gx.plane();
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* src = dcols.row((ci * k + ky) * k + kx).data();
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s + ky - pad;
                    if (iy < 0 || iy >= gx.h) continue;
                    float* drow = dst + static_cast<std::ptrdiff_t>(iy) * gx.w;
                    const float* srow = src + static_cast<std::ptrdiff_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * s + kx - pad;
                        if (ix >= 0 && ix < gx.w) drow[ix] += srow[ox];
                    }
                }
            }
        }
    }
    return gx;
}

void Conv2d::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight_);
    fn(prefix + ".bias", bias_);
}

// --- ConvTranspose2x2 ---------------------------------------------------------

ConvTranspose2x2::ConvTranspose2x2(int in_ch, int out_ch, ParamGroup group, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), weight_({out_ch * 4, in_ch}, group), bias_({out_ch}, group) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_ch));
    weight_.init_uniform(bound, rng);
    bias_.init_uniform(bound, rng);
}

Tensor ConvTranspose2x2::forward(const Tensor& x) const {
    if (x.c != in_ch_) throw InvalidArgument("conv-transpose: input channel mismatch");
    ConstMatMap wmat(weight_.value.data(), out_ch_ * 4, in_ch_);
    const Mat y4 = wmat * x.matrix();
    Tensor y(out_ch_, x.h * 2, x.w * 2);
    for (int co = 0; co < out_ch_; ++co) {
        const float b = bias_.value[co];
        for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
                const float* src = y4.row(co * 4 + dy * 2 + dx).data();
                for (int r = 0; r < x.h; ++r) {
                    float* drow = &y.at(co, 2 * r + dy, 0);
                    const float* srow = src + static_cast<std::ptrdiff_t>(r) * x.w;
                    for (int c = 0; c < x.w; ++c) drow[2 * c + dx] = srow[c] + b;
                }
            }
        }
    }
    return y;
}

Tensor ConvTranspose2x2::backward(const Tensor& gy, const Tensor& x) {
    Mat g4(out_ch_ * 4, static_cast<Eigen::Index>(x.plane()));
    for (int co = 0; co < out_ch_; ++co) {
        double bsum = 0.0;
        for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
                float* dst = g4.row(co * 4 + dy * 2 + dx).data();
                for (int r = 0; r < x.h; ++r) {
                    const float* srow = gy.data.data() + co * gy.plane() + static_cast<std::size_t>(2 * r + dy) * gy.w;
                    float* drow = dst + static_cast<std::ptrdiff_t>(r) * x.w;
                    for (int c = 0; c < x.w; ++c) {
                        drow[c] = srow[2 * c + dx];
                        bsum += drow[c];
                    }
                }
            }
        }
        bias_.grad[co] += static_cast<float>(bsum);
    }
    MatMap dw(weight_.grad.data(), out_ch_ * 4, in_ch_);
    dw.noalias() += g4 * x.matrix().transpose();
    ConstMatMap wmat(weight_.value.data(), out_ch_ * 4, in_ch_);
    Tensor gx(in_ch_, x.h, x.w);
    gx.matrix().noalias() = wmat.transpose() * g4;
    return gx;
}

void ConvTranspose2x2::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight_);
    fn(prefix + ".bias", bias_);
}

// --- Linear -------------------------------------------------------------------

Linear::Linear(int in_dim, int out_dim, ParamGroup group, Rng& rng)
    : in_dim_(in_dim), out_dim_(out_dim), weight_({out_dim, in_dim}, group), bias_({out_dim}, group) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_dim));
    weight_.init_uniform(bound, rng);
    bias_.init_uniform(bound, rng);
}

void Linear::add_adapter(int rank, float scale, ParamGroup group, Rng& rng) {
    if (rank < 1) throw InvalidArgument("adapter rank must be >= 1");
    rank_ = rank;
    adapter_scale_ = scale;
    adapter_down_ = Param({rank, in_dim_}, group);
    adapter_down_.init_uniform(1.0f / std::sqrt(static_cast<float>(in_dim_)), rng);
    adapter_up_ = Param({out_dim_, rank}, group);
}

Mat Linear::forward(const Mat& x) const {
    if (x.cols() != in_dim_) throw InvalidArgument("linear: input width mismatch");
    ConstMatMap wmat(weight_.value.data(), out_dim_, in_dim_);
    Mat y = x * wmat.transpose();
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias_.value.data(), out_dim_);
    if (rank_ > 0) {
        ConstMatMap down(adapter_down_.value.data(), rank_, in_dim_);
        ConstMatMap up(adapter_up_.value.data(), out_dim_, rank_);
        y.noalias() += (adapter_scale_ / static_cast<float>(rank_)) * ((x * down.transpose()) * up.transpose());
    }
    return y;
}

Mat Linear::backward(const Mat& gy, const Mat& x, bool need_input_grad) {
    // Frozen weights still pass gradient through to adapters and inputs.
    if (weight_.trainable()) {
        MatMap dw(weight_.grad.data(), out_dim_, in_dim_);
        dw.noalias() += gy.transpose() * x;
        Eigen::Map<Eigen::RowVectorXf>(bias_.grad.data(), out_dim_) += gy.colwise().sum();
    }
    ConstMatMap wmat(weight_.value.data(), out_dim_, in_dim_);
    Mat gx;
    if (need_input_grad) gx = gy * wmat;
    if (rank_ > 0) {
        const float s = adapter_scale_ / static_cast<float>(rank_);
        ConstMatMap down(adapter_down_.value.data(), rank_, in_dim_);
        ConstMatMap up(adapter_up_.value.data(), out_dim_, rank_);
        const Mat hidden = x * down.transpose();
        MatMap dup(adapter_up_.grad.data(), out_dim_, rank_);
        dup.noalias() += s * (gy.transpose() * hidden);
        const Mat dhidden = s * (gy * up);
        MatMap ddown(adapter_down_.grad.data(), rank_, in_dim_);
        ddown.noalias() += dhidden.transpose() * x;
        if (need_input_grad) gx.noalias() += dhidden * down;
    }
    return gx;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight_);
    fn(prefix + ".bias", bias_);
    if (rank_ > 0) {
        fn(prefix + ".adapter_down", adapter_down_);
        fn(prefix + ".adapter_up", adapter_up_);
    }
}

// --- LayerNorm ----------------------------------------------------------------

LayerNorm::LayerNorm(int dim, ParamGroup group) : dim_(dim), gain_({dim}, group), bias_({dim}, group) {
    std::fill(gain_.value.begin(), gain_.value.end(), 1.0f);
}

Mat LayerNorm::forward(const Mat& x, Cache* cache) const {
    constexpr float eps = 1e-5f;
    Mat xn(x.rows(), x.cols());
    Eigen::VectorXf inv(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const float mean = x.row(r).mean();
        const float var = (x.row(r).array() - mean).square().mean();
        inv[r] = 1.0f / std::sqrt(var + eps);
        xn.row(r) = (x.row(r).array() - mean) * inv[r];
    }
    Eigen::Map<const Eigen::RowVectorXf> g(gain_.value.data(), dim_);
    Eigen::Map<const Eigen::RowVectorXf> b(bias_.value.data(), dim_);
    Mat y = xn.array().rowwise() * g.array();
    y.rowwise() += b;
    if (cache) {
        cache->normalized = std::move(xn);
        cache->inv_std = std::move(inv);
    }
    return y;
}

Mat LayerNorm::backward(const Mat& gy, const Cache& cache) {
    const Mat& xn = cache.normalized;
    if (gain_.trainable()) {
        Eigen::Map<Eigen::RowVectorXf>(gain_.grad.data(), dim_) += (gy.array() * xn.array()).matrix().colwise().sum();
        Eigen::Map<Eigen::RowVectorXf>(bias_.grad.data(), dim_) += gy.colwise().sum();
    }
    Eigen::Map<const Eigen::RowVectorXf> g(gain_.value.data(), dim_);
    const Mat dxn = gy.array().rowwise() * g.array();
    Mat gx(gy.rows(), gy.cols());
    for (Eigen::Index r = 0; r < gy.rows(); ++r) {
        const float m1 = dxn.row(r).mean();
        const float m2 = (dxn.row(r).array() * xn.row(r).array()).mean();
        gx.row(r) = cache.inv_std[r] * (dxn.row(r).array() - m1 - xn.row(r).array() * m2);
    }
    return gx;
}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".gain", gain_);
    fn(prefix + ".bias", bias_);
}

// --- helpers ------------------------------------------------------------------

void relu_inplace(std::vector<float>& v) {
    for (auto& x : v) x = x > 0.0f ? x : 0.0f;
}

void relu_inplace(Mat& m) { m = m.cwiseMax(0.0f); }

void relu_backward_inplace(std::vector<float>& grad, const std::vector<float>& activation) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (activation[i] <= 0.0f) grad[i] = 0.0f;
    }
}

void relu_backward_inplace(Mat& grad, const Mat& activation) {
    grad = (activation.array() > 0.0f).select(grad, 0.0f);
}

void softmax_rows_inplace(Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const float mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp();
        m.row(r) /= m.row(r).sum();
    }
}

Mat softmax_rows_backward(const Mat& a, const Mat& ga) {
    const Eigen::VectorXf dots = (a.array() * ga.array()).rowwise().sum();
    Mat out = a.array() * (ga.colwise() - dots).array();
    return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
    Tensor y(x.c, x.h * 2, x.w * 2);
    for (int ch = 0; ch < x.c; ++ch) {
        for (int r = 0; r < y.h; ++r) {
            for (int c = 0; c < y.w; ++c) y.at(ch, r, c) = x.at(ch, r / 2, c / 2);
        }
    }
    return y;
}

Tensor upsample_nearest2x_backward(const Tensor& gy) {
    Tensor gx(gy.c, gy.h / 2, gy.w / 2);
    for (int ch = 0; ch < gy.c; ++ch) {
        for (int r = 0; r < gy.h; ++r) {
            for (int c = 0; c < gy.w; ++c) gx.at(ch, r / 2, c / 2) += gy.at(ch, r, c);
        }
    }
    return gx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.h != b.h || a.w != b.w) throw InvalidArgument("concat: spatial size mismatch");
    Tensor y(a.c + b.c, a.h, a.w);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return y;
}

Mat to_tokens(const Tensor& x) { return x.matrix().transpose(); }

Tensor from_tokens(const Mat& tokens, int h, int w) {
    Tensor y(static_cast<int>(tokens.cols()), h, w);
    y.matrix() = tokens.transpose();
    return y;
}

// --- AdamW --------------------------------------------------------------------

void AdamW::step(const std::vector<Param*>& params, const GroupRates& lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Param* p : params) {
        if (!p->trainable()) continue;
        double rate = 0.0;
        switch (p->group) {
        case ParamGroup::automatic: rate = lr.automatic; break;
        case ParamGroup::prompted: rate = lr.prompted; break;
        case ParamGroup::encoder: rate = lr.encoder; break;
        case ParamGroup::frozen: continue;
        }
        if (p->m1.size() != p->size()) {
            p->m1.assign(p->size(), 0.0f);
            p->m2.assign(p->size(), 0.0f);
        }
        const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
        const auto step = static_cast<float>(rate / bc1);
        const auto corr2 = static_cast<float>(1.0 / std::sqrt(bc2));
        const auto decay = static_cast<float>(rate * cfg_.weight_decay);
        const auto eps = static_cast<float>(cfg_.eps);
        for (std::size_t i = 0; i < p->size(); ++i) {
            const float g = p->grad[i];
            p->m1[i] = b1 * p->m1[i] + (1.0f - b1) * g;
            p->m2[i] = b2 * p->m2[i] + (1.0f - b2) * g * g;
            p->value[i] -= decay * p->value[i];
            p->value[i] -= step * p->m1[i] / (std::sqrt(p->m2[i]) * corr2 + eps);
        }
    }
}

} // namespace roadprompt::nn
