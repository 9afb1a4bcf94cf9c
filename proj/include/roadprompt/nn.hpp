#pragma once

// Minimal CPU building blocks for the toy backbone: CHW tensors, layers with
// hand-written backward passes, and decoupled-weight-decay Adam.
//
// Layers are stateless between calls. A training forward fills a cache struct
// owned by the caller; backward consumes it and accumulates into Param::grad.

#include "roadprompt/sampler.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace roadprompt::nn {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

/// Dense float feature map, channel-major.
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int channels, int height, int width, float fill = 0.0f)
        : c(channels), h(height), w(width),
          data(static_cast<std::size_t>(channels) * height * width, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t size() const { return data.size(); }
    float& at(int ch, int row, int col) { return data[ch * plane() + static_cast<std::size_t>(row) * w + col]; }
    float at(int ch, int row, int col) const { return data[ch * plane() + static_cast<std::size_t>(row) * w + col]; }

    /// View as a (c x h*w) row-major matrix.
    MatMap matrix() { return {data.data(), c, static_cast<Eigen::Index>(plane())}; }
    ConstMatMap matrix() const { return {data.data(), c, static_cast<Eigen::Index>(plane())}; }

    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
    bool operator==(const Tensor&) const = default;
};

/// Which optimizer group a parameter steps with. Frozen parameters never change.
enum class ParamGroup : std::uint8_t { automatic, prompted, encoder, frozen };

const char* to_string(ParamGroup g);

struct Param {
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;
    ParamGroup group = ParamGroup::encoder;
    // Adam moments, sized lazily by the optimizer.
    std::vector<float> m1;
    std::vector<float> m2;

    Param() = default;
    Param(std::vector<int> dims, ParamGroup g);

    std::size_t size() const { return value.size(); }
    bool trainable() const { return group != ParamGroup::frozen; }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
    /// U(-bound, bound), the default fan-in scaled initialization.
    void init_uniform(float bound, Rng& rng);
};

using ParamVisitor = std::function<void(const std::string& name, Param& p)>;

// ---------------------------------------------------------------------------

class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, int stride, ParamGroup group, Rng& rng);

    struct Cache {
        Mat cols;
        int in_c = 0, in_h = 0, in_w = 0;
    };

    Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
    /// Returns dL/dx unless `need_input_grad` is false.
    Tensor backward(const Tensor& gy, const Cache& cache, bool need_input_grad = true);

    void visit(const std::string& prefix, const ParamVisitor& fn);
    int out_channels() const { return out_ch_; }
    void set_group(ParamGroup g) { weight_.group = g; bias_.group = g; }

  private:
    int in_ch_ = 0, out_ch_ = 0, kernel_ = 1, stride_ = 1;
    Param weight_; // out x (in*k*k)
    Param bias_;
};

/// Kernel 2, stride 2 transposed convolution: every input cell owns a
/// disjoint 2x2 output block.
class ConvTranspose2x2 {
  public:
    ConvTranspose2x2() = default;
    ConvTranspose2x2(int in_ch, int out_ch, ParamGroup group, Rng& rng);

    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tensor& gy, const Tensor& x);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    void set_group(ParamGroup g) { weight_.group = g; bias_.group = g; }

  private:
    int in_ch_ = 0, out_ch_ = 0;
    Param weight_; // (out*4) x in, row = out*4 + dy*2 + dx
    Param bias_;
};

/// y = x W^T + b on row-major token matrices, with an optional low-rank
/// adapter y += (scale / rank) * x A^T B^T.
class Linear {
  public:
    Linear() = default;
    Linear(int in_dim, int out_dim, ParamGroup group, Rng& rng);

    void add_adapter(int rank, float scale, ParamGroup group, Rng& rng);
    bool has_adapter() const { return rank_ > 0; }

    Mat forward(const Mat& x) const;
    Mat backward(const Mat& gy, const Mat& x, bool need_input_grad = true);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    void set_group(ParamGroup g) { weight_.group = g; bias_.group = g; }

    int in_dim() const { return in_dim_; }
    int out_dim() const { return out_dim_; }

  private:
    int in_dim_ = 0, out_dim_ = 0;
    Param weight_; // out x in
    Param bias_;
    int rank_ = 0;
    float adapter_scale_ = 0.0f;
    Param adapter_down_; // rank x in
    Param adapter_up_;   // out x rank, zero-initialized
};

/// Per-row layer normalization with learned gain and bias.
class LayerNorm {
  public:
    LayerNorm() = default;
    LayerNorm(int dim, ParamGroup group);

    struct Cache {
        Mat normalized;
        Eigen::VectorXf inv_std;
    };

    Mat forward(const Mat& x, Cache* cache = nullptr) const;
    Mat backward(const Mat& gy, const Cache& cache);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    void set_group(ParamGroup g) { gain_.group = g; bias_.group = g; }

  private:
    int dim_ = 0;
    Param gain_;
    Param bias_;
};

// Stateless helpers.
void relu_inplace(std::vector<float>& v);
void relu_inplace(Mat& m);
/// Zeroes gradient entries where the forward activation was not positive.
void relu_backward_inplace(std::vector<float>& grad, const std::vector<float>& activation);
void relu_backward_inplace(Mat& grad, const Mat& activation);
void softmax_rows_inplace(Mat& m);
/// Given softmax output A and dL/dA, returns dL/dlogits.
Mat softmax_rows_backward(const Mat& a, const Mat& ga);
Tensor upsample_nearest2x(const Tensor& x);
Tensor upsample_nearest2x_backward(const Tensor& gy);
/// Concatenate along channels.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// (c x hw) tensor <-> (hw x c) token matrix.
Mat to_tokens(const Tensor& x);
Tensor from_tokens(const Mat& tokens, int h, int w);

// ---------------------------------------------------------------------------

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Decoupled-weight-decay Adam over an explicit parameter list. Each group
/// gets its own learning rate per step.
class AdamW {
  public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    struct GroupRates {
        double automatic = 0.0;
        double prompted = 0.0;
        double encoder = 0.0;
    };

    void step(const std::vector<Param*>& params, const GroupRates& lr);
    std::int64_t steps() const { return t_; }
    void set_steps(std::int64_t t) { t_ = t; }

  private:
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
};

} // namespace roadprompt::nn
