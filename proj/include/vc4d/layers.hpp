#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "vc4d/errors.hpp"
#include "vc4d/kernels.hpp"
#include "vc4d/rng.hpp"
#include "vc4d/tensor.hpp"

namespace vc4d {

enum class Mode { train, eval };

// When enabled, every layer verifies its outputs (and gradients) are finite
// and throws NumericalError naming the layer otherwise.
inline bool& finite_checks() {
    static bool enabled = false;
    return enabled;
}

template <typename T>
struct ParamSlot {
    std::string name;
    Tensor<T>* value;
    Tensor<T>* grad;
};

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T>* tensor;
};

struct ConvSpec {
    int in_channels = 1;   // D1
    int out_channels = 1;  // K
    int kernel = 4;        // F
    int stride = 2;        // S
    int padding = 1;       // P
};

// (W2, H2, D2) for a strided convolution. The stride must divide exactly;
// silent flooring would desynchronize the decoder mirror.
inline std::tuple<int, int, int> conv_output_shape(int input_w, int input_h,
                                                   const ConvSpec& spec) {
    if (spec.kernel < 1 || spec.stride < 1 || spec.padding < 0)
        throw ShapeError("conv spec requires F >= 1, S >= 1, P >= 0");
    auto one_dim = [&](int size, const char* which) {
        const int span = size - spec.kernel + 2 * spec.padding;
        if (span < 0)
            throw ShapeError(std::string("conv ") + which + ": kernel larger than padded input");
        if (span % spec.stride != 0)
            throw ShapeError(std::string("conv ") + which + ": (" + std::to_string(size) +
                             " - " + std::to_string(spec.kernel) + " + 2*" +
                             std::to_string(spec.padding) + ") is not divisible by stride " +
                             std::to_string(spec.stride));
        return span / spec.stride + 1;
    };
    return {one_dim(input_w, "width"), one_dim(input_h, "height"), spec.out_channels};
}

template <typename T>
class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;

    const std::string& name() const { return name_; }
    virtual const char* kind() const = 0;

    virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

    virtual void collect_params(std::vector<ParamSlot<T>>& out) { (void)out; }
    virtual void collect_state(std::vector<NamedTensor<T>>& out) { (void)out; }
    virtual void init_params(Rng& rng) { (void)rng; }

protected:
    void check_finite(const Tensor<T>& t, const char* stage) const {
        if (finite_checks() && !t.all_finite())
            throw NumericalError(name_ + ": non-finite values after " + stage);
    }

private:
    std::string name_;
};

// y = x W + b over batched rows; weights are stored output-major [out x in] so
// a single-frame decode streams each row contiguously.
template <typename T>
class Linear : public Layer<T> {
public:
    Linear(std::string name, int in_features, int out_features)
        : Layer<T>(std::move(name)), in_(in_features), out_(out_features),
          weight_({out_features, in_features}), bias_({out_features}),
          grad_weight_({out_features, in_features}), grad_bias_({out_features}) {}

    const char* kind() const override { return "linear"; }
    int in_features() const { return in_; }
    int out_features() const { return out_; }
    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }

    void init_params(Rng& rng) override {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
        weight_.fill_uniform(rng, -bound, bound);
        bias_.fill_uniform(rng, -bound, bound);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
        if (x.rank() != 2 || x.dim(1) != in_)
            throw ShapeError(this->name() + ": expected input [batch, " + std::to_string(in_) +
                             "], got " + Tensor<T>::shape_string(x.shape()));
        const int batch = x.dim(0);
        Tensor<T> y({batch, out_});
        for (int b = 0; b < batch; ++b)
            kernels::matvec_bias(weight_.data(), x.data() + static_cast<std::size_t>(b) * in_,
                                 bias_.data(), y.data() + static_cast<std::size_t>(b) * out_,
                                 static_cast<std::size_t>(out_), static_cast<std::size_t>(in_));
        if (mode == Mode::train) cached_input_ = x;
        this->check_finite(y, "forward");
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        const Tensor<T>& x = cached_input_;
        if (x.empty()) throw ShapeError(this->name() + ": backward before train-mode forward");
        const int batch = x.dim(0);
        require_shape(grad_out, {batch, out_}, this->name().c_str());
        Tensor<T> grad_in({batch, in_});
        for (int b = 0; b < batch; ++b) {
            const T* g = grad_out.data() + static_cast<std::size_t>(b) * out_;
            const T* xb = x.data() + static_cast<std::size_t>(b) * in_;
            T* gx = grad_in.data() + static_cast<std::size_t>(b) * in_;
            for (int o = 0; o < out_; ++o) {
                const T go = g[o];
                grad_bias_[static_cast<std::size_t>(o)] += go;
                T* wrow = weight_.data() + static_cast<std::size_t>(o) * in_;
                T* gwrow = grad_weight_.data() + static_cast<std::size_t>(o) * in_;
                for (int i = 0; i < in_; ++i) {
                    gwrow[i] += go * xb[i];
                    gx[i] += go * wrow[i];
                }
            }
        }
        this->check_finite(grad_in, "backward");
        return grad_in;
    }

    void collect_params(std::vector<ParamSlot<T>>& out) override {
        out.push_back({this->name() + ".weight", &weight_, &grad_weight_});
        out.push_back({this->name() + ".bias", &bias_, &grad_bias_});
    }

    void collect_state(std::vector<NamedTensor<T>>& out) override {
        out.push_back({this->name() + ".weight", &weight_});
        out.push_back({this->name() + ".bias", &bias_});
    }

private:
    int in_, out_;
    Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
    Tensor<T> cached_input_;
};

// Strided cross-correlation with zero padding, NCHW layout.
template <typename T>
class Conv2d : public Layer<T> {
public:
    Conv2d(std::string name, ConvSpec spec)
        : Layer<T>(std::move(name)), spec_(spec),
          weight_({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}),
          bias_({spec.out_channels}),
          grad_weight_(weight_.shape()), grad_bias_(bias_.shape()) {}

    const char* kind() const override { return "conv2d"; }
    const ConvSpec& spec() const { return spec_; }
    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }

    void init_params(Rng& rng) override {
        const double fan_in = static_cast<double>(spec_.in_channels) * spec_.kernel * spec_.kernel;
        const double bound = 1.0 / std::sqrt(fan_in);
        weight_.fill_uniform(rng, -bound, bound);
        bias_.fill_uniform(rng, -bound, bound);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
        validate_input(x);
        const int batch = x.dim(0), h = x.dim(2), w = x.dim(3);
        auto [w2, h2, d2] = conv_output_shape(w, h, spec_);
        Tensor<T> y({batch, d2, h2, w2});
        const int C = spec_.in_channels, K = spec_.out_channels, F = spec_.kernel;
        const int S = spec_.stride, P = spec_.padding;
        for (int b = 0; b < batch; ++b)
            for (int k = 0; k < K; ++k)
                for (int oy = 0; oy < h2; ++oy)
                    for (int ox = 0; ox < w2; ++ox) {
                        T acc = bias_[static_cast<std::size_t>(k)];
                        for (int c = 0; c < C; ++c)
                            for (int ky = 0; ky < F; ++ky) {
                                const int iy = oy * S - P + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < F; ++kx) {
                                    const int ix = ox * S - P + kx;
                                    if (ix < 0 || ix >= w) continue;
                                    acc += at(x, b, c, iy, ix, h, w) * wat(weight_, k, c, ky, kx);
                                }
                            }
                        at(y, b, k, oy, ox, h2, w2) = acc;
                    }
        if (mode == Mode::train) cached_input_ = x;
        this->check_finite(y, "forward");
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        const Tensor<T>& x = cached_input_;
        if (x.empty()) throw ShapeError(this->name() + ": backward before train-mode forward");
        const int batch = x.dim(0), h = x.dim(2), w = x.dim(3);
        auto [w2, h2, d2] = conv_output_shape(w, h, spec_);
        require_shape(grad_out, {batch, d2, h2, w2}, this->name().c_str());
        Tensor<T> grad_in(x.shape());
        const int C = spec_.in_channels, K = spec_.out_channels, F = spec_.kernel;
        const int S = spec_.stride, P = spec_.padding;
        for (int b = 0; b < batch; ++b)
            for (int k = 0; k < K; ++k)
                for (int oy = 0; oy < h2; ++oy)
                    for (int ox = 0; ox < w2; ++ox) {
                        const T go = at(grad_out, b, k, oy, ox, h2, w2);
                        grad_bias_[static_cast<std::size_t>(k)] += go;
                        for (int c = 0; c < C; ++c)
                            for (int ky = 0; ky < F; ++ky) {
                                const int iy = oy * S - P + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < F; ++kx) {
                                    const int ix = ox * S - P + kx;
                                    if (ix < 0 || ix >= w) continue;
                                    gwat(k, c, ky, kx) += go * at(x, b, c, iy, ix, h, w);
                                    at(grad_in, b, c, iy, ix, h, w) += go * wat(weight_, k, c, ky, kx);
                                }
                            }
                    }
        this->check_finite(grad_in, "backward");
        return grad_in;
    }

    void collect_params(std::vector<ParamSlot<T>>& out) override {
        out.push_back({this->name() + ".weight", &weight_, &grad_weight_});
        out.push_back({this->name() + ".bias", &bias_, &grad_bias_});
    }

    void collect_state(std::vector<NamedTensor<T>>& out) override {
        out.push_back({this->name() + ".weight", &weight_});
        out.push_back({this->name() + ".bias", &bias_});
    }

private:
    void validate_input(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != spec_.in_channels)
            throw ShapeError(this->name() + ": expected input [batch, " +
                             std::to_string(spec_.in_channels) + ", H, W], got " +
                             Tensor<T>::shape_string(x.shape()));
    }
    static T& at(Tensor<T>& t, int b, int c, int y, int x, int h, int w) {
        return t[((static_cast<std::size_t>(b) * t.dim(1) + c) * h + y) * w + x];
    }
    static const T& at(const Tensor<T>& t, int b, int c, int y, int x, int h, int w) {
        return t[((static_cast<std::size_t>(b) * t.dim(1) + c) * h + y) * w + x];
    }
    T& wat(Tensor<T>& t, int k, int c, int ky, int kx) {
        const int F = spec_.kernel;
        return t[((static_cast<std::size_t>(k) * spec_.in_channels + c) * F + ky) * F + kx];
    }
    T& gwat(int k, int c, int ky, int kx) { return wat(grad_weight_, k, c, ky, kx); }

    ConvSpec spec_;
    Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
    Tensor<T> cached_input_;
};

// Adjoint of Conv2d with the same kernel geometry: scatters each input
// position back over the window it would have been gathered from. With
// F=4, S=2, P=1 this doubles the spatial dimensions exactly.
template <typename T>
class TransposedConv2d : public Layer<T> {
public:
    TransposedConv2d(std::string name, ConvSpec spec)
        : Layer<T>(std::move(name)), spec_(spec),
          weight_({spec.in_channels, spec.out_channels, spec.kernel, spec.kernel}),
          bias_({spec.out_channels}),
          grad_weight_(weight_.shape()), grad_bias_(bias_.shape()) {}

    const char* kind() const override { return "transposed_conv2d"; }
    const ConvSpec& spec() const { return spec_; }
    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }

    static int output_dim(int input_dim, const ConvSpec& spec) {
        return (input_dim - 1) * spec.stride - 2 * spec.padding + spec.kernel;
    }

    void init_params(Rng& rng) override {
        const double fan_in = static_cast<double>(spec_.in_channels) * spec_.kernel * spec_.kernel;
        const double bound = 1.0 / std::sqrt(fan_in);
        weight_.fill_uniform(rng, -bound, bound);
        bias_.fill_uniform(rng, -bound, bound);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
        if (x.rank() != 4 || x.dim(1) != spec_.in_channels)
            throw ShapeError(this->name() + ": expected input [batch, " +
                             std::to_string(spec_.in_channels) + ", h, w], got " +
                             Tensor<T>::shape_string(x.shape()));
        const int batch = x.dim(0), h = x.dim(2), w = x.dim(3);
        const int H = output_dim(h, spec_), W = output_dim(w, spec_);
        if (H <= 0 || W <= 0)
            throw ShapeError(this->name() + ": output dimensions are not positive");
        Tensor<T> y({batch, spec_.out_channels, H, W});
        const int Ci = spec_.in_channels, Co = spec_.out_channels, F = spec_.kernel;
        const int S = spec_.stride, P = spec_.padding;
        for (int b = 0; b < batch; ++b) {
            for (int co = 0; co < Co; ++co) {
                T* plane = y.data() + ((static_cast<std::size_t>(b) * Co + co) * H) * W;
                const T bv = bias_[static_cast<std::size_t>(co)];
                for (int i = 0; i < H * W; ++i) plane[i] = bv;
            }
            for (int ci = 0; ci < Ci; ++ci)
                for (int oy = 0; oy < h; ++oy)
                    for (int ox = 0; ox < w; ++ox) {
                        const T xv = at(x, b, ci, oy, ox, h, w);
                        for (int co = 0; co < Co; ++co)
                            for (int ky = 0; ky < F; ++ky) {
                                const int iy = oy * S - P + ky;
                                if (iy < 0 || iy >= H) continue;
                                for (int kx = 0; kx < F; ++kx) {
                                    const int ix = ox * S - P + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    at(y, b, co, iy, ix, H, W) += xv * wat(weight_, ci, co, ky, kx);
                                }
                            }
                    }
        }
        if (mode == Mode::train) cached_input_ = x;
        this->check_finite(y, "forward");
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        const Tensor<T>& x = cached_input_;
        if (x.empty()) throw ShapeError(this->name() + ": backward before train-mode forward");
        const int batch = x.dim(0), h = x.dim(2), w = x.dim(3);
        const int H = output_dim(h, spec_), W = output_dim(w, spec_);
        require_shape(grad_out, {batch, spec_.out_channels, H, W}, this->name().c_str());
        Tensor<T> grad_in(x.shape());
        const int Ci = spec_.in_channels, Co = spec_.out_channels, F = spec_.kernel;
        const int S = spec_.stride, P = spec_.padding;
        for (int b = 0; b < batch; ++b) {
            for (int co = 0; co < Co; ++co)
                for (int iy = 0; iy < H; ++iy)
                    for (int ix = 0; ix < W; ++ix)
                        grad_bias_[static_cast<std::size_t>(co)] +=
                            at(grad_out, b, co, iy, ix, H, W);
            for (int ci = 0; ci < Ci; ++ci)
                for (int oy = 0; oy < h; ++oy)
                    for (int ox = 0; ox < w; ++ox) {
                        const T xv = at(x, b, ci, oy, ox, h, w);
                        T acc{};
                        for (int co = 0; co < Co; ++co)
                            for (int ky = 0; ky < F; ++ky) {
                                const int iy = oy * S - P + ky;
                                if (iy < 0 || iy >= H) continue;
                                for (int kx = 0; kx < F; ++kx) {
                                    const int ix = ox * S - P + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    const T go = at(grad_out, b, co, iy, ix, H, W);
                                    acc += go * wat(weight_, ci, co, ky, kx);
                                    gwat(ci, co, ky, kx) += go * xv;
                                }
                            }
                        at(grad_in, b, ci, oy, ox, h, w) = acc;
                    }
        }
        this->check_finite(grad_in, "backward");
        return grad_in;
    }

    void collect_params(std::vector<ParamSlot<T>>& out) override {
        out.push_back({this->name() + ".weight", &weight_, &grad_weight_});
        out.push_back({this->name() + ".bias", &bias_, &grad_bias_});
    }

    void collect_state(std::vector<NamedTensor<T>>& out) override {
        out.push_back({this->name() + ".weight", &weight_});
        out.push_back({this->name() + ".bias", &bias_});
    }

private:
    static T& at(Tensor<T>& t, int b, int c, int y, int x, int h, int w) {
        return t[((static_cast<std::size_t>(b) * t.dim(1) + c) * h + y) * w + x];
    }
    static const T& at(const Tensor<T>& t, int b, int c, int y, int x, int h, int w) {
        return t[((static_cast<std::size_t>(b) * t.dim(1) + c) * h + y) * w + x];
    }
    T& wat(Tensor<T>& t, int ci, int co, int ky, int kx) {
        const int F = spec_.kernel;
        return t[((static_cast<std::size_t>(ci) * spec_.out_channels + co) * F + ky) * F + kx];
    }
    T& gwat(int ci, int co, int ky, int kx) { return wat(grad_weight_, ci, co, ky, kx); }

    ConvSpec spec_;
    Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
    Tensor<T> cached_input_;
};

// 2x2 max pooling with stride 2. The gradient flows only to the argmax of each
// window; ties break to the first position in row-major window order.
template <typename T>
class MaxPool2d : public Layer<T> {
public:
    explicit MaxPool2d(std::string name) : Layer<T>(std::move(name)) {}

    const char* kind() const override { return "maxpool2d"; }
    const std::vector<std::size_t>& argmax() const { return argmax_; }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
        if (x.rank() != 4)
            throw ShapeError(this->name() + ": expected input [batch, C, H, W]");
        const int batch = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
        if (h % 2 != 0 || w % 2 != 0)
            throw ShapeError(this->name() + ": spatial dimensions must be even, got " +
                             std::to_string(h) + "x" + std::to_string(w));
        Tensor<T> y({batch, C, h / 2, w / 2});
        argmax_.assign(y.size(), 0);
        input_shape_ = x.shape();
        std::size_t out_idx = 0;
        for (int b = 0; b < batch; ++b)
            for (int c = 0; c < C; ++c) {
                const std::size_t plane = (static_cast<std::size_t>(b) * C + c) *
                                          static_cast<std::size_t>(h) * w;
                for (int oy = 0; oy < h / 2; ++oy)
                    for (int ox = 0; ox < w / 2; ++ox) {
                        std::size_t best = plane + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                        T best_v = x[best];
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::size_t idx =
                                    plane + static_cast<std::size_t>(2 * oy + dy) * w + 2 * ox + dx;
                                if (x[idx] > best_v) {
                                    best_v = x[idx];
                                    best = idx;
                                }
                            }
                        y[out_idx] = best_v;
                        argmax_[out_idx] = best;
                        ++out_idx;
                    }
            }
        (void)mode;
        this->check_finite(y, "forward");
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        if (input_shape_.empty())
            throw ShapeError(this->name() + ": backward before forward");
        if (grad_out.size() != argmax_.size())
            throw ShapeError(this->name() + ": gradient size mismatch");
        Tensor<T> grad_in(input_shape_);
        for (std::size_t i = 0; i < argmax_.size(); ++i) grad_in[argmax_[i]] += grad_out[i];
        this->check_finite(grad_in, "backward");
        return grad_in;
    }

private:
    std::vector<std::size_t> argmax_;
    std::vector<int> input_shape_;
};

// Per-feature batch normalization over [batch, features]. Training mode uses
// batch statistics (population variance) and updates running stats with
// momentum 0.1; eval mode uses the running stats.
template <typename T>
class BatchNorm : public Layer<T> {
public:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    BatchNorm(std::string name, int features)
        : Layer<T>(std::move(name)), features_(features),
          gamma_({features}, T{1}), beta_({features}),
          grad_gamma_({features}), grad_beta_({features}),
          running_mean_({features}), running_var_({features}, T{1}) {}

    const char* kind() const override { return "batchnorm"; }
    Tensor<T>& gamma() { return gamma_; }
    Tensor<T>& beta() { return beta_; }
    Tensor<T>& running_mean() { return running_mean_; }
    Tensor<T>& running_var() { return running_var_; }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
        if (x.rank() != 2 || x.dim(1) != features_)
            throw ShapeError(this->name() + ": expected input [batch, " +
                             std::to_string(features_) + "]");
        const int batch = x.dim(0);
        Tensor<T> y(x.shape());
        if (mode == Mode::train) {
            if (batch < 2)
                throw BatchSizeError(this->name() + ": batch normalization needs batch >= 2 in "
                                                    "train mode, got " + std::to_string(batch));
            mean_.assign(features_, 0.0);
            inv_std_.assign(features_, 0.0);
            for (int b = 0; b < batch; ++b)
                for (int f = 0; f < features_; ++f)
                    mean_[static_cast<std::size_t>(f)] += x[index(b, f)];
            for (double& m : mean_) m /= batch;
            std::vector<double> var(features_, 0.0);
            for (int b = 0; b < batch; ++b)
                for (int f = 0; f < features_; ++f) {
                    const double d = x[index(b, f)] - mean_[static_cast<std::size_t>(f)];
                    var[static_cast<std::size_t>(f)] += d * d;
                }
            for (double& v : var) v /= batch;
            for (int f = 0; f < features_; ++f)
                inv_std_[static_cast<std::size_t>(f)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(f)] + kEps);
            xhat_ = Tensor<T>(x.shape());
            for (int b = 0; b < batch; ++b)
                for (int f = 0; f < features_; ++f) {
                    const double norm =
                        (x[index(b, f)] - mean_[static_cast<std::size_t>(f)]) *
                        inv_std_[static_cast<std::size_t>(f)];
                    xhat_[index(b, f)] = static_cast<T>(norm);
                    y[index(b, f)] = static_cast<T>(norm * gamma_[static_cast<std::size_t>(f)] +
                                                    beta_[static_cast<std::size_t>(f)]);
                }
            for (int f = 0; f < features_; ++f) {
                auto fi = static_cast<std::size_t>(f);
                running_mean_[fi] = static_cast<T>((1.0 - kMomentum) * running_mean_[fi] +
                                                   kMomentum * mean_[fi]);
                running_var_[fi] = static_cast<T>((1.0 - kMomentum) * running_var_[fi] +
                                                  kMomentum * var[fi]);
            }
        } else {
            for (int b = 0; b < batch; ++b)
                for (int f = 0; f < features_; ++f) {
                    auto fi = static_cast<std::size_t>(f);
                    const double norm = (x[index(b, f)] - running_mean_[fi]) /
                                        std::sqrt(static_cast<double>(running_var_[fi]) + kEps);
                    y[index(b, f)] = static_cast<T>(norm * gamma_[fi] + beta_[fi]);
                }
        }
        this->check_finite(y, "forward");
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        if (xhat_.empty()) throw ShapeError(this->name() + ": backward before train-mode forward");
        const int batch = xhat_.dim(0);
        require_shape(grad_out, xhat_.shape(), this->name().c_str());
        Tensor<T> grad_in(xhat_.shape());
        for (int f = 0; f < features_; ++f) {
            auto fi = static_cast<std::size_t>(f);
            double sum_g = 0.0, sum_g_xhat = 0.0;
            for (int b = 0; b < batch; ++b) {
                const double g = grad_out[index(b, f)];
                sum_g += g;
                sum_g_xhat += g * xhat_[index(b, f)];
            }
            grad_gamma_[fi] += static_cast<T>(sum_g_xhat);
            grad_beta_[fi] += static_cast<T>(sum_g);
            const double scale = gamma_[fi] * inv_std_[fi] / batch;
            for (int b = 0; b < batch; ++b) {
                const double g = grad_out[index(b, f)];
                grad_in[index(b, f)] = static_cast<T>(
                    scale * (batch * g - sum_g - xhat_[index(b, f)] * sum_g_xhat));
            }
        }
        this->check_finite(grad_in, "backward");
        return grad_in;
    }

    void collect_params(std::vector<ParamSlot<T>>& out) override {
        out.push_back({this->name() + ".gamma", &gamma_, &grad_gamma_});
        out.push_back({this->name() + ".beta", &beta_, &grad_beta_});
    }

    void collect_state(std::vector<NamedTensor<T>>& out) override {
        out.push_back({this->name() + ".gamma", &gamma_});
        out.push_back({this->name() + ".beta", &beta_});
        out.push_back({this->name() + ".running_mean", &running_mean_});
        out.push_back({this->name() + ".running_var", &running_var_});
    }

private:
    std::size_t index(int b, int f) const {
        return static_cast<std::size_t>(b) * features_ + f;
    }

    int features_;
    Tensor<T> gamma_, beta_, grad_gamma_, grad_beta_;
    Tensor<T> running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<double> mean_, inv_std_;
};

enum class ActKind { sigmoid, tanh, relu, leaky_relu };

inline const char* activation_name(ActKind kind) {
    switch (kind) {
        case ActKind::sigmoid: return "sigmoid";
        case ActKind::tanh: return "tanh";
        case ActKind::relu: return "relu";
        case ActKind::leaky_relu: return "leaky_relu";
    }
    return "?";
}

template <typename T>
inline T apply_activation(ActKind kind, T x, T slope) {
    switch (kind) {
        case ActKind::sigmoid: return static_cast<T>(1) / (static_cast<T>(1) + std::exp(-x));
        case ActKind::tanh: return std::tanh(x);
        case ActKind::relu: return x > T{} ? x : T{};
        case ActKind::leaky_relu: return x > T{} ? x : slope * x;
    }
    return x;
}

// Derivative expressed through the cached forward output.
template <typename T>
inline T activation_derivative(ActKind kind, T y, T slope) {
    switch (kind) {
        case ActKind::sigmoid: return y * (static_cast<T>(1) - y);
        case ActKind::tanh: return static_cast<T>(1) - y * y;
        case ActKind::relu: return y > T{} ? static_cast<T>(1) : T{};
        case ActKind::leaky_relu: return y > T{} ? static_cast<T>(1) : slope;
    }
    return T{};
}

template <typename T>
class Activation : public Layer<T> {
public:
    Activation(std::string name, ActKind act, T slope = static_cast<T>(0.2))
        : Layer<T>(std::move(name)), act_(act), slope_(slope) {
        if (act == ActKind::leaky_relu && (slope <= T{} || slope >= static_cast<T>(1)))
            throw ConfigError(this->name() + ": leaky slope must be in (0, 1)");
    }

    const char* kind() const override { return "activation"; }
    ActKind act() const { return act_; }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
        Tensor<T> y(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = apply_activation(act_, x[i], slope_);
        if (mode == Mode::train) cached_output_ = y;
        this->check_finite(y, "forward");
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        if (cached_output_.empty())
            throw ShapeError(this->name() + ": backward before train-mode forward");
        require_shape(grad_out, cached_output_.shape(), this->name().c_str());
        Tensor<T> grad_in(grad_out.shape());
        for (std::size_t i = 0; i < grad_out.size(); ++i)
            grad_in[i] = grad_out[i] * activation_derivative(act_, cached_output_[i], slope_);
        this->check_finite(grad_in, "backward");
        return grad_in;
    }

private:
    ActKind act_;
    T slope_;
    Tensor<T> cached_output_;
};

// [batch, C, H, W] -> [batch, C*H*W]
template <typename T>
class Flatten : public Layer<T> {
public:
    explicit Flatten(std::string name) : Layer<T>(std::move(name)) {}
    const char* kind() const override { return "flatten"; }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
        (void)mode;
        if (x.rank() != 4) throw ShapeError(this->name() + ": expected rank-4 input");
        input_shape_ = x.shape();
        const int flat = x.dim(1) * x.dim(2) * x.dim(3);
        return x.reshaped({x.dim(0), flat});
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        return grad_out.reshaped(input_shape_);
    }

private:
    std::vector<int> input_shape_;
};

// [batch, C*H*W] -> [batch, C, H, W]
template <typename T>
class Unflatten : public Layer<T> {
public:
    Unflatten(std::string name, int channels, int height, int width)
        : Layer<T>(std::move(name)), c_(channels), h_(height), w_(width) {}
    const char* kind() const override { return "unflatten"; }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
        (void)mode;
        if (x.rank() != 2 || x.dim(1) != c_ * h_ * w_)
            throw ShapeError(this->name() + ": expected input [batch, " +
                             std::to_string(c_ * h_ * w_) + "]");
        return x.reshaped({x.dim(0), c_, h_, w_});
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        return grad_out.reshaped({grad_out.dim(0), c_ * h_ * w_});
    }

private:
    int c_, h_, w_;
};

// Sequential container; backward runs layers in reverse.
template <typename T>
class LayerStack {
public:
    LayerStack() = default;
    LayerStack(LayerStack&&) = default;
    LayerStack& operator=(LayerStack&&) = default;

    template <typename L, typename... Args>
    L* emplace(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L* raw = layer.get();
        layers_.push_back(std::move(layer));
        return raw;
    }

    bool empty() const { return layers_.empty(); }
    std::size_t size() const { return layers_.size(); }
    Layer<T>& operator[](std::size_t i) { return *layers_[i]; }
    const Layer<T>& operator[](std::size_t i) const { return *layers_[i]; }

    Tensor<T> forward(Tensor<T> x, Mode mode) {
        for (auto& layer : layers_) x = layer->forward(x, mode);
        return x;
    }

    Tensor<T> backward(Tensor<T> grad) {
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
            grad = (*it)->backward(grad);
        return grad;
    }

    void collect_params(std::vector<ParamSlot<T>>& out) {
        for (auto& layer : layers_) layer->collect_params(out);
    }

    void collect_state(std::vector<NamedTensor<T>>& out) {
        for (auto& layer : layers_) layer->collect_state(out);
    }

    void init_params(Rng& rng) {
        for (auto& layer : layers_) layer->init_params(rng);
    }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace vc4d
