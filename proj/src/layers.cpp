#include "guidednet/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

namespace guidednet::nnet {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_conv(const Shape& in, std::size_t weight_count, const ConvSpec& spec) {
    if (in.c != spec.in_channels) {
        throw ShapeMismatch("conv2d expects " + std::to_string(spec.in_channels) + " input channels, got " +
                            std::to_string(in.c));
    }
    if (weight_count != spec.weight_count()) {
        throw ShapeMismatch("conv2d weight count " + std::to_string(weight_count) + " does not match spec");
    }
    if (spec.out_extent(in.h) < 1 || spec.out_extent(in.w) < 1) {
        throw ShapeMismatch("conv2d input " + in.to_string() + " smaller than kernel footprint");
    }
}

// Column layout: row (ci * k + ky) * k + kx, column oy * ow + ox.
template <typename T>
void im2col(const T* sample, const Shape& in, const ConvSpec& spec, int oh, int ow, T* col) {
    const int k = spec.kernel;
    const std::size_t cols = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < in.c; ++ci) {
        const T* plane = sample + static_cast<std::size_t>(ci) * in.h * in.w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + (static_cast<std::size_t>(ci * k + ky) * k + kx) * cols;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * spec.stride - spec.padding + ky;
                    T* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= in.h) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * in.w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * spec.stride - spec.padding + kx;
                        dst[ox] = (ix >= 0 && ix < in.w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const Shape& in, const ConvSpec& spec, int oh, int ow, T* sample) {
    const int k = spec.kernel;
    const std::size_t cols = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < in.c; ++ci) {
        T* plane = sample + static_cast<std::size_t>(ci) * in.h * in.w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + (static_cast<std::size_t>(ci * k + ky) * k + kx) * cols;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * spec.stride - spec.padding + ky;
                    if (iy < 0 || iy >= in.h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * ow;
                    T* dst = plane + static_cast<std::size_t>(iy) * in.w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * spec.stride - spec.padding + kx;
                        if (ix >= 0 && ix < in.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

void check_same(const Shape& a, const Shape& b, const char* what) {
    if (!(a == b)) throw ShapeMismatch(std::string(what) + ": " + a.to_string() + " vs " + b.to_string());
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, std::span<const T> weights, const ConvSpec& spec) {
    const Shape& in = input.shape();
    check_conv(in, weights.size(), spec);
    const int oh = spec.out_extent(in.h);
    const int ow = spec.out_extent(in.w);
    const int rows = spec.in_channels * spec.kernel * spec.kernel;
    const int cols = oh * ow;

    Tensor<T> out(Shape{in.n, spec.out_channels, oh, ow});
    std::vector<T> col(static_cast<std::size_t>(rows) * cols);
    const Eigen::Map<const RowMatrix<T>> w(weights.data(), spec.out_channels, rows);
    const Eigen::Map<const RowMatrix<T>> c(col.data(), rows, cols);
    for (int n = 0; n < in.n; ++n) {
        im2col(input.sample(n).data(), in, spec, oh, ow, col.data());
        Eigen::Map<RowMatrix<T>> o(out.sample(n).data(), spec.out_channels, cols);
        o.noalias() = w * c;
    }
    return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& input, std::span<const T> weights, const ConvSpec& spec,
                     const Tensor<T>& grad_output, Tensor<T>* grad_input, std::span<T> grad_weights) {
    const Shape& in = input.shape();
    check_conv(in, weights.size(), spec);
    const int oh = spec.out_extent(in.h);
    const int ow = spec.out_extent(in.w);
    check_same(grad_output.shape(), Shape{in.n, spec.out_channels, oh, ow}, "conv2d grad_output");
    if (grad_weights.size() != weights.size()) throw ShapeMismatch("conv2d grad_weights size mismatch");
    const int rows = spec.in_channels * spec.kernel * spec.kernel;
    const int cols = oh * ow;

    if (grad_input) *grad_input = Tensor<T>(in, T(0));
    std::vector<T> col(static_cast<std::size_t>(rows) * cols);
    std::vector<T> grad_col(grad_input ? col.size() : 0);
    const Eigen::Map<const RowMatrix<T>> w(weights.data(), spec.out_channels, rows);
    Eigen::Map<RowMatrix<T>> gw(grad_weights.data(), spec.out_channels, rows);
    const Eigen::Map<const RowMatrix<T>> c(col.data(), rows, cols);
    for (int n = 0; n < in.n; ++n) {
        const Eigen::Map<const RowMatrix<T>> go(grad_output.sample(n).data(), spec.out_channels, cols);
        im2col(input.sample(n).data(), in, spec, oh, ow, col.data());
        gw.noalias() += go * c.transpose();
        if (grad_input) {
            Eigen::Map<RowMatrix<T>> gc(grad_col.data(), rows, cols);
            gc.noalias() = w.transpose() * go;
            col2im_add(grad_col.data(), in, spec, oh, ow, grad_input->sample(n).data());
        }
    }
}

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, std::span<const T> gamma, std::span<const T> beta,
                            std::span<T> running_mean, std::span<T> running_var, Mode mode,
                            BatchNormCache<T>* cache) {
    const Shape& s = input.shape();
    const auto channels = static_cast<std::size_t>(s.c);
    if (gamma.size() != channels || beta.size() != channels || running_mean.size() != channels ||
        running_var.size() != channels) {
        throw ShapeMismatch("batchnorm parameter size does not match " + std::to_string(s.c) + " channels");
    }
    if (mode == Mode::Train && s.n < 2) {
        throw DegenerateBatch("batchnorm in train mode needs a batch of at least 2, got " + std::to_string(s.n));
    }
    const std::size_t plane = s.plane_size();
    const double count = static_cast<double>(s.n) * plane;

    Tensor<T> out(s);
    Tensor<T> normalized(s);
    std::vector<T> inv_std(channels);
    for (int c = 0; c < s.c; ++c) {
        double mean = 0.0;
        double var = 0.0;
        if (mode == Mode::Train) {
            for (int n = 0; n < s.n; ++n) {
                const T* x = &input(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) mean += x[i];
            }
            mean /= count;
            for (int n = 0; n < s.n; ++n) {
                const T* x = &input(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = x[i] - mean;
                    var += d * d;
                }
            }
            var /= count;
            const double unbiased = count > 1 ? var * count / (count - 1.0) : var;
            running_mean[c] = static_cast<T>((1.0 - kBatchNormMomentum) * running_mean[c] + kBatchNormMomentum * mean);
            running_var[c] =
                static_cast<T>((1.0 - kBatchNormMomentum) * running_var[c] + kBatchNormMomentum * unbiased);
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const T istd = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEpsilon));
        const T m = static_cast<T>(mean);
        inv_std[c] = istd;
        for (int n = 0; n < s.n; ++n) {
            const T* x = &input(n, c, 0, 0);
            T* xh = &normalized(n, c, 0, 0);
            T* y = &out(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (x[i] - m) * istd;
                y[i] = gamma[c] * xh[i] + beta[c];
            }
        }
    }
    if (cache) {
        cache->mode = mode;
        cache->inv_std = std::move(inv_std);
        cache->normalized = std::move(normalized);
    }
    return out;
}

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& grad_output, std::span<const T> gamma,
                             const BatchNormCache<T>& cache, std::span<T> grad_gamma, std::span<T> grad_beta) {
    const Shape& s = grad_output.shape();
    check_same(s, cache.normalized.shape(), "batchnorm grad_output");
    const std::size_t plane = s.plane_size();
    const double count = static_cast<double>(s.n) * plane;
    Tensor<T> grad_input(s);
    for (int c = 0; c < s.c; ++c) {
        double sum_dy = 0.0;
        double sum_dy_xh = 0.0;
        for (int n = 0; n < s.n; ++n) {
            const T* dy = &grad_output(n, c, 0, 0);
            const T* xh = &cache.normalized(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += dy[i];
                sum_dy_xh += static_cast<double>(dy[i]) * xh[i];
            }
        }
        grad_gamma[c] += static_cast<T>(sum_dy_xh);
        grad_beta[c] += static_cast<T>(sum_dy);
        const T scale = gamma[c] * cache.inv_std[c];
        if (cache.mode == Mode::Eval) {
            for (int n = 0; n < s.n; ++n) {
                const T* dy = &grad_output(n, c, 0, 0);
                T* dx = &grad_input(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) dx[i] = scale * dy[i];
            }
            continue;
        }
        const T mean_dy = static_cast<T>(sum_dy / count);
        const T mean_dy_xh = static_cast<T>(sum_dy_xh / count);
        for (int n = 0; n < s.n; ++n) {
            const T* dy = &grad_output(n, c, 0, 0);
            const T* xh = &cache.normalized(n, c, 0, 0);
            T* dx = &grad_input(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) dx[i] = scale * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
        }
    }
    return grad_input;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    const auto in = input.values();
    auto o = out.values();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] < T(0) ? T(0) : in[i];  // NaN passes through
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output) {
    check_same(input.shape(), grad_output.shape(), "relu grad_output");
    Tensor<T> grad(input.shape());
    const auto in = input.values();
    const auto go = grad_output.values();
    auto g = grad.values();
    for (std::size_t i = 0; i < in.size(); ++i) g[i] = in[i] > T(0) ? go[i] : T(0);
    return grad;
}

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& input) {
    const Shape& s = input.shape();
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    const std::size_t plane = s.plane_size();
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const T* x = &input(n, c, 0, 0);
            double sum = 0.0;
            for (std::size_t i = 0; i < plane; ++i) sum += x[i];
            out(n, c, 0, 0) = static_cast<T>(sum / static_cast<double>(plane));
        }
    }
    return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_output) {
    check_same(grad_output.shape(), Shape{input_shape.n, input_shape.c, 1, 1}, "gap grad_output");
    Tensor<T> grad(input_shape);
    const std::size_t plane = input_shape.plane_size();
    const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
    for (int n = 0; n < input_shape.n; ++n) {
        for (int c = 0; c < input_shape.c; ++c) {
            const T g = grad_output(n, c, 0, 0) * inv;
            T* dx = &grad(n, c, 0, 0);
            std::fill(dx, dx + plane, g);
        }
    }
    return grad;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, std::span<const T> weight, std::span<const T> bias,
                         int out_features) {
    const Shape& s = input.shape();
    const auto in_features = s.sample_size();
    if (weight.size() != in_features * out_features || bias.size() != static_cast<std::size_t>(out_features)) {
        throw ShapeMismatch("linear layer expects " + std::to_string(in_features) + " inputs, got weights for " +
                            std::to_string(weight.size() / std::max(out_features, 1)));
    }
    Tensor<T> out(Shape{s.n, out_features, 1, 1});
    for (int n = 0; n < s.n; ++n) {
        const auto x = input.sample(n);
        for (int o = 0; o < out_features; ++o) {
            const T* w = weight.data() + static_cast<std::size_t>(o) * in_features;
            T acc = bias[o];
            for (std::size_t i = 0; i < in_features; ++i) acc += w[i] * x[i];
            out(n, o, 0, 0) = acc;
        }
    }
    return out;
}

template <typename T>
Tensor<T> linear_backward(const Tensor<T>& input, std::span<const T> weight, int out_features,
                          const Tensor<T>& grad_output, std::span<T> grad_weight, std::span<T> grad_bias) {
    const Shape& s = input.shape();
    const auto in_features = s.sample_size();
    check_same(grad_output.shape(), Shape{s.n, out_features, 1, 1}, "linear grad_output");
    if (weight.size() != in_features * out_features) throw ShapeMismatch("linear weight size mismatch");
    Tensor<T> grad_input(s, T(0));
    for (int n = 0; n < s.n; ++n) {
        const auto x = input.sample(n);
        auto dx = grad_input.sample(n);
        for (int o = 0; o < out_features; ++o) {
            const T g = grad_output(n, o, 0, 0);
            const T* w = weight.data() + static_cast<std::size_t>(o) * in_features;
            T* gw = grad_weight.data() + static_cast<std::size_t>(o) * in_features;
            grad_bias[o] += g;
            for (std::size_t i = 0; i < in_features; ++i) {
                gw[i] += g * x[i];
                dx[i] += g * w[i];
            }
        }
    }
    return grad_input;
}

template <typename T>
std::vector<double> softmax(const Tensor<T>& logits, int row) {
    const int k = logits.shape().c;
    std::vector<double> p(k);
    double peak = logits(row, 0, 0, 0);
    for (int j = 1; j < k; ++j) peak = std::max(peak, static_cast<double>(logits(row, j, 0, 0)));
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
        p[j] = std::exp(static_cast<double>(logits(row, j, 0, 0)) - peak);
        total += p[j];
    }
    for (double& v : p) v /= total;
    return p;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    const Shape& s = logits.shape();
    if (s.h != 1 || s.w != 1) throw ShapeMismatch("logits must be (N, K, 1, 1), got " + s.to_string());
    if (labels.size() != static_cast<std::size_t>(s.n)) {
        throw ShapeMismatch("label count " + std::to_string(labels.size()) + " does not match batch " +
                            std::to_string(s.n));
    }
    LossResult<T> result{0.0, Tensor<T>(s)};
    const double inv_n = 1.0 / s.n;
    for (int n = 0; n < s.n; ++n) {
        const int label = labels[n];
        if (label < 0 || label >= s.c) {
            throw LabelOutOfRange("label " + std::to_string(label) + " outside [0, " + std::to_string(s.c) + ")");
        }
        double peak = logits(n, 0, 0, 0);
        for (int j = 1; j < s.c; ++j) peak = std::max(peak, static_cast<double>(logits(n, j, 0, 0)));
        double total = 0.0;
        for (int j = 0; j < s.c; ++j) total += std::exp(static_cast<double>(logits(n, j, 0, 0)) - peak);
        const double log_z = peak + std::log(total);
        result.loss += (log_z - static_cast<double>(logits(n, label, 0, 0))) * inv_n;
        for (int j = 0; j < s.c; ++j) {
            const double p = std::exp(static_cast<double>(logits(n, j, 0, 0)) - log_z);
            result.grad_logits(n, j, 0, 0) = static_cast<T>((p - (j == label ? 1.0 : 0.0)) * inv_n);
        }
    }
    return result;
}

#define GUIDEDNET_INSTANTIATE(T)                                                                               \
    template Tensor<T> conv2d_forward<T>(const Tensor<T>&, std::span<const T>, const ConvSpec&);               \
    template void conv2d_backward<T>(const Tensor<T>&, std::span<const T>, const ConvSpec&, const Tensor<T>&, \
                                     Tensor<T>*, std::span<T>);                                               \
    template Tensor<T> batchnorm_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,         \
                                            std::span<T>, std::span<T>, Mode, BatchNormCache<T>*);            \
    template Tensor<T> batchnorm_backward<T>(const Tensor<T>&, std::span<const T>, const BatchNormCache<T>&,  \
                                             std::span<T>, std::span<T>);                                     \
    template Tensor<T> relu_forward<T>(const Tensor<T>&);                                                      \
    template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> global_avg_pool_forward<T>(const Tensor<T>&);                                           \
    template Tensor<T> global_avg_pool_backward<T>(const Shape&, const Tensor<T>&);                            \
    template Tensor<T> linear_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, int);       \
    template Tensor<T> linear_backward<T>(const Tensor<T>&, std::span<const T>, int, const Tensor<T>&,         \
                                         std::span<T>, std::span<T>);                                         \
    template std::vector<double> softmax<T>(const Tensor<T>&, int);                                            \
    template LossResult<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);

GUIDEDNET_INSTANTIATE(float)
GUIDEDNET_INSTANTIATE(double)

#undef GUIDEDNET_INSTANTIATE

}  // namespace guidednet::nnet
