#pragma once

#include "guidednet/tensor.hpp"

#include <span>
#include <vector>

namespace guidednet::nnet {

enum class Mode { Train, Eval };

constexpr double kBatchNormEpsilon = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

// Backward functions accumulate (+=) into parameter-gradient spans.

struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel = 1;
    int stride = 1;
    int padding = 0;

    int out_extent(int n) const { return (n + 2 * padding - kernel) / stride + 1; }
    std::size_t weight_count() const {
        return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
    }
};

/// Cross-correlation with zero padding, no bias. Weights are (out, in, k, k) row-major.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, std::span<const T> weights, const ConvSpec& spec);

/// grad_input may be null when the input gradient is not needed.
template <typename T>
void conv2d_backward(const Tensor<T>& input, std::span<const T> weights, const ConvSpec& spec,
                     const Tensor<T>& grad_output, Tensor<T>* grad_input, std::span<T> grad_weights);

template <typename T>
struct BatchNormCache {
    Mode mode = Mode::Train;
    std::vector<T> inv_std;
    Tensor<T> normalized;
};

/// Per-channel batch normalization over (N, H, W). Train mode uses the biased batch
/// variance and folds the unbiased one into the running estimate with momentum 0.1.
/// Throws DegenerateBatch for a train-mode batch of one.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, std::span<const T> gamma, std::span<const T> beta,
                            std::span<T> running_mean, std::span<T> running_var, Mode mode,
                            BatchNormCache<T>* cache);

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& grad_output, std::span<const T> gamma,
                             const BatchNormCache<T>& cache, std::span<T> grad_gamma, std::span<T> grad_beta);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

/// Gradient gated by the forward input (derivative 0 at x <= 0).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output);

/// (N, C, H, W) -> (N, C, 1, 1) spatial mean.
template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& input);

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_output);

/// y = W x + b with x the flattened (C, H, W) sample; W is (out, in) row-major.
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, std::span<const T> weight, std::span<const T> bias, int out_features);

template <typename T>
Tensor<T> linear_backward(const Tensor<T>& input, std::span<const T> weight, int out_features,
                          const Tensor<T>& grad_output, std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad_logits;  // (softmax - onehot) / N
};

/// Mean over the batch of -log softmax(logits)[label], max-subtracted.
/// Throws LabelOutOfRange for labels outside [0, classes).
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Row-wise softmax of (N, K, 1, 1) logits.
template <typename T>
std::vector<double> softmax(const Tensor<T>& logits, int row);

}  // namespace guidednet::nnet
