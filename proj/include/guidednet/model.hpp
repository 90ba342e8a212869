#pragma once

#include "guidednet/layers.hpp"
#include "guidednet/priors.hpp"
#include "guidednet/rng.hpp"
#include "guidednet/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace guidednet::nnet {

/// Which prior channels lead the stem output. Baseline is a plain learned stem.
enum class StemVariant { Baseline, DarkOnly, BrightOnly, DarkBright };

std::string_view to_string(StemVariant v);
/// Accepts baseline | dark_only | bright_only | dark_bright (and the short forms base, D, B, DB).
StemVariant parse_stem_variant(std::string_view text);
int prior_channel_count(StemVariant v);
bool uses_bright(StemVariant v);
bool uses_dark(StemVariant v);

struct GuidedStemConfig {
    StemVariant variant = StemVariant::DarkBright;
    int total_channels = 64;
    int kernel_size = 7;
    int stride = 2;
    int padding = 3;
    priors::PriorConfig prior;  // frozen Gaussian path; its geometry must match the learned conv

    int learned_channels() const { return total_channels - prior_channel_count(variant); }
    void validate() const;
};

struct ConvBlockConfig {
    int out_channels = 32;
    int kernel = 3;
    int stride = 2;
};

struct ModelConfig {
    GuidedStemConfig stem;
    std::vector<ConvBlockConfig> body{{32, 3, 2}, {32, 3, 2}};
    int class_count = 3;

    void validate() const;
    /// Stable textual form of every geometry-relevant field.
    std::string canonical_text() const;
    /// 32-bit FNV-1a of canonical_text().
    std::uint32_t fingerprint() const;

    static ModelConfig for_variant(StemVariant v);
};

enum class ParamKind : std::uint8_t { Learnable = 0, Frozen = 1, Buffer = 2 };

template <typename T>
struct Param {
    std::string name;
    std::vector<int> dims;
    ParamKind kind = ParamKind::Learnable;
    std::vector<T> value;
    std::vector<T> grad;  // same shape as value for learnable tensors, empty otherwise

    std::size_t size() const { return value.size(); }
    bool learnable() const { return kind == ParamKind::Learnable; }
};

/// Ordered named tensors. Order is the serialization and initialization order.
template <typename T>
class ModelParams {
public:
    std::size_t add(std::string name, std::vector<int> dims, ParamKind kind, T fill = T(0));

    Param<T>& operator[](std::size_t i) { return params_[i]; }
    const Param<T>& operator[](std::size_t i) const { return params_[i]; }
    Param<T>* find(std::string_view name);
    const Param<T>* find(std::string_view name) const;

    std::vector<Param<T>>& all() { return params_; }
    const std::vector<Param<T>>& all() const { return params_; }
    std::size_t count() const { return params_.size(); }

    void zero_grad();

private:
    std::vector<Param<T>> params_;
};

/// Element count of all learnable tensors (frozen kernel and running statistics excluded).
template <typename T>
std::size_t param_count(const ModelParams<T>& params);

/// b = sqrt(6 / fan_in).
double kaiming_bound(std::size_t fan_in);

/// Uniform in [-b, b] with fan_in = product of all dims after the first.
template <typename T>
std::vector<T> kaiming_uniform_init(const std::vector<int>& dims, Rng& rng);

/// w <- w - lr * g for learnable tensors, then zero their gradients.
template <typename T>
void sgd_step(ModelParams<T>& params, double lr);

/// Fault injection used to self-test the gradient checker.
enum class Fault { None, FlipLinearWeightGrad };

/// Prior-guided CNN: guided stem, conv-BN-ReLU blocks, global average pool, linear head.
template <typename T>
class Model {
public:
    explicit Model(ModelConfig config);

    /// Kaiming-uniform weights, zero biases/shifts, unit BN scales, fresh running stats.
    void initialize(std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ModelParams<T>& params() { return params_; }
    const ModelParams<T>& params() const { return params_; }

    /// Stem output (N, K, H/2, W/2): [bright][dark][learned...] depending on the variant.
    /// Throws OddSpatialDim for odd input extents.
    Tensor<T> stem_forward(const Tensor<T>& input);

    /// Logits (N, classes, 1, 1). Caches activations for backward().
    Tensor<T> forward(const Tensor<T>& input, Mode mode);

    /// Back-propagates logit gradients, accumulating into parameter gradients.
    /// The stem's frozen path and the input receive no gradient.
    void backward(const Tensor<T>& grad_logits);

    /// Post-ReLU activation of the last conv block from the latest forward().
    const Tensor<T>& last_features() const { return block_cache_.back().activated; }
    /// Gradient w.r.t. last_features() from the latest backward().
    const Tensor<T>& last_features_grad() const { return last_features_grad_; }

    void set_fault(Fault f) { fault_ = f; }

    /// Sign (> 0) of every ReLU input from the latest forward(); used for kink detection.
    std::vector<bool> relu_pattern() const;

    std::span<const T> frozen_kernel() const;

private:
    struct BlockIndex {
        std::size_t conv = 0, gamma = 0, beta = 0, running_mean = 0, running_var = 0;
        ConvSpec spec;
    };
    struct BlockCache {
        Tensor<T> input;
        Tensor<T> conv_out;
        BatchNormCache<T> bn;
        Tensor<T> bn_out;
        Tensor<T> activated;
    };

    ModelConfig config_;
    ModelParams<T> params_;
    std::optional<std::size_t> kernel_index_;
    std::size_t stem_conv_ = 0;
    ConvSpec stem_spec_;
    std::vector<BlockIndex> blocks_;
    std::size_t fc_weight_ = 0, fc_bias_ = 0;
    int fc_in_ = 0;

    Tensor<T> input_cache_;
    std::vector<BlockCache> block_cache_;
    Tensor<T> pooled_cache_;
    Tensor<T> last_features_grad_;
    Fault fault_ = Fault::None;
};

/// Builds the float batch tensor (N, 3, H, W) from equally sized images.
template <typename T>
Tensor<T> make_batch(const std::vector<const Raster<float>*>& images);

}  // namespace guidednet::nnet
