#include "guidednet/model.hpp"

#include "guidednet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace guidednet::nnet {

std::string_view to_string(StemVariant v) {
    switch (v) {
        case StemVariant::Baseline: return "baseline";
        case StemVariant::DarkOnly: return "dark_only";
        case StemVariant::BrightOnly: return "bright_only";
        case StemVariant::DarkBright: return "dark_bright";
    }
    return "unknown";
}

StemVariant parse_stem_variant(std::string_view text) {
    if (text == "baseline" || text == "base") return StemVariant::Baseline;
    if (text == "dark_only" || text == "D") return StemVariant::DarkOnly;
    if (text == "bright_only" || text == "B") return StemVariant::BrightOnly;
    if (text == "dark_bright" || text == "DB") return StemVariant::DarkBright;
    throw InvalidConfig("unknown stem variant '" + std::string(text) +
                        "' (expected baseline, dark_only, bright_only or dark_bright)");
}

bool uses_bright(StemVariant v) { return v == StemVariant::BrightOnly || v == StemVariant::DarkBright; }
bool uses_dark(StemVariant v) { return v == StemVariant::DarkOnly || v == StemVariant::DarkBright; }
int prior_channel_count(StemVariant v) { return int(uses_bright(v)) + int(uses_dark(v)); }

void GuidedStemConfig::validate() const {
    if (learned_channels() <= 0) {
        throw InvalidConfig("stem needs at least one learned channel; total_channels=" +
                            std::to_string(total_channels));
    }
    if (kernel_size < 1 || kernel_size % 2 == 0 || stride < 1 || padding < 0) {
        throw InvalidConfig("stem conv needs an odd kernel, stride >= 1 and padding >= 0");
    }
    if (prior_channel_count(variant) > 0) {
        prior.validate();
        if (prior.stride != stride || prior.kernel_size - 2 * prior.padding != kernel_size - 2 * padding) {
            throw InvalidConfig("prior path geometry must produce the same extent as the learned stem conv");
        }
    }
}

void ModelConfig::validate() const {
    stem.validate();
    if (body.empty()) throw InvalidConfig("model body needs at least one conv block");
    for (const ConvBlockConfig& b : body) {
        if (b.out_channels < 1 || b.kernel < 1 || b.kernel % 2 == 0 || b.stride < 1) {
            throw InvalidConfig("conv block needs out_channels >= 1, odd kernel and stride >= 1");
        }
    }
    if (class_count < 2) throw InvalidConfig("class_count must be >= 2");
}

std::string ModelConfig::canonical_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "guidednet/v1;stem=" << to_string(stem.variant) << ";K=" << stem.total_channels
       << ";conv=" << stem.kernel_size << "/" << stem.stride << "/" << stem.padding;
    if (prior_channel_count(stem.variant) > 0) {
        os << ";gauss=" << stem.prior.kernel_size << "/" << stem.prior.sigma << "/" << stem.prior.stride << "/"
           << stem.prior.padding;
    }
    os << ";body=";
    for (const ConvBlockConfig& b : body) os << "[conv" << b.kernel << "x" << b.kernel << ":" << b.out_channels << "/" << b.stride << ",bn,relu]";
    os << ";gap;linear;classes=" << class_count;
    return os.str();
}

std::uint32_t ModelConfig::fingerprint() const {
    std::uint32_t h = 2166136261u;
    for (unsigned char ch : canonical_text()) {
        h ^= ch;
        h *= 16777619u;
    }
    return h;
}

ModelConfig ModelConfig::for_variant(StemVariant v) {
    ModelConfig cfg;
    cfg.stem.variant = v;
    return cfg;
}

template <typename T>
std::size_t ModelParams<T>::add(std::string name, std::vector<int> dims, ParamKind kind, T fill) {
    Param<T> p;
    p.name = std::move(name);
    p.kind = kind;
    const std::size_t n = std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                                          [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
    p.dims = std::move(dims);
    p.value.assign(n, fill);
    if (kind == ParamKind::Learnable) p.grad.assign(n, T(0));
    params_.push_back(std::move(p));
    return params_.size() - 1;
}

template <typename T>
Param<T>* ModelParams<T>::find(std::string_view name) {
    for (Param<T>& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

template <typename T>
const Param<T>* ModelParams<T>::find(std::string_view name) const {
    for (const Param<T>& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

template <typename T>
void ModelParams<T>::zero_grad() {
    for (Param<T>& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
}

template <typename T>
std::size_t param_count(const ModelParams<T>& params) {
    std::size_t total = 0;
    for (const Param<T>& p : params.all()) {
        if (p.learnable()) total += p.size();
    }
    return total;
}

double kaiming_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

template <typename T>
std::vector<T> kaiming_uniform_init(const std::vector<int>& dims, Rng& rng) {
    if (dims.empty()) throw InvalidConfig("kaiming init needs a non-empty shape");
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < dims.size(); ++i) fan_in *= static_cast<std::size_t>(dims[i]);
    if (fan_in == 0) throw InvalidConfig("kaiming init needs fan_in > 0");
    const double bound = kaiming_bound(fan_in);
    std::vector<T> values(fan_in * static_cast<std::size_t>(dims[0]));
    for (T& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    return values;
}

template <typename T>
void sgd_step(ModelParams<T>& params, double lr) {
    const T step = static_cast<T>(lr);
    for (Param<T>& p : params.all()) {
        if (!p.learnable()) continue;
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= step * p.grad[i];
        std::fill(p.grad.begin(), p.grad.end(), T(0));
    }
}

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const GuidedStemConfig& stem = config_.stem;
    if (prior_channel_count(stem.variant) > 0) {
        kernel_index_ = params_.add("stem.gaussian", {1, 1, stem.prior.kernel_size, stem.prior.kernel_size},
                                    ParamKind::Frozen);
    }
    stem_spec_ = ConvSpec{3, stem.learned_channels(), stem.kernel_size, stem.stride, stem.padding};
    stem_conv_ = params_.add("stem.conv.weight", {stem_spec_.out_channels, 3, stem.kernel_size, stem.kernel_size},
                             ParamKind::Learnable);

    int channels = stem.total_channels;
    for (std::size_t i = 0; i < config_.body.size(); ++i) {
        const ConvBlockConfig& b = config_.body[i];
        const std::string prefix = "block" + std::to_string(i) + ".";
        BlockIndex idx;
        idx.spec = ConvSpec{channels, b.out_channels, b.kernel, b.stride, b.kernel / 2};
        idx.conv = params_.add(prefix + "conv.weight", {b.out_channels, channels, b.kernel, b.kernel},
                               ParamKind::Learnable);
        idx.gamma = params_.add(prefix + "bn.weight", {b.out_channels}, ParamKind::Learnable, T(1));
        idx.beta = params_.add(prefix + "bn.bias", {b.out_channels}, ParamKind::Learnable);
        idx.running_mean = params_.add(prefix + "bn.running_mean", {b.out_channels}, ParamKind::Buffer);
        idx.running_var = params_.add(prefix + "bn.running_var", {b.out_channels}, ParamKind::Buffer, T(1));
        blocks_.push_back(idx);
        channels = b.out_channels;
    }
    fc_in_ = channels;
    fc_weight_ = params_.add("fc.weight", {config_.class_count, channels}, ParamKind::Learnable);
    fc_bias_ = params_.add("fc.bias", {config_.class_count}, ParamKind::Learnable);
    block_cache_.resize(blocks_.size());

    if (kernel_index_) {
        const priors::GaussianKernel k = priors::make_gaussian_kernel(stem.prior.kernel_size, stem.prior.sigma);
        auto& v = params_[*kernel_index_].value;
        std::transform(k.weights.begin(), k.weights.end(), v.begin(), [](double w) { return static_cast<T>(w); });
    }
}

template <typename T>
void Model<T>::initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (Param<T>& p : params_.all()) {
        const bool is_weight = p.name.ends_with("conv.weight") || p.name == "fc.weight";
        if (is_weight) {
            p.value = kaiming_uniform_init<T>(p.dims, rng);
        } else if (p.name.ends_with("bn.weight") || p.name.ends_with("running_var")) {
            std::fill(p.value.begin(), p.value.end(), T(1));
        } else if (p.kind != ParamKind::Frozen) {
            std::fill(p.value.begin(), p.value.end(), T(0));
        }
        std::fill(p.grad.begin(), p.grad.end(), T(0));
    }
}

template <typename T>
std::span<const T> Model<T>::frozen_kernel() const {
    if (!kernel_index_) return {};
    return params_[*kernel_index_].value;
}

template <typename T>
Tensor<T> Model<T>::stem_forward(const Tensor<T>& input) {
    const Shape& s = input.shape();
    if (s.c != 3) throw ShapeMismatch("stem expects 3 input channels, got " + std::to_string(s.c));
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw OddSpatialDim("stem needs even spatial extents, got " + std::to_string(s.h) + "x" + std::to_string(s.w));
    }
    const GuidedStemConfig& stem = config_.stem;
    const Tensor<T> learned = conv2d_forward<T>(input, params_[stem_conv_].value, stem_spec_);
    const Shape ls = learned.shape();
    const int lead = prior_channel_count(stem.variant);
    Tensor<T> out(Shape{s.n, stem.total_channels, ls.h, ls.w});
    const std::size_t plane = ls.plane_size();

    for (int n = 0; n < s.n; ++n) {
        if (lead > 0) {
            Raster<T> image(3, s.h, s.w);
            const auto src = input.sample(n);
            std::copy(src.begin(), src.end(), image.values.begin());
            const auto maps = priors::prior_maps<T>(image, frozen_kernel(), stem.prior);
            if (maps.bright.height != ls.h || maps.bright.width != ls.w) {
                throw ShapeMismatch("prior maps and learned stem disagree on output extent");
            }
            int ch = 0;
            if (uses_bright(stem.variant)) std::copy(maps.bright.values.begin(), maps.bright.values.end(), &out(n, ch++, 0, 0));
            if (uses_dark(stem.variant)) std::copy(maps.dark.values.begin(), maps.dark.values.end(), &out(n, ch++, 0, 0));
        }
        const auto l = learned.sample(n);
        std::copy(l.begin(), l.end(), out.sample(n).begin() + static_cast<std::ptrdiff_t>(lead * plane));
    }
    return out;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& input, Mode mode) {
    input_cache_ = input;
    Tensor<T> x = stem_forward(input);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const BlockIndex& b = blocks_[i];
        BlockCache& c = block_cache_[i];
        c.input = std::move(x);
        c.conv_out = conv2d_forward<T>(c.input, params_[b.conv].value, b.spec);
        c.bn_out = batchnorm_forward<T>(c.conv_out, params_[b.gamma].value, params_[b.beta].value,
                                        params_[b.running_mean].value, params_[b.running_var].value, mode, &c.bn);
        c.activated = relu_forward(c.bn_out);
        x = c.activated;
    }
    pooled_cache_ = global_avg_pool_forward(x);
    return linear_forward<T>(pooled_cache_, params_[fc_weight_].value, params_[fc_bias_].value, config_.class_count);
}

template <typename T>
void Model<T>::backward(const Tensor<T>& grad_logits) {
    Param<T>& fw = params_[fc_weight_];
    std::vector<T> before;
    if (fault_ == Fault::FlipLinearWeightGrad) before = fw.grad;
    Tensor<T> g = linear_backward<T>(pooled_cache_, fw.value, config_.class_count, grad_logits, fw.grad,
                                     params_[fc_bias_].grad);
    if (fault_ == Fault::FlipLinearWeightGrad) {
        for (std::size_t i = 0; i < before.size(); ++i) fw.grad[i] = before[i] - (fw.grad[i] - before[i]);
    }
    g = global_avg_pool_backward(block_cache_.back().activated.shape(), g);
    last_features_grad_ = g;

    for (std::size_t i = blocks_.size(); i-- > 0;) {
        const BlockIndex& b = blocks_[i];
        BlockCache& c = block_cache_[i];
        g = relu_backward(c.bn_out, g);
        g = batchnorm_backward<T>(g, params_[b.gamma].value, c.bn, params_[b.gamma].grad, params_[b.beta].grad);
        Tensor<T> grad_input;
        conv2d_backward<T>(c.input, params_[b.conv].value, b.spec, g, &grad_input, params_[b.conv].grad);
        g = std::move(grad_input);
    }

    // Only the learned stem channels carry gradient; the prior channels end at the data.
    const int lead = prior_channel_count(config_.stem.variant);
    const Shape gs = g.shape();
    Tensor<T> learned_grad(Shape{gs.n, stem_spec_.out_channels, gs.h, gs.w});
    const std::size_t plane = gs.plane_size();
    for (int n = 0; n < gs.n; ++n) {
        const auto src = g.sample(n).subspan(static_cast<std::size_t>(lead) * plane);
        std::copy(src.begin(), src.end(), learned_grad.sample(n).begin());
    }
    conv2d_backward<T>(input_cache_, params_[stem_conv_].value, stem_spec_, learned_grad, nullptr,
                       params_[stem_conv_].grad);
}

template <typename T>
std::vector<bool> Model<T>::relu_pattern() const {
    std::vector<bool> pattern;
    for (const BlockCache& c : block_cache_) {
        for (const T v : c.bn_out.values()) pattern.push_back(v > T(0));
    }
    return pattern;
}

template <typename T>
Tensor<T> make_batch(const std::vector<const Raster<float>*>& images) {
    if (images.empty()) throw ShapeMismatch("cannot build an empty batch");
    const Raster<float>& first = *images.front();
    Tensor<T> batch(Shape{static_cast<int>(images.size()), first.channels, first.height, first.width});
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!images[i]->same_shape(first)) throw ShapeMismatch("batch images must share one shape");
        std::transform(images[i]->values.begin(), images[i]->values.end(), batch.sample(static_cast<int>(i)).begin(),
                       [](float v) { return static_cast<T>(v); });
    }
    return batch;
}

#define GUIDEDNET_INSTANTIATE(T)                                                        \
    template class ModelParams<T>;                                                      \
    template class Model<T>;                                                            \
    template std::size_t param_count<T>(const ModelParams<T>&);                         \
    template std::vector<T> kaiming_uniform_init<T>(const std::vector<int>&, Rng&);     \
    template void sgd_step<T>(ModelParams<T>&, double);                                 \
    template Tensor<T> make_batch<T>(const std::vector<const Raster<float>*>&);

GUIDEDNET_INSTANTIATE(float)
GUIDEDNET_INSTANTIATE(double)

#undef GUIDEDNET_INSTANTIATE

}  // namespace guidednet::nnet
