#include "guidednet/priors.hpp"

#include "guidednet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace guidednet::priors {

namespace {

template <typename T>
struct MinOp {
    T operator()(T a, T b) const { return std::min(a, b); }
};

template <typename T>
struct MaxOp {
    T operator()(T a, T b) const { return std::max(a, b); }
};

// One van Herk / Gil-Werman pass along an axis of `length` elements. Element k starts
// at src + k * axis_stride and holds `lanes` contiguous values; the pass runs all lanes
// at once so the column pass streams whole rows. Out-of-range taps replicate the edge.
template <typename T, typename Op>
void vhgw_pass(const T* src, T* dst, int length, int lanes, std::size_t axis_stride, int radius, Op op,
               std::vector<T>& prefix, std::vector<T>& suffix) {
    const int window = 2 * radius + 1;
    const int extended = length + 2 * radius;
    const int blocks = (extended + window - 1) / window;
    const int padded = blocks * window;
    const std::size_t n_lanes = static_cast<std::size_t>(lanes);
    prefix.resize(static_cast<std::size_t>(padded) * n_lanes);
    suffix.resize(static_cast<std::size_t>(padded) * n_lanes);

    auto source = [&](int k) {
        const int idx = std::clamp(k - radius, 0, length - 1);
        return src + static_cast<std::size_t>(idx) * axis_stride;
    };

    for (int k = 0; k < padded; ++k) {
        const T* in = source(k);
        T* g = prefix.data() + static_cast<std::size_t>(k) * n_lanes;
        if (k % window == 0) {
            std::copy(in, in + lanes, g);
        } else {
            const T* prev = g - n_lanes;
            for (int l = 0; l < lanes; ++l) g[l] = op(prev[l], in[l]);
        }
    }
    for (int k = padded - 1; k >= 0; --k) {
        const T* in = source(k);
        T* h = suffix.data() + static_cast<std::size_t>(k) * n_lanes;
        if (k % window == window - 1) {
            std::copy(in, in + lanes, h);
        } else {
            const T* next = h + n_lanes;
            for (int l = 0; l < lanes; ++l) h[l] = op(next[l], in[l]);
        }
    }
    for (int i = 0; i < length; ++i) {
        const T* h = suffix.data() + static_cast<std::size_t>(i) * n_lanes;
        const T* g = prefix.data() + static_cast<std::size_t>(i + window - 1) * n_lanes;
        T* out = dst + static_cast<std::size_t>(i) * axis_stride;
        for (int l = 0; l < lanes; ++l) out[l] = op(h[l], g[l]);
    }
}

template <typename T, typename Op>
Raster<T> sliding_extremum_impl(const Raster<T>& map, int radius, Op op) {
    if (radius == 0 || map.empty()) return map;
    Raster<T> rows(map.channels, map.height, map.width);
    Raster<T> out(map.channels, map.height, map.width);
    std::vector<T> prefix, suffix;
    const std::size_t w = static_cast<std::size_t>(map.width);
    for (int c = 0; c < map.channels; ++c) {
        const T* src = map.plane(c).data();
        T* mid = rows.plane(c).data();
        for (int y = 0; y < map.height; ++y) {
            vhgw_pass(src + y * w, mid + y * w, map.width, 1, 1, radius, op, prefix, suffix);
        }
        vhgw_pass(static_cast<const T*>(mid), out.plane(c).data(), map.height, map.width, w, radius, op, prefix,
                  suffix);
    }
    return out;
}

template <typename T, typename Op>
Raster<T> naive_impl(const Raster<T>& map, int radius, Op op) {
    Raster<T> out(map.channels, map.height, map.width);
    for (int c = 0; c < map.channels; ++c) {
        for (int y = 0; y < map.height; ++y) {
            for (int x = 0; x < map.width; ++x) {
                T acc = map.at(c, y, x);
                for (int dy = -radius; dy <= radius; ++dy) {
                    const int sy = std::clamp(y + dy, 0, map.height - 1);
                    for (int dx = -radius; dx <= radius; ++dx) {
                        const int sx = std::clamp(x + dx, 0, map.width - 1);
                        acc = op(acc, map.at(c, sy, sx));
                    }
                }
                out.at(c, y, x) = acc;
            }
        }
    }
    return out;
}

template <typename T, typename Op>
Raster<T> channel_reduce(const Raster<T>& image, Op op) {
    Raster<T> out(1, image.height, image.width);
    if (image.channels == 0) return out;
    auto dst = out.plane(0);
    const auto first = image.plane(0);
    std::copy(first.begin(), first.end(), dst.begin());
    for (int c = 1; c < image.channels; ++c) {
        const auto src = image.plane(c);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = op(dst[i], src[i]);
    }
    return out;
}

void check_radius(int radius) {
    if (radius < 0) throw InvalidConfig("patch radius must be >= 0, got " + std::to_string(radius));
}

}  // namespace

void PriorConfig::validate() const {
    check_radius(patch_radius);
    if (kernel_size < 1 || kernel_size % 2 == 0) {
        throw InvalidKernelSpec("kernel size must be odd and >= 1, got " + std::to_string(kernel_size));
    }
    if (!(sigma > 0.0)) throw InvalidKernelSpec("sigma must be > 0");
    if (stride < 1) throw InvalidConfig("stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw InvalidConfig("padding must be >= 0, got " + std::to_string(padding));
}

GaussianKernel make_gaussian_kernel(int size, double sigma) {
    if (size < 1 || size % 2 == 0) {
        throw InvalidKernelSpec("kernel size must be odd and >= 1, got " + std::to_string(size));
    }
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw InvalidKernelSpec("sigma must be finite and > 0, got " + std::to_string(sigma));
    }
    GaussianKernel k;
    k.size = size;
    k.sigma = sigma;
    k.weights.resize(static_cast<std::size_t>(size) * size);
    const int half = size / 2;
    const double denom = 2.0 * sigma * sigma;
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
            const double di = i - half;
            const double dj = j - half;
            const double w = std::exp(-(di * di + dj * dj) / denom);
            k.weights[static_cast<std::size_t>(i) * size + j] = w;
            total += w;
        }
    }
    for (double& w : k.weights) w /= total;
    return k;
}

PriorMap dark_channel(const RawImage& image, int radius) {
    check_radius(radius);
    return sliding_extremum(channel_reduce(image, MinOp<float>{}), radius, Extremum::Min);
}

PriorMap bright_channel(const RawImage& image, int radius) {
    check_radius(radius);
    return sliding_extremum(channel_reduce(image, MaxOp<float>{}), radius, Extremum::Max);
}

template <typename T>
Raster<T> sliding_extremum(const Raster<T>& map, int radius, Extremum mode) {
    check_radius(radius);
    return mode == Extremum::Min ? sliding_extremum_impl(map, radius, MinOp<T>{})
                                 : sliding_extremum_impl(map, radius, MaxOp<T>{});
}

template <typename T>
Raster<T> naive_sliding_extremum(const Raster<T>& map, int radius, Extremum mode) {
    check_radius(radius);
    return mode == Extremum::Min ? naive_impl(map, radius, MinOp<T>{}) : naive_impl(map, radius, MaxOp<T>{});
}

template <typename T>
Raster<T> depthwise_gaussian(const Raster<T>& image, std::span<const T> weights, int size, int stride,
                             int padding) {
    if (weights.size() != static_cast<std::size_t>(size) * size) {
        throw ShapeMismatch("kernel weight count does not match size " + std::to_string(size));
    }
    if (stride < 1 || padding < 0) throw InvalidConfig("stride must be >= 1 and padding >= 0");
    const int out_h = (image.height + 2 * padding - size) / stride + 1;
    const int out_w = (image.width + 2 * padding - size) / stride + 1;
    if (out_h < 1 || out_w < 1) throw ShapeMismatch("image smaller than the kernel footprint");

    Raster<T> out(image.channels, out_h, out_w);
    for (int c = 0; c < image.channels; ++c) {
        const T* src = image.plane(c).data();
        T* dst = out.plane(c).data();
        for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = oy * stride - padding;
            const int ky_lo = std::max(0, -y0);
            const int ky_hi = std::min(size, image.height - y0);
            for (int ox = 0; ox < out_w; ++ox) {
                const int x0 = ox * stride - padding;
                const int kx_lo = std::max(0, -x0);
                const int kx_hi = std::min(size, image.width - x0);
                T acc = T(0);
                for (int ky = ky_lo; ky < ky_hi; ++ky) {
                    const T* row = src + static_cast<std::size_t>(y0 + ky) * image.width + x0;
                    const T* wrow = weights.data() + static_cast<std::size_t>(ky) * size;
                    for (int kx = kx_lo; kx < kx_hi; ++kx) acc += wrow[kx] * row[kx];
                }
                dst[static_cast<std::size_t>(oy) * out_w + ox] = acc;
            }
        }
    }
    return out;
}

template <typename T>
Raster<T> depthwise_gaussian(const Raster<T>& image, const GaussianKernel& kernel, int stride, int padding) {
    std::vector<T> weights(kernel.weights.begin(), kernel.weights.end());
    return depthwise_gaussian<T>(image, std::span<const T>(weights), kernel.size, stride, padding);
}

template <typename T>
Raster<T> channel_extremum_pool(const Raster<T>& channels, Extremum mode) {
    if (channels.channels != 3) {
        throw ShapeMismatch("channel pooling expects 3 channels, got " + std::to_string(channels.channels));
    }
    return mode == Extremum::Min ? channel_reduce(channels, MinOp<T>{}) : channel_reduce(channels, MaxOp<T>{});
}

template <typename T>
PriorPair<T> prior_maps(const Raster<T>& image, std::span<const T> weights, const PriorConfig& cfg) {
    const Raster<T> smoothed = depthwise_gaussian<T>(image, weights, cfg.kernel_size, cfg.stride, cfg.padding);
    return {channel_extremum_pool(smoothed, Extremum::Max), channel_extremum_pool(smoothed, Extremum::Min)};
}

template <typename T>
PriorPair<T> prior_maps(const Raster<T>& image, const PriorConfig& cfg) {
    cfg.validate();
    const GaussianKernel kernel = make_gaussian_kernel(cfg.kernel_size, cfg.sigma);
    const std::vector<T> weights(kernel.weights.begin(), kernel.weights.end());
    return prior_maps<T>(image, std::span<const T>(weights), cfg);
}

#define GUIDEDNET_INSTANTIATE(T)                                                                              \
    template Raster<T> sliding_extremum<T>(const Raster<T>&, int, Extremum);                                 \
    template Raster<T> naive_sliding_extremum<T>(const Raster<T>&, int, Extremum);                           \
    template Raster<T> depthwise_gaussian<T>(const Raster<T>&, const GaussianKernel&, int, int);             \
    template Raster<T> depthwise_gaussian<T>(const Raster<T>&, std::span<const T>, int, int, int);           \
    template Raster<T> channel_extremum_pool<T>(const Raster<T>&, Extremum);                                 \
    template PriorPair<T> prior_maps<T>(const Raster<T>&, const PriorConfig&);                               \
    template PriorPair<T> prior_maps<T>(const Raster<T>&, std::span<const T>, const PriorConfig&);

GUIDEDNET_INSTANTIATE(float)
GUIDEDNET_INSTANTIATE(double)

#undef GUIDEDNET_INSTANTIATE

}  // namespace guidednet::priors
