#pragma once

#include "guidednet/raster.hpp"

#include <span>
#include <utility>
#include <vector>

namespace guidednet::priors {

/// Normalized isotropic Gaussian, size x size, row-major.
struct GaussianKernel {
    int size = 1;
    double sigma = 1.0;
    std::vector<double> weights;

    double at(int i, int j) const { return weights[static_cast<std::size_t>(i) * size + j]; }
};

struct PriorConfig {
    int patch_radius = 7;  // exact dark/bright maps: (2r+1)^2 window
    int kernel_size = 7;
    double sigma = 1.5;
    int stride = 2;
    int padding = 3;

    void validate() const;
};

enum class Extremum { Min, Max };

/// Throws InvalidKernelSpec for an even/non-positive size or sigma <= 0.
GaussianKernel make_gaussian_kernel(int size, double sigma);

/// Per-pixel minimum over channels and over the (2r+1)^2 patch, edges replicated.
PriorMap dark_channel(const RawImage& image, int radius);

/// Per-pixel maximum over channels and over the (2r+1)^2 patch, edges replicated.
PriorMap bright_channel(const RawImage& image, int radius);

/// Windowed min/max of every plane over a (2r+1)^2 square with edge replication.
///
/// Separable van Herk / Gil-Werman pass: each 1-D line is cut into blocks of the
/// window length, a forward prefix and a backward suffix extremum are built per
/// block, and each output combines one suffix with one prefix. That is about three
/// comparisons per pixel per axis regardless of the radius. Results are exactly the
/// naive windowed extremum, since min/max introduce no rounding.
template <typename T>
Raster<T> sliding_extremum(const Raster<T>& map, int radius, Extremum mode);

/// Direct O(r^2)-per-pixel windowed extremum. Throughput baseline for the bench harness.
template <typename T>
Raster<T> naive_sliding_extremum(const Raster<T>& map, int radius, Extremum mode);

/// Convolves every channel with the same fixed kernel (zero padding), subsampled by stride.
/// Output extent per axis: floor((n + 2 padding - size) / stride) + 1.
template <typename T>
Raster<T> depthwise_gaussian(const Raster<T>& image, const GaussianKernel& kernel, int stride, int padding);

/// Same as above with kernel weights already in the working precision.
template <typename T>
Raster<T> depthwise_gaussian(const Raster<T>& image, std::span<const T> weights, int size, int stride,
                             int padding);

/// Per-pixel extremum across the channel axis; input must have exactly 3 channels.
template <typename T>
Raster<T> channel_extremum_pool(const Raster<T>& channels, Extremum mode);

template <typename T>
struct PriorPair {
    Raster<T> bright;
    Raster<T> dark;
};

/// Network-side priors: Gaussian depthwise smoothing at stride 2, then channel max/min.
template <typename T>
PriorPair<T> prior_maps(const Raster<T>& image, const PriorConfig& cfg);

template <typename T>
PriorPair<T> prior_maps(const Raster<T>& image, std::span<const T> weights, const PriorConfig& cfg);

}  // namespace guidednet::priors
