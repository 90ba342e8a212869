#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace guidednet {

/// Planar (channel-major) image buffer. Row-major within a plane.
template <typename T>
struct Raster {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> values;

    Raster() = default;
    Raster(int c, int h, int w, T fill = T{})
        : channels(c), height(h), width(w),
          values(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }

    T& at(int c, int y, int x) {
        assert(c >= 0 && c < channels && y >= 0 && y < height && x >= 0 && x < width);
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    const T& at(int c, int y, int x) const {
        assert(c >= 0 && c < channels && y >= 0 && y < height && x >= 0 && x < width);
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    std::span<T> plane(int c) { return {values.data() + c * plane_size(), plane_size()}; }
    std::span<const T> plane(int c) const { return {values.data() + c * plane_size(), plane_size()}; }

    bool same_shape(const Raster& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    friend bool operator==(const Raster&, const Raster&) = default;
};

/// Three-channel (r, g, b) fundus photograph with intensities in [0, 1].
using RawImage = Raster<float>;

/// Single-channel dark or bright channel map with values in [0, 1].
using PriorMap = Raster<float>;

}  // namespace guidednet
