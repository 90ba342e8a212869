#pragma once

#include "guidednet/errors.hpp"

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace guidednet::nnet {

struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
    std::string to_string() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Rank-4 NCHW activation/gradient buffer.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{}) : shape_(shape), values_(shape.size(), fill) {
        if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
            throw ShapeMismatch("tensor dims must be >= 1, got " + shape.to_string());
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return values_.size(); }

    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }
    std::span<T> values() { return values_; }
    std::span<const T> values() const { return values_; }

    std::span<T> sample(int n) { return {values_.data() + n * shape_.sample_size(), shape_.sample_size()}; }
    std::span<const T> sample(int n) const {
        return {values_.data() + n * shape_.sample_size(), shape_.sample_size()};
    }

    T& operator()(int n, int c, int y, int x) { return values_[index(n, c, y, x)]; }
    const T& operator()(int n, int c, int y, int x) const { return values_[index(n, c, y, x)]; }

    void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

private:
    std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    Shape shape_;
    std::vector<T> values_;
};

}  // namespace guidednet::nnet
