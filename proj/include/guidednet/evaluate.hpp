#pragma once

#include "guidednet/model.hpp"
#include "guidednet/raster.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace guidednet::eval {

constexpr int kClasses = 3;

/// cm[i][j] = samples with true label i predicted as j.
using ConfusionMatrix = std::array<std::array<std::uint64_t, kClasses>, kClasses>;

/// Throws LengthMismatch or LabelOutOfRange.
ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted);

std::uint64_t total(const ConfusionMatrix& cm);

struct Scores {
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;

    friend bool operator==(const Scores&, const Scores&) = default;
};

struct MetricsReport {
    ConfusionMatrix confusion{};
    double accuracy = 0.0;
    std::array<Scores, kClasses> per_class{};
    Scores macro;
    std::vector<double> runs;  // per-seed macro-F when aggregating several runs

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Zero denominators score 0. Throws EmptyMatrix when the total is 0.
MetricsReport metrics_from_cm(const ConfusionMatrix& cm);

double mean(std::span<const double> values);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_std(std::span<const double> values);

/// JSON with accuracy, per_class, macro, confusion and (when present) runs, f_mean, f_std.
std::string to_json(const MetricsReport& report);
std::string to_text(const MetricsReport& report);

/// ReLU(sum_k mean(grad_k) * A_k), bilinearly upsampled and divided by its max (all zeros when
/// the max is 0). `activations` and `gradients` are one sample, (1, C, h, w).
template <typename T>
Raster<float> gradcam_map(const nnet::Tensor<T>& activations, const nnet::Tensor<T>& gradients, int out_h, int out_w);

/// Class activation map of `target_class` for one preprocessed image, at the image's resolution.
/// Uses eval-mode batch norm and leaves parameter gradients zeroed.
/// Throws UntrainedModel when any parameter is non-finite, LabelOutOfRange for a bad class.
Raster<float> gradcam(nnet::Model<float>& model, const RawImage& image, int target_class);

}  // namespace guidednet::eval
