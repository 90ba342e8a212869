#pragma once

#include "guidednet/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace guidednet::nnet {

struct GradientCheckOptions {
    int batch = 2;
    int size = 16;
    double step = 1e-4;
    double tolerance = 1e-5;
    // Denominator floor for relative errors of gradients that are numerically zero.
    double floor = 1e-6;
    // Entries whose perturbation flips a ReLU input are excluded; at most this share of them.
    double max_kink_fraction = 0.01;
    // Entries probed per tensor, drawn at random; 0 probes every entry.
    std::size_t max_entries_per_tensor = 64;
    std::uint64_t seed = 7;
    Fault fault = Fault::None;
    bool zero_input = false;
};

struct TensorGradReport {
    std::string name;
    std::size_t checked = 0;
    std::size_t kinks = 0;
    double max_rel_error = 0.0;
    double max_abs_analytic = 0.0;
    double max_abs_numeric = 0.0;
    bool passed = true;
};

struct GradientCheckReport {
    std::vector<TensorGradReport> tensors;
    double max_rel_error = 0.0;
    bool passed = true;

    std::string to_text() const;
};

/// |a - n| / max(|a|, |n|, floor); 0 when all three are zero.
double relative_error(double analytic, double numeric, double floor = 0.0);

/// Builds the model in 64-bit precision, runs a train-mode softmax cross-entropy loss
/// on a random batch and compares learnable-tensor gradients with the fourth-order
/// central difference (f(-2h) - 8 f(-h) + 8 f(h) - f(2h)) / 12h. Probes whose stencil
/// straddles a ReLU kink are counted separately and not scored.
GradientCheckReport gradient_check(const ModelConfig& config, const GradientCheckOptions& options);

}  // namespace guidednet::nnet
