#include "guidednet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace guidednet::nnet {

double relative_error(double analytic, double numeric, double floor) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    if (scale == 0.0) return 0.0;
    return std::abs(analytic - numeric) / scale;
}

namespace {

// Sorted random subset of [0, n) of the given size (all indices when probes == n).
std::vector<std::size_t> probe_indices(std::size_t n, std::size_t probes, Rng& rng) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    if (probes >= n) return all;
    for (std::size_t i = 0; i < probes; ++i) std::swap(all[i], all[i + rng.below(n - i)]);
    all.resize(probes);
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

std::string GradientCheckReport::to_text() const {
    std::ostringstream os;
    char line[256];
    for (const TensorGradReport& t : tensors) {
        std::snprintf(line, sizeof line, "%-24s checked=%5zu kinks=%3zu max_rel_err=%.3e |g|max=%.3e %s\n",
                      t.name.c_str(), t.checked, t.kinks, t.max_rel_error, t.max_abs_analytic, t.passed ? "ok" : "FAIL");
        os << line;
    }
    std::snprintf(line, sizeof line, "overall max_rel_err=%.3e %s\n", max_rel_error, passed ? "PASS" : "FAIL");
    os << line;
    return os.str();
}

GradientCheckReport gradient_check(const ModelConfig& config, const GradientCheckOptions& options) {
    Model<double> model(config);
    model.initialize(options.seed);
    model.set_fault(options.fault);

    Rng rng(derive_seed(options.seed, 0x9c));
    Tensor<double> input(Shape{options.batch, 3, options.size, options.size});
    if (!options.zero_input) {
        for (double& v : input.values()) v = rng.uniform();
    }
    std::vector<int> labels(options.batch);
    for (int n = 0; n < options.batch; ++n) labels[n] = n % config.class_count;

    auto loss_at = [&]() {
        const Tensor<double> logits = model.forward(input, Mode::Train);
        return softmax_cross_entropy<double>(logits, labels).loss;
    };

    model.params().zero_grad();
    {
        const Tensor<double> logits = model.forward(input, Mode::Train);
        const auto result = softmax_cross_entropy<double>(logits, labels);
        model.backward(result.grad_logits);
    }
    const std::vector<bool> base_pattern = model.relu_pattern();

    GradientCheckReport report;
    for (Param<double>& p : model.params().all()) {
        if (!p.learnable()) continue;
        TensorGradReport tr;
        tr.name = p.name;
        const std::size_t n = p.size();
        const std::size_t probes =
            options.max_entries_per_tensor == 0 ? n : std::min(n, options.max_entries_per_tensor);
        for (const std::size_t i : probe_indices(n, probes, rng)) {
            const double saved = p.value[i];
            bool crossed = false;
            auto eval = [&](double offset) {
                p.value[i] = saved + offset;
                const double l = loss_at();
                crossed = crossed || model.relu_pattern() != base_pattern;
                return l;
            };
            const double h = options.step;
            const double f2 = eval(2 * h), f1 = eval(h), b1 = eval(-h), b2 = eval(-2 * h);
            const double numeric = (8 * (f1 - b1) - (f2 - b2)) / (12 * h);
            p.value[i] = saved;
            ++tr.checked;
            if (crossed) {
                ++tr.kinks;
                continue;
            }
            const double analytic = p.grad[i];
            tr.max_rel_error = std::max(tr.max_rel_error, relative_error(analytic, numeric, options.floor));
            tr.max_abs_analytic = std::max(tr.max_abs_analytic, std::abs(analytic));
            tr.max_abs_numeric = std::max(tr.max_abs_numeric, std::abs(numeric));
        }
        tr.passed = tr.max_rel_error <= options.tolerance &&
                    static_cast<double>(tr.kinks) <= options.max_kink_fraction * static_cast<double>(tr.checked);
        report.max_rel_error = std::max(report.max_rel_error, tr.max_rel_error);
        report.passed = report.passed && tr.passed;
        report.tensors.push_back(tr);
    }
    return report;
}

}  // namespace guidednet::nnet
