#include "guidednet/evaluate.hpp"

#include "guidednet/errors.hpp"
#include "guidednet/imgproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"

namespace guidednet::eval {

namespace {

const char* const kClassNames[kClasses] = {"good", "usable", "reject"};

double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size()) {
        throw LengthMismatch("confusion_matrix: " + std::to_string(truth.size()) + " truths vs " +
                             std::to_string(predicted.size()) + " predictions");
    }
    ConfusionMatrix cm{};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i], p = predicted[i];
        if (t < 0 || t >= kClasses || p < 0 || p >= kClasses) {
            throw LabelOutOfRange("confusion_matrix: label pair (" + std::to_string(t) + ", " + std::to_string(p) +
                                  ") at index " + std::to_string(i) + " is outside {0,1,2}");
        }
        ++cm[t][p];
    }
    return cm;
}

std::uint64_t total(const ConfusionMatrix& cm) {
    std::uint64_t sum = 0;
    for (const auto& row : cm) sum += std::accumulate(row.begin(), row.end(), std::uint64_t{0});
    return sum;
}

MetricsReport metrics_from_cm(const ConfusionMatrix& cm) {
    const std::uint64_t n = total(cm);
    if (n == 0) throw EmptyMatrix("metrics_from_cm: confusion matrix has no samples");
    MetricsReport report;
    report.confusion = cm;
    std::uint64_t trace = 0;
    for (int k = 0; k < kClasses; ++k) {
        std::uint64_t row = 0, column = 0;
        for (int j = 0; j < kClasses; ++j) {
            row += cm[k][j];
            column += cm[j][k];
        }
        trace += cm[k][k];
        Scores& s = report.per_class[k];
        s.precision = ratio(cm[k][k], column);
        s.recall = ratio(cm[k][k], row);
        s.f = harmonic(s.precision, s.recall);
        report.macro.precision += s.precision / kClasses;
        report.macro.recall += s.recall / kClasses;
        report.macro.f += s.f / kClasses;
    }
    report.accuracy = ratio(trace, n);
    return report;
}

double mean(std::span<const double> values) {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
    if (values.size() < 2) return 0.0;
    const double m = mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::string to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["accuracy"] = report.accuracy;
    for (int k = 0; k < kClasses; ++k) {
        const Scores& s = report.per_class[k];
        j["per_class"][kClassNames[k]] = {{"precision", s.precision}, {"recall", s.recall}, {"f", s.f}};
    }
    j["macro"] = {{"precision", report.macro.precision}, {"recall", report.macro.recall}, {"f", report.macro.f}};
    j["confusion"] = report.confusion;
    if (!report.runs.empty()) {
        j["runs"] = report.runs;
        j["f_mean"] = mean(report.runs);
        j["f_std"] = sample_std(report.runs);
    }
    return j.dump(2) + "\n";
}

std::string to_text(const MetricsReport& report) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "accuracy %.4f\n", report.accuracy);
    out += line;
    out += "class     precision  recall     f\n";
    for (int k = 0; k < kClasses; ++k) {
        const Scores& s = report.per_class[k];
        std::snprintf(line, sizeof line, "%-9s %.4f     %.4f     %.4f\n", kClassNames[k], s.precision, s.recall, s.f);
        out += line;
    }
    std::snprintf(line, sizeof line, "%-9s %.4f     %.4f     %.4f\n", "macro", report.macro.precision,
                  report.macro.recall, report.macro.f);
    out += line;
    out += "confusion (rows true, columns predicted)\n";
    for (const auto& row : report.confusion) {
        std::snprintf(line, sizeof line, "  %8llu %8llu %8llu\n", static_cast<unsigned long long>(row[0]),
                      static_cast<unsigned long long>(row[1]), static_cast<unsigned long long>(row[2]));
        out += line;
    }
    if (!report.runs.empty()) {
        std::snprintf(line, sizeof line, "runs %zu  F mean %.4f  F-std %.4f\n", report.runs.size(), mean(report.runs),
                      sample_std(report.runs));
        out += line;
    }
    return out;
}

template <typename T>
Raster<float> gradcam_map(const nnet::Tensor<T>& activations, const nnet::Tensor<T>& gradients, int out_h, int out_w) {
    const nnet::Shape& s = activations.shape();
    if (s.n != 1 || !(gradients.shape() == s)) {
        throw ShapeMismatch("gradcam_map: activations " + s.to_string() + " and gradients " +
                            gradients.shape().to_string() + " must be one matching sample");
    }
    const std::size_t plane = s.plane_size();
    std::vector<double> weighted(plane, 0.0);
    for (int k = 0; k < s.c; ++k) {
        double alpha = 0.0;
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) alpha += gradients(0, k, y, x);
        }
        alpha /= static_cast<double>(plane);
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) weighted[y * s.w + x] += alpha * activations(0, k, y, x);
        }
    }
    Raster<float> raw(1, s.h, s.w);
    for (std::size_t i = 0; i < plane; ++i) raw.values[i] = static_cast<float>(std::max(0.0, weighted[i]));

    Raster<float> map = imgproc::resize_bilinear(raw, out_h, out_w);
    const float peak = *std::max_element(map.values.begin(), map.values.end());
    if (peak > 0.0f) {
        for (float& v : map.values) v = std::min(1.0f, v / peak);
    } else {
        std::fill(map.values.begin(), map.values.end(), 0.0f);
    }
    return map;
}

template Raster<float> gradcam_map(const nnet::Tensor<float>&, const nnet::Tensor<float>&, int, int);
template Raster<float> gradcam_map(const nnet::Tensor<double>&, const nnet::Tensor<double>&, int, int);

Raster<float> gradcam(nnet::Model<float>& model, const RawImage& image, int target_class) {
    const int classes = model.config().class_count;
    if (target_class < 0 || target_class >= classes) {
        throw LabelOutOfRange("gradcam: class index " + std::to_string(target_class) + " is outside [0, " +
                              std::to_string(classes) + ")");
    }
    for (const auto& p : model.params().all()) {
        for (float v : p.value) {
            if (!std::isfinite(v)) throw UntrainedModel("gradcam: parameter '" + p.name + "' holds non-finite values");
        }
    }
    const nnet::Tensor<float> input = nnet::make_batch<float>({&image});
    model.forward(input, nnet::Mode::Eval);
    nnet::Tensor<float> seed({1, classes, 1, 1});
    seed(0, target_class, 0, 0) = 1.0f;
    model.backward(seed);
    Raster<float> map = gradcam_map(model.last_features(), model.last_features_grad(), image.height, image.width);
    model.params().zero_grad();
    return map;
}

}  // namespace guidednet::eval
