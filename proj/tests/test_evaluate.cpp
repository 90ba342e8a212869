#include "doctest.h"

#include "guidednet/errors.hpp"
#include "guidednet/evaluate.hpp"

#include "json.hpp"

using namespace guidednet;
using eval::ConfusionMatrix;

TEST_CASE("confusion matrix: hand count, identity, empty, errors") {
    const std::vector<int> t{0, 0, 1}, p{0, 1, 1};
    const ConfusionMatrix cm = eval::confusion_matrix(t, p);
    CHECK(cm == ConfusionMatrix{{{1, 1, 0}, {0, 1, 0}, {0, 0, 0}}});

    std::vector<int> truth;
    for (int c = 0; c < 3; ++c) truth.insert(truth.end(), std::array{8470, 4559, 3220}[c], c);
    const auto perfect = eval::confusion_matrix(truth, truth);
    CHECK(perfect == ConfusionMatrix{{{8470, 0, 0}, {0, 4559, 0}, {0, 0, 3220}}});
    CHECK(eval::metrics_from_cm(perfect).accuracy == 1.0);

    CHECK(eval::confusion_matrix({}, {}) == ConfusionMatrix{});
    const std::vector<int> two{0, 1}, bad{0, 3};
    CHECK_THROWS_AS(eval::confusion_matrix(two, t), LengthMismatch);
    CHECK_THROWS_AS(eval::confusion_matrix(two, bad), LabelOutOfRange);
    const std::vector<int> negative{-1, 0};
    CHECK_THROWS_AS(eval::confusion_matrix(negative, two), LabelOutOfRange);
}

TEST_CASE("metrics from a hand-computed matrix") {
    const ConfusionMatrix cm{{{2, 1, 0}, {0, 3, 1}, {1, 0, 2}}};
    const auto r = eval::metrics_from_cm(cm);
    CHECK(r.accuracy == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(r.per_class[0].precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.per_class[0].recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.per_class[1].precision == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(r.per_class[1].recall == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(r.per_class[2].precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.per_class[2].recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    const double macro_f = (2.0 / 3.0 + 0.75 + 2.0 / 3.0) / 3.0;
    CHECK(r.macro.f == doctest::Approx(macro_f).epsilon(1e-15));
}

TEST_CASE("per-class recall of 0.9645 is reported as such") {
    const ConfusionMatrix cm{{{9645, 300, 55}, {100, 800, 100}, {10, 90, 900}}};
    CHECK(eval::metrics_from_cm(cm).per_class[0].recall == doctest::Approx(0.9645).epsilon(1e-12));
}

TEST_CASE("zero denominators score zero and empty matrices are rejected") {
    const ConfusionMatrix all_good{{{5, 0, 0}, {3, 0, 0}, {2, 0, 0}}};
    const auto r = eval::metrics_from_cm(all_good);
    CHECK(r.per_class[0].recall == 1.0);
    CHECK(r.per_class[1].recall == 0.0);
    CHECK(r.per_class[2].recall == 0.0);
    CHECK(r.per_class[1].precision == 0.0);
    CHECK(r.per_class[1].f == 0.0);
    CHECK(r.per_class[0].precision == 0.5);
    for (const auto& s : r.per_class) CHECK(std::isfinite(s.f));
    CHECK_THROWS_AS(eval::metrics_from_cm(ConfusionMatrix{}), EmptyMatrix);
}

TEST_CASE("metric invariants on random matrices") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        ConfusionMatrix cm{};
        for (auto& row : cm)
            for (auto& v : row) v = rng.below(20);
        if (eval::total(cm) == 0) continue;
        const auto r = eval::metrics_from_cm(cm);
        const double trace = static_cast<double>(cm[0][0] + cm[1][1] + cm[2][2]);
        CHECK(r.accuracy == trace / static_cast<double>(eval::total(cm)));
        double lo = 1.0, hi = 0.0;
        for (const auto& s : r.per_class) {
            lo = std::min(lo, s.f);
            hi = std::max(hi, s.f);
            for (double v : {s.precision, s.recall, s.f}) CHECK((v >= 0.0 && v <= 1.0));
        }
        CHECK(r.macro.f >= lo - 1e-15);
        CHECK(r.macro.f <= hi + 1e-15);

        // Relabel classes 0 <-> 2: scores permute with them.
        ConfusionMatrix swapped{};
        const int perm[3] = {2, 1, 0};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) swapped[perm[i]][perm[j]] = cm[i][j];
        const auto s = eval::metrics_from_cm(swapped);
        for (int k = 0; k < 3; ++k) CHECK(s.per_class[perm[k]] == r.per_class[k]);
        CHECK(s.macro.f == doctest::Approx(r.macro.f).epsilon(1e-15));
    }
}

TEST_CASE("sample standard deviation and the JSON report") {
    const std::vector<double> v{0.8, 0.9, 1.0};
    CHECK(eval::mean(v) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(eval::sample_std(v) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(eval::sample_std(std::vector<double>{0.5}) == 0.0);

    auto r = eval::metrics_from_cm(ConfusionMatrix{{{2, 1, 0}, {0, 3, 1}, {1, 0, 2}}});
    r.runs = v;
    const auto j = nlohmann::json::parse(eval::to_json(r));
    CHECK(j["accuracy"].get<double>() == doctest::Approx(0.7));
    CHECK(j["per_class"]["good"]["precision"].get<double>() == doctest::Approx(2.0 / 3.0));
    CHECK(j["macro"].contains("f"));
    CHECK(j["confusion"][1][2].get<int>() == 1);
    CHECK(j["runs"].size() == 3);
    CHECK(j["f_std"].get<double>() == doctest::Approx(0.1));
    CHECK(eval::to_text(r).find("macro") != std::string::npos);
}

TEST_CASE("grad-cam map: negative sum, uniform positive, hand toy case") {
    nnet::Tensor<double> a({1, 2, 2, 2}), g({1, 2, 2, 2});
    // Channel 0 all ones with alpha 0.5; channel 1 all ones with alpha 1 -> sum 1.5 everywhere.
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            a(0, 0, y, x) = 1.0;
            a(0, 1, y, x) = 1.0;
            g(0, 0, y, x) = 0.5;
            g(0, 1, y, x) = 1.0;
        }
    for (float v : eval::gradcam_map(a, g, 6, 6).values) CHECK(v == 1.0f);

    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) g(0, 1, y, x) = -1.0;  // 0.5 - 1 = -0.5 everywhere
    const auto neg = eval::gradcam_map(a, g, 4, 4);
    CHECK(neg.height == 4);
    for (float v : neg.values) CHECK(v == 0.0f);

    // alpha = (0.5, -1) from non-constant gradients whose spatial means are those values.
    const double A0[4] = {1.0, 2.0, 0.0, 4.0}, A1[4] = {0.5, 0.0, 1.0, 1.0};
    const double G0[4] = {0.0, 1.0, 1.0, 0.0}, G1[4] = {-2.0, 0.0, -1.0, -1.0};
    for (int i = 0; i < 4; ++i) {
        a(0, 0, i / 2, i % 2) = A0[i];
        a(0, 1, i / 2, i % 2) = A1[i];
        g(0, 0, i / 2, i % 2) = G0[i];
        g(0, 1, i / 2, i % 2) = G1[i];
    }
    // 0.5*A0 - A1 = (0, 1, -1, 1) -> ReLU (0, 1, 0, 1), max 1.
    const double expect[4] = {0.0, 1.0, 0.0, 1.0};
    const auto toy = eval::gradcam_map(a, g, 2, 2);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(toy.values[i] - expect[i]) <= 1e-6);

    // 0.5*A0 - A1 with A0[3] = 6: (0, 1, -1, 2) -> normalized (0, 0.5, 0, 1).
    a(0, 0, 1, 1) = 6.0;
    const auto toy2 = eval::gradcam_map(a, g, 2, 2);
    const double expect2[4] = {0.0, 0.5, 0.0, 1.0};
    for (int i = 0; i < 4; ++i) CHECK(std::abs(toy2.values[i] - expect2[i]) <= 1e-6);
}

TEST_CASE("grad-cam on a model: shape, range, errors, gradients cleared") {
    nnet::Model<float> model(nnet::ModelConfig::for_variant(nnet::StemVariant::DarkBright));
    model.initialize(5);
    Rng rng(6);
    RawImage img(3, 32, 32);
    for (float& v : img.values) v = static_cast<float>(rng.uniform());
    const auto map = eval::gradcam(model, img, 1);
    CHECK(map.channels == 1);
    CHECK(map.height == 32);
    CHECK(map.width == 32);
    float peak = 0.0f;
    for (float v : map.values) {
        CHECK((v >= 0.0f && v <= 1.0f));
        peak = std::max(peak, v);
    }
    CHECK((peak == 1.0f || peak == 0.0f));
    for (const auto& p : model.params().all())
        for (float gv : p.grad) CHECK(gv == 0.0f);

    CHECK_THROWS_AS(eval::gradcam(model, img, 3), LabelOutOfRange);
    model.params().find("fc.bias")->value[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(eval::gradcam(model, img, 0), UntrainedModel);
}
