// Acceptance harness: one PASS/FAIL line per criterion. Exit status is the number of failures.

#include "oracles.hpp"

#include "guidednet/ablation.hpp"
#include "guidednet/bench.hpp"
#include "guidednet/cli.hpp"
#include "guidednet/data.hpp"
#include "guidednet/errors.hpp"
#include "guidednet/evaluate.hpp"
#include "guidednet/gradcheck.hpp"
#include "guidednet/imgproc.hpp"
#include "guidednet/layers.hpp"
#include "guidednet/model.hpp"
#include "guidednet/priors.hpp"
#include "guidednet/train.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

using namespace guidednet;
using namespace guidednet::nnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome oracle_equivalence() {
    const auto t0 = Clock::now();
    Rng rng(101);
    int cases = 0, mismatches = 0;
    for (int i = 0; i < 600; ++i) {
        const int h = 1 + static_cast<int>(rng.below(64)), w = 1 + static_cast<int>(rng.below(64));
        const int radius = static_cast<int>(rng.below(10));
        Raster<float> map(1, h, w);
        // Coarse levels make ties common, which is where window bookkeeping tends to slip.
        const bool coarse = rng.coin(0.5);
        for (float& v : map.values) v = coarse ? static_cast<float>(rng.below(8)) / 7.0f : static_cast<float>(rng.uniform());
        for (auto mode : {priors::Extremum::Min, priors::Extremum::Max}) {
            const auto fast = priors::sliding_extremum(map, radius, mode);
            const auto ref = oracle::window_extremum(map, radius, mode == priors::Extremum::Min);
            if (!(fast == ref)) ++mismatches;
        }
        ++cases;
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 60.0,
            fmt("%d maps x {min,max}, sizes 1..64, radii 0..9: %d mismatches, %.2f s", cases, mismatches, secs)};
}

Outcome prior_properties() {
    Rng rng(202);
    int cases = 0, order = 0, duality = 0, monotone = 0;
    for (int i = 0; i < 250; ++i) {
        const int h = 4 + static_cast<int>(rng.below(40)), w = 4 + static_cast<int>(rng.below(40));
        const int radius = static_cast<int>(rng.below(8));
        // Multiples of 1/256 make 1 - x exact in float.
        RawImage img(3, h, w);
        for (float& v : img.values) v = static_cast<float>(rng.below(257)) / 256.0f;
        RawImage inv = img, above = img;
        for (float& v : inv.values) v = 1.0f - v;
        for (float& v : above.values) v = std::min(1.0f, v + static_cast<float>(rng.below(3)) / 256.0f);

        const auto dark = priors::dark_channel(img, radius), bright = priors::bright_channel(img, radius);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const float lo = std::min({img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)});
                const float hi = std::max({img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)});
                if (!(dark.at(0, y, x) <= lo && lo <= hi && hi <= bright.at(0, y, x))) ++order;
            }
        const auto dark_inv = priors::dark_channel(inv, radius);
        for (std::size_t k = 0; k < bright.values.size(); ++k)
            if (bright.values[k] != 1.0f - dark_inv.values[k]) ++duality;
        const auto dark_up = priors::dark_channel(above, radius), bright_up = priors::bright_channel(above, radius);
        for (std::size_t k = 0; k < dark.values.size(); ++k)
            if (dark.values[k] > dark_up.values[k] || bright.values[k] > bright_up.values[k]) ++monotone;
        ++cases;
    }
    return {order == 0 && duality == 0 && monotone == 0,
            fmt("%d images: ordering violations %d, duality mismatches %d, monotonicity violations %d", cases, order,
                duality, monotone)};
}

Outcome convolution_oracle() {
    Rng rng(303);
    double worst = 0.0;
    int cases = 0;
    for (int size : {3, 5, 7})
        for (double sigma : {0.8, 1.5, 2.5})
            for (int stride : {1, 2})
                for (int trial = 0; trial < 4; ++trial) {
                    Raster<double> in(3, 16, 16);
                    for (double& v : in.values) v = rng.uniform();
                    const int pad = size / 2;
                    const auto k = priors::make_gaussian_kernel(size, sigma);
                    const auto got = priors::depthwise_gaussian(in, k, stride, pad);
                    const auto ref = oracle::dense_depthwise(in, oracle::gaussian(size, sigma), size, stride, pad);
                    if (!got.same_shape(ref)) return {false, "shape mismatch"};
                    for (std::size_t i = 0; i < ref.values.size(); ++i)
                        worst = std::max(worst, std::abs(got.values[i] - ref.values[i]));
                    ++cases;
                }
    return {worst <= 1e-6, fmt("%d random 16x16x3 inputs: max abs diff %.3e (tolerance 1e-6)", cases, worst)};
}

Tensor<double> random_tensor(Rng& rng, Shape s) {
    Tensor<double> t(s);
    for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
    return t;
}

std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double fd_error(std::vector<double>& x, std::span<const double> analytic, const std::function<double()>& loss) {
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        const double numeric = oracle::central_difference(
            [&](double v) {
                x[i] = v;
                return loss();
            },
            keep, 1e-4);
        x[i] = keep;
        worst = std::max(worst, relative_error(analytic[i], numeric, 1e-6));
    }
    return worst;
}

// Probes every input of a tensor-valued argument.
double fd_error_tensor(Tensor<double>& x, std::span<const double> analytic, const std::function<double()>& loss) {
    std::vector<double> xs(x.values().begin(), x.values().end());
    const double err = fd_error(xs, analytic, [&] {
        std::copy(xs.begin(), xs.end(), x.values().begin());
        return loss();
    });
    std::copy(xs.begin(), xs.end(), x.values().begin());
    return err;
}

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    Rng rng(404);
    std::vector<std::pair<std::string, double>> errs;

    {
        const ConvSpec spec{3, 4, 3, 2, 1};
        Tensor<double> x = random_tensor(rng, {2, 3, 7, 6});
        std::vector<double> w = random_vector(rng, spec.weight_count());
        const Tensor<double> r = random_tensor(rng, conv2d_forward<double>(x, w, spec).shape());
        Tensor<double> gx;
        std::vector<double> gw(w.size(), 0.0);
        conv2d_backward<double>(x, w, spec, r, &gx, gw);
        auto loss = [&] { return dot(conv2d_forward<double>(x, w, spec).values(), r.values()); };
        errs.emplace_back("conv", std::max(fd_error(w, gw, loss), fd_error_tensor(x, gx.values(), loss)));
    }
    {
        Tensor<double> x = random_tensor(rng, {3, 2, 3, 4});
        std::vector<double> gamma = random_vector(rng, 2, 0.5, 1.5), beta = random_vector(rng, 2);
        const Tensor<double> r = random_tensor(rng, x.shape());
        auto loss = [&] {
            std::vector<double> rm(2, 0.0), rv(2, 1.0);
            return dot(batchnorm_forward<double>(x, gamma, beta, rm, rv, Mode::Train, nullptr).values(), r.values());
        };
        std::vector<double> rm(2, 0.0), rv(2, 1.0), gg(2, 0.0), gb(2, 0.0);
        BatchNormCache<double> cache;
        batchnorm_forward<double>(x, gamma, beta, rm, rv, Mode::Train, &cache);
        const auto gx = batchnorm_backward<double>(r, gamma, cache, gg, gb);
        errs.emplace_back("batch-norm", std::max({fd_error(gamma, gg, loss), fd_error(beta, gb, loss),
                                                  fd_error_tensor(x, gx.values(), loss)}));
    }
    {
        Tensor<double> x = random_tensor(rng, {2, 3, 4, 4});
        for (double& v : x.values()) v += v > 0 ? 0.05 : -0.05;
        const Tensor<double> r = random_tensor(rng, x.shape());
        const auto g = relu_backward(x, r);
        errs.emplace_back("relu", fd_error_tensor(x, g.values(), [&] { return dot(relu_forward(x).values(), r.values()); }));
    }
    {
        Tensor<double> x = random_tensor(rng, {2, 3, 4, 5});
        const Tensor<double> r = random_tensor(rng, {2, 3, 1, 1});
        const auto g = global_avg_pool_backward(x.shape(), r);
        errs.emplace_back("gap", fd_error_tensor(x, g.values(),
                                                 [&] { return dot(global_avg_pool_forward(x).values(), r.values()); }));
    }
    {
        Tensor<double> in = random_tensor(rng, {3, 4, 1, 1});
        std::vector<double> w = random_vector(rng, 12), b = random_vector(rng, 3);
        const Tensor<double> r = random_tensor(rng, {3, 3, 1, 1});
        auto loss = [&] { return dot(linear_forward<double>(in, w, b, 3).values(), r.values()); };
        std::vector<double> gw(12, 0.0), gb(3, 0.0);
        const auto gin = linear_backward<double>(in, w, 3, r, gw, gb);
        errs.emplace_back("linear", std::max({fd_error(w, gw, loss), fd_error(b, gb, loss),
                                              fd_error_tensor(in, gin.values(), loss)}));
    }
    {
        Tensor<double> logits = random_tensor(rng, {4, 3, 1, 1});
        const std::vector<int> labels{0, 2, 1, 2};
        const auto res = softmax_cross_entropy<double>(logits, labels);
        errs.emplace_back("softmax-xent", fd_error_tensor(logits, res.grad_logits.values(), [&] {
                              return softmax_cross_entropy<double>(logits, labels).loss;
                          }));
    }

    bool pass = true;
    std::string detail;
    for (const auto& [name, e] : errs) {
        pass = pass && e <= 1e-5;
        detail += fmt("%s %.1e, ", name.c_str(), e);
    }
    // Whole network per stem variant; stem.conv.weight is the guided stem's learned path.
    for (auto v : {StemVariant::Baseline, StemVariant::DarkOnly, StemVariant::BrightOnly, StemVariant::DarkBright}) {
        const auto report = gradient_check(ModelConfig::for_variant(v), {});
        pass = pass && report.passed && report.max_rel_error <= 1e-5;
        detail += fmt("%s net %.1e, ", std::string(to_string(v)).c_str(), report.max_rel_error);
    }
    GradientCheckOptions faulty;
    faulty.fault = Fault::FlipLinearWeightGrad;
    const auto bad = gradient_check(ModelConfig::for_variant(StemVariant::DarkBright), faulty);
    pass = pass && !bad.passed;
    const double secs = seconds_since(t0);
    pass = pass && secs < 120.0;
    detail += fmt("injected sign flip %s (err %.2f), %.1f s", bad.passed ? "MISSED" : "detected", bad.max_rel_error, secs);
    return {pass, detail};
}

Outcome stem_geometry() {
    Model<float> db(ModelConfig::for_variant(StemVariant::DarkBright));
    Model<float> base(ModelConfig::for_variant(StemVariant::Baseline));
    db.initialize(5);
    Rng rng(505);
    const RawImage img = oracle::random_image(rng, 3, 224, 224);
    const Shape s = db.stem_forward(make_batch<float>({&img})).shape();
    const bool shape_ok = s == Shape{1, 64, 112, 112};

    const std::size_t n_db = db.params().find("stem.conv.weight")->size();
    const std::size_t n_base = base.params().find("stem.conv.weight")->size();

    const std::vector<float> kernel_before(db.frozen_kernel().begin(), db.frozen_kernel().end());
    const RawImage a = oracle::random_image(rng, 3, 32, 32), b = oracle::random_image(rng, 3, 32, 32);
    const Tensor<float> batch = make_batch<float>({&a, &b});
    const std::vector<int> labels{0, 2};
    for (int step = 0; step < 100; ++step) {
        const auto loss = softmax_cross_entropy(db.forward(batch, Mode::Train), labels);
        db.backward(loss.grad_logits);
        sgd_step(db.params(), 0.01);
    }
    const std::vector<float> kernel_after(db.frozen_kernel().begin(), db.frozen_kernel().end());
    const bool frozen_ok = kernel_before == kernel_after;
    return {shape_ok && n_db == 9114 && n_base == 9408 && n_db < n_base && frozen_ok,
            fmt("stem output (%d,%d,%d); learnable stem weights DB %zu vs baseline %zu; kernel %s after 100 steps", s.c,
                s.h, s.w, n_db, n_base, frozen_ok ? "unchanged" : "CHANGED")};
}

Outcome schedule() {
    const train::TrainConfig cfg;
    bool ok = cfg.epochs == 15;
    std::string seq;
    for (int e = 1; e <= 15; ++e) {
        const double lr = train::learning_rate(e, cfg);
        ok = ok && lr == (e <= 10 ? 0.01 : 0.001);
        seq += fmt("%g ", lr);
    }
    return {ok, "epochs 1..15: " + seq};
}

Outcome synthetic_ablation() {
    auto cfg = ablation::AblationConfig::defaults();
    cfg.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    const auto result = ablation::run_ablation(cfg, &std::cout);
    std::cout << result.table() << '\n';
    const double base = result.summary(StemVariant::Baseline)->mean_f;
    const double dark = result.summary(StemVariant::DarkOnly)->mean_f;
    const double bright = result.summary(StemVariant::BrightOnly)->mean_f;
    const double db = result.summary(StemVariant::DarkBright)->mean_f;
    const bool pass = db >= base + 0.01 && dark >= base && bright >= base;
    return {pass, fmt("mean macro-F baseline %.4f, dark_only %.4f, bright_only %.4f, dark_bright %.4f "
                      "(DB - baseline %+.4f, need >= +0.01); %zu cells on %d thread(s) in %.0f s (target < 1800 s on 4 cores)",
                      base, dark, bright, db, db - base, result.cells.size(), cfg.threads, result.seconds)};
}

Outcome metrics() {
    using eval::ConfusionMatrix;
    bool ok = true;
    std::vector<int> truth, pred;
    const ConfusionMatrix hand{{{2, 1, 0}, {0, 3, 1}, {1, 0, 2}}};
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p) {
            truth.insert(truth.end(), hand[t][p], t);
            pred.insert(pred.end(), hand[t][p], p);
        }
    ok = ok && eval::confusion_matrix(truth, pred) == hand;
    const auto r = eval::metrics_from_cm(hand);
    ok = ok && r.accuracy == 7.0 / 10.0;
    const double expect_pr[3] = {2.0 / 3.0, 0.75, 2.0 / 3.0};
    for (int c = 0; c < 3; ++c) {
        ok = ok && std::abs(r.per_class[c].precision - expect_pr[c]) <= 1e-15;
        ok = ok && std::abs(r.per_class[c].recall - expect_pr[c]) <= 1e-15;
    }
    ok = ok && std::abs(r.macro.f - (2.0 / 3.0 + 0.75 + 2.0 / 3.0) / 3.0) <= 1e-15;

    const ConfusionMatrix all_good{{{5, 0, 0}, {3, 0, 0}, {2, 0, 0}}};
    const auto z = eval::metrics_from_cm(all_good);
    ok = ok && z.per_class[1].precision == 0.0 && z.per_class[1].recall == 0.0 && z.per_class[1].f == 0.0;
    ok = ok && z.per_class[0].precision == 0.5 && z.per_class[0].recall == 1.0;

    Rng rng(808);
    int random_cases = 0;
    for (int trial = 0; trial < 500; ++trial) {
        ConfusionMatrix cm{};
        for (auto& row : cm)
            for (auto& v : row) v = rng.below(30);
        if (eval::total(cm) == 0) continue;
        const auto m = eval::metrics_from_cm(cm);
        const double trace = static_cast<double>(cm[0][0] + cm[1][1] + cm[2][2]);
        ok = ok && m.accuracy == trace / static_cast<double>(eval::total(cm));
        double lo = 1.0, hi = 0.0;
        for (const auto& s : m.per_class) {
            lo = std::min(lo, s.f);
            hi = std::max(hi, s.f);
        }
        ok = ok && m.macro.f >= lo - 1e-15 && m.macro.f <= hi + 1e-15;
        ++random_cases;
    }
    return {ok, fmt("hand matrices exact, zero-denominator classes score 0, %d random matrices within bounds", random_cases)};
}

Outcome determinism() {
    const fs::path dir = fs::temp_directory_path() / "guidednet_acceptance_det";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ostringstream sink;
    const std::string ds = (dir / "ds").string();
    if (cli::dispatch({"synth", "--out", ds, "--good", "8", "--usable", "8", "--reject", "8", "--seed", "9"}, sink,
                      sink) != 0)
        return {false, "synth failed: " + sink.str()};
    {
        std::ofstream cfg(dir / "cfg.json");
        cfg << R"({"epochs": 2, "lr_decay_epoch": 1, "batch_size": 8, "seed": 3, "preprocess": {"target_size": 64}})";
    }
    auto run_once = [&](const std::string& tag) {
        const std::string ck = (dir / (tag + ".ckpt")).string();
        const int a = cli::dispatch({"train", "--manifest", ds + "/manifest.csv", "--root", ds, "--config",
                                     (dir / "cfg.json").string(), "--out", ck, "--log", (dir / (tag + ".csv")).string()},
                                    sink, sink);
        const int b = cli::dispatch({"eval", "--manifest", ds + "/manifest.csv", "--root", ds, "--ckpt", ck, "--config",
                                     (dir / "cfg.json").string(), "--report", (dir / (tag + ".json")).string()},
                                    sink, sink);
        return a == 0 && b == 0;
    };
    if (!run_once("a") || !run_once("b")) return {false, "train/eval failed: " + sink.str()};
    const std::string ck_a = slurp(dir / "a.ckpt"), ck_b = slurp(dir / "b.ckpt");
    const bool same_ckpt = !ck_a.empty() && ck_a == ck_b;
    const bool same_report = slurp(dir / "a.json") == slurp(dir / "b.json");
    const bool same_log = slurp(dir / "a.csv") == slurp(dir / "b.csv");

    std::istringstream in(ck_a);
    const auto ckpt = train::read_checkpoint(in);
    std::ostringstream out;
    train::write_checkpoint(out, ckpt);
    const bool round_trip = out.str() == ck_a;
    fs::remove_all(dir);
    return {same_ckpt && same_report && same_log && round_trip,
            fmt("checkpoints %s (%zu bytes), reports %s, logs %s, read/write round trip %s",
                same_ckpt ? "identical" : "DIFFER", ck_a.size(), same_report ? "identical" : "DIFFER",
                same_log ? "identical" : "DIFFER", round_trip ? "identical" : "DIFFERS")};
}

Outcome performance() {
    const auto b = bench::run_extremum_bench(1024, 7);
    return {b.identical && b.speedup() >= 3.0,
            fmt("1024x1024 r=7: fast %.1f Mpix/s, naive %.1f Mpix/s, speedup %.1fx (need >= 3x), outputs %s",
                b.fast_mpix_per_s(), b.naive_mpix_per_s(), b.speedup(), b.identical ? "identical" : "DIFFER")};
}

Outcome fov_detection() {
    Rng geo(909);
    const imgproc::PreprocessConfig cfg;
    double center_err = 0.0, radius_err = 0.0;
    int misses = 0;
    const int n = 100;
    for (int i = 0; i < n; ++i) {
        data::SyntheticParams p;
        p.fov_radius_frac = geo.uniform(0.36, 0.44);
        p.fov_center_x_frac = geo.uniform(0.46, 0.54);
        p.fov_center_y_frac = geo.uniform(0.46, 0.54);
        const auto truth = data::synthetic_fov(p);
        Rng rng(derive_seed(909, 1, static_cast<std::uint64_t>(i)));
        const auto img = data::synth_fundus(data::kAllLabels[i % 3], rng, p);
        try {
            const auto c = imgproc::detect_fov(img, cfg);
            center_err += std::hypot(c.cx - truth.cx, c.cy - truth.cy);
            radius_err += std::abs(c.r - truth.r) / truth.r;
        } catch (const NoFovFound&) {
            ++misses;
        }
    }
    const int found = n - misses;
    const double mc = found ? center_err / found : 0.0, mr = found ? radius_err / found : 0.0;
    return {misses == 0 && mc <= 2.0 && mr <= 0.02,
            fmt("%d disks (all grades), %d not found; mean center error %.3f px, mean radius error %.3f%%", n, misses, mc,
                100.0 * mr)};
}

}  // namespace

// Optional arguments select criteria whose names contain any of them.
int main(int argc, char** argv) {
    const std::vector<std::string> filters(argv + 1, argv + argc);
    const std::vector<std::pair<std::string, Outcome (*)()>> criteria{
        {"oracle equivalence", oracle_equivalence},
        {"dark/bright prior properties", prior_properties},
        {"convolution oracle", convolution_oracle},
        {"gradient suite", gradient_suite},
        {"stem geometry and parameters", stem_geometry},
        {"learning-rate schedule", schedule},
        {"metrics correctness", metrics},
        {"determinism", determinism},
        {"performance", performance},
        {"FoV detection", fov_detection},
        {"synthetic ablation", synthetic_ablation},
    };
    int failures = 0;
    std::vector<std::string> lines;
    std::size_t ran = 0;
    for (const auto& [name, fn] : criteria) {
        if (!filters.empty() &&
            std::none_of(filters.begin(), filters.end(), [&](const std::string& f) { return name.find(f) != std::string::npos; }))
            continue;
        ++ran;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        lines.push_back((o.pass ? "PASS  " : "FAIL  ") + name + ": " + o.detail);
        std::cout << lines.back() << std::endl;
    }
    std::cout << "\nsummary\n";
    for (const auto& l : lines) std::cout << l << '\n';
    std::cout << (ran - failures) << '/' << ran << " criteria passed\n";
    return failures;
}
