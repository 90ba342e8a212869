#include "guidednet/ablation.hpp"

#include "guidednet/errors.hpp"
#include "guidednet/imgproc.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <thread>

#include "json.hpp"

namespace guidednet::ablation {

namespace {

using Clock = std::chrono::steady_clock;

struct SeedData {
    data::Manifest train;
    data::Manifest test;
    std::shared_ptr<const std::map<std::string, RawImage>> images;

    data::ImageSource source() const {
        return [images = images](const std::string& path) {
            auto it = images->find(path);
            if (it == images->end()) throw ImageLoadError("no synthetic image named " + path);
            return it->second;
        };
    }
};

SeedData make_seed_data(const AblationConfig& cfg, std::uint64_t seed) {
    auto images = std::make_shared<std::map<std::string, RawImage>>();
    SeedData out;
    auto add = [&](const data::GenerateCounts& counts, std::uint64_t stream, const std::string& prefix,
                   data::Manifest& manifest) {
        for (data::GeneratedImage& g : data::generate_images(counts, derive_seed(seed, stream), cfg.synth, prefix)) {
            (*images)[g.record.path] = train::network_input(g.image, cfg.train.preprocess);
            manifest.push_back(g.record);
        }
    };
    add(cfg.train_counts, 1, "train/", out.train);
    add(cfg.test_counts, 2, "test/", out.test);
    out.images = std::move(images);
    return out;
}

}  // namespace

AblationConfig AblationConfig::defaults() {
    AblationConfig cfg;
    cfg.train.preprocess.target_size = cfg.synth.image_size;
    return cfg;
}

const VariantSummary* AblationResult::summary(nnet::StemVariant v) const {
    for (const VariantSummary& s : summaries) {
        if (s.variant == v) return &s;
    }
    return nullptr;
}

std::string AblationResult::table() const {
    std::string out = "| variant | seed | accuracy | macro P | macro R | macro F |\n|---|---|---|---|---|---|\n";
    char line[192];
    for (const VariantSummary& s : summaries) {
        std::vector<double> acc;
        for (const Cell& c : cells) {
            if (c.variant != s.variant) continue;
            const eval::MetricsReport& r = c.report;
            std::snprintf(line, sizeof line, "| %s | %llu | %.4f | %.4f | %.4f | %.4f |\n",
                          std::string(nnet::to_string(c.variant)).c_str(), static_cast<unsigned long long>(c.seed),
                          r.accuracy, r.macro.precision, r.macro.recall, r.macro.f);
            out += line;
            acc.push_back(r.accuracy);
        }
        const std::string name(nnet::to_string(s.variant));
        std::snprintf(line, sizeof line, "| %s | mean | %.4f |  |  | %.4f |\n", name.c_str(), s.mean_accuracy, s.mean_f);
        out += line;
        std::snprintf(line, sizeof line, "| %s | std | %.4f |  |  | %.4f |\n", name.c_str(), eval::sample_std(acc),
                      s.f_std);
        out += line;
    }
    return out;
}

std::string AblationResult::to_json() const {
    nlohmann::ordered_json j;
    j["cells"] = nlohmann::ordered_json::array();
    for (const Cell& c : cells) {
        nlohmann::ordered_json cell;
        cell["variant"] = std::string(nnet::to_string(c.variant));
        cell["seed"] = c.seed;
        cell["accuracy"] = c.report.accuracy;
        cell["macro"] = {{"precision", c.report.macro.precision},
                         {"recall", c.report.macro.recall},
                         {"f", c.report.macro.f}};
        cell["confusion"] = c.report.confusion;
        cell["final_loss"] = c.log.empty() ? 0.0 : c.log.back().mean_loss;
        j["cells"].push_back(cell);
    }
    for (const VariantSummary& s : summaries) {
        j["summary"][std::string(nnet::to_string(s.variant))] = {
            {"mean_accuracy", s.mean_accuracy}, {"mean_f", s.mean_f}, {"f_std", s.f_std}, {"runs", s.runs}};
    }
    return j.dump(2) + "\n";
}

AblationResult run_ablation(const AblationConfig& cfg, std::ostream* progress) {
    if (cfg.seeds.empty() || cfg.variants.empty()) throw InvalidConfig("ablation needs at least one seed and variant");
    cfg.synth.validate();
    const auto started = Clock::now();

    std::mutex log_mutex;
    auto say = [&](const std::string& text) {
        if (!progress) return;
        std::lock_guard lock(log_mutex);
        *progress << text << std::flush;
    };

    std::vector<SeedData> datasets;
    for (std::uint64_t seed : cfg.seeds) {
        datasets.push_back(make_seed_data(cfg, seed));
        say("seed " + std::to_string(seed) + ": synthesized " + std::to_string(datasets.back().train.size()) +
            " train / " + std::to_string(datasets.back().test.size()) + " test images\n");
    }

    const std::size_t n_seeds = cfg.seeds.size();
    AblationResult result;
    result.cells.resize(cfg.variants.size() * n_seeds);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        for (std::size_t i = next++; i < result.cells.size(); i = next++) {
            try {
                Cell& cell = result.cells[i];
                cell.variant = cfg.variants[i / n_seeds];
                cell.seed = cfg.seeds[i % n_seeds];
                const SeedData& ds = datasets[i % n_seeds];
                train::TrainConfig tc = cfg.train;
                tc.stem_variant = cell.variant;
                tc.seed = cell.seed;
                const auto t0 = Clock::now();
                const data::ImageSource source = ds.source();
                train::TrainResult trained = train::train(tc, ds.train, source);
                cell.log = std::move(trained.log);
                cell.report = train::evaluate_model(trained.checkpoint, tc.model_config(), ds.test, source);
                cell.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
                char line[160];
                std::snprintf(line, sizeof line, "%-11s seed %llu  acc %.4f  macro-F %.4f  (%.0f s)\n",
                              std::string(nnet::to_string(cell.variant)).c_str(),
                              static_cast<unsigned long long>(cell.seed), cell.report.accuracy, cell.report.macro.f,
                              cell.seconds);
                say(line);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = result.cells.size();
            }
        }
    };

    int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::clamp(threads, 1, static_cast<int>(result.cells.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    for (nnet::StemVariant v : cfg.variants) {
        VariantSummary s;
        s.variant = v;
        std::vector<double> acc;
        for (const Cell& c : result.cells) {
            if (c.variant != v) continue;
            s.runs.push_back(c.report.macro.f);
            acc.push_back(c.report.accuracy);
        }
        s.mean_f = eval::mean(s.runs);
        s.f_std = eval::sample_std(s.runs);
        s.mean_accuracy = eval::mean(acc);
        result.summaries.push_back(std::move(s));
    }
    result.seconds = std::chrono::duration<double>(Clock::now() - started).count();
    return result;
}

}  // namespace guidednet::ablation
