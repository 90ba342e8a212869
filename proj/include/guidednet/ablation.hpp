#pragma once

#include "guidednet/data.hpp"
#include "guidednet/evaluate.hpp"
#include "guidednet/model.hpp"
#include "guidednet/train.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace guidednet::ablation {

struct AblationConfig {
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    data::GenerateCounts train_counts{200, 200, 200};
    data::GenerateCounts test_counts{100, 100, 100};
    data::SyntheticParams synth;
    train::TrainConfig train;  // stem_variant and seed are set per cell
    std::vector<nnet::StemVariant> variants{nnet::StemVariant::Baseline, nnet::StemVariant::DarkOnly,
                                            nnet::StemVariant::BrightOnly, nnet::StemVariant::DarkBright};
    int threads = 0;  // 0: hardware concurrency

    /// Defaults: 600 train / 300 test images, the default training schedule, network input at the synthetic size.
    static AblationConfig defaults();
};

struct Cell {
    nnet::StemVariant variant = nnet::StemVariant::Baseline;
    std::uint64_t seed = 0;
    eval::MetricsReport report;
    std::vector<train::EpochLog> log;
    double seconds = 0.0;
};

struct VariantSummary {
    nnet::StemVariant variant = nnet::StemVariant::Baseline;
    double mean_accuracy = 0.0;
    double mean_f = 0.0;
    double f_std = 0.0;
    std::vector<double> runs;
};

struct AblationResult {
    std::vector<Cell> cells;  // (variant, seed) order
    std::vector<VariantSummary> summaries;
    double seconds = 0.0;

    const VariantSummary* summary(nnet::StemVariant v) const;
    /// Markdown table: one row per (variant, seed), then mean and std rows per variant.
    std::string table() const;
    std::string to_json() const;
};

/// Per seed: synthesizes train and test sets, preprocesses them once, then trains and evaluates
/// every variant. Cells run on a thread pool; results are assembled in (variant, seed) order and
/// do not depend on the thread count.
AblationResult run_ablation(const AblationConfig& cfg, std::ostream* progress = nullptr);

}  // namespace guidednet::ablation
