#pragma once

#include "guidednet/data.hpp"
#include "guidednet/evaluate.hpp"
#include "guidednet/imgproc.hpp"
#include "guidednet/model.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace guidednet::train {

struct TrainConfig {
    int epochs = 15;
    int batch_size = 8;
    double lr_initial = 0.01;
    int lr_decay_epoch = 10;
    double lr_after = 0.001;
    std::uint64_t seed = 0;
    nnet::StemVariant stem_variant = nnet::StemVariant::DarkBright;
    nnet::ModelConfig model;  // its stem variant is overridden by stem_variant
    bool augment = true;
    imgproc::AugmentFlags augment_flags;
    imgproc::PreprocessConfig preprocess;

    /// Throws InvalidConfig naming the field.
    void validate() const;
    nnet::ModelConfig model_config() const;
};

/// Reads a JSON object whose keys mirror the TrainConfig field names; absent keys keep defaults.
/// Throws InvalidConfig on unknown keys or bad values.
TrainConfig parse_train_config(const std::string& json_text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
std::string to_json(const TrainConfig& cfg);

/// lr_initial for epoch <= lr_decay_epoch, lr_after afterwards. Epochs are 1-based.
double learning_rate(int epoch, const TrainConfig& cfg);

struct NamedTensor {
    std::string name;
    bool frozen = false;  // not updated by the optimizer (Gaussian kernel, BN running statistics)
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::uint32_t fingerprint = 0;
    std::vector<NamedTensor> tensors;
    std::uint32_t epochs_completed = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
/// Throws CorruptCheckpoint on bad magic, version, or truncation.
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also throws FingerprintMismatch when the file was written for another model config.
Checkpoint load_checkpoint(const std::filesystem::path& path, const nnet::ModelConfig& expected);

Checkpoint make_checkpoint(const nnet::Model<float>& model, std::uint32_t epochs_completed, std::uint64_t seed);
/// Throws FingerprintMismatch, or CorruptCheckpoint when tensors are missing, misshapen, or the
/// stored Gaussian kernel differs from the one its config implies.
nnet::Model<float> restore_model(const Checkpoint& ckpt, const nnet::ModelConfig& config);

/// The default config of whichever stem variant produced this fingerprint.
std::optional<nnet::ModelConfig> config_for_fingerprint(std::uint32_t fingerprint);

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    std::optional<double> val_macro_f;
};

/// `epoch,mean_loss,val_macro_f` with a header; the last field is empty without validation data.
std::string log_csv(const std::vector<EpochLog>& log);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
};

/// imgproc::preprocess, except that an image whose FoV cannot be found is resized whole
/// instead of aborting a training or evaluation run.
RawImage network_input(const RawImage& image, const imgproc::PreprocessConfig& cfg);

/// Wraps a raw-image source with network_input and memoizes the result.
data::ImageSource preprocessed_source(data::ImageSource raw, const imgproc::PreprocessConfig& cfg);

/// `source` must yield network-ready (preprocessed) images. A trailing batch of one sample is
/// merged into the batch before it, since train-mode batch norm needs two.
/// Throws NonFiniteLoss naming the epoch and batch.
TrainResult train(const TrainConfig& cfg, const data::Manifest& train_set, const data::ImageSource& source,
                  const data::Manifest* validation = nullptr, std::ostream* progress = nullptr);

/// Argmax predictions of an eval-mode forward pass.
std::vector<int> predict(nnet::Model<float>& model, const data::Manifest& manifest, const data::ImageSource& source,
                         int batch_size = 16);

eval::MetricsReport evaluate_model(nnet::Model<float>& model, const data::Manifest& manifest,
                                   const data::ImageSource& source);
eval::MetricsReport evaluate_model(const Checkpoint& ckpt, const nnet::ModelConfig& config,
                                   const data::Manifest& manifest, const data::ImageSource& source);

}  // namespace guidednet::train
