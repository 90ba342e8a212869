#include "guidednet/train.hpp"

#include "guidednet/errors.hpp"
#include "guidednet/priors.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace guidednet::train {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'G', 'N', 'E', 'T'};

template <typename U>
void put(std::ostream& out, U v) {
    static_assert(std::is_unsigned_v<U>);
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U take(std::istream& in, const char* what) {
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
        throw CorruptCheckpoint(std::string("checkpoint truncated while reading ") + what);
    }
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
}

template <typename V>
V get_or(const json& j, const char* key, V fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    try {
        return it->get<V>();
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("config field '") + key + "': " + e.what());
    }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw InvalidConfig("config section '" + where + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw InvalidConfig("unknown config field '" + where + it.key() + "'");
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 0) throw InvalidConfig("epochs must be >= 0, got " + std::to_string(epochs));
    if (batch_size < 2) throw InvalidConfig("batch_size must be >= 2 for train-mode batch norm");
    if (!(lr_initial > 0.0) || !(lr_after > 0.0)) throw InvalidConfig("learning rates must be > 0");
    if (lr_decay_epoch < 0 || lr_decay_epoch > epochs) {
        throw InvalidConfig("lr_decay_epoch must lie in [0, epochs], got " + std::to_string(lr_decay_epoch));
    }
    preprocess.validate();
    model_config().validate();
}

nnet::ModelConfig TrainConfig::model_config() const {
    nnet::ModelConfig m = model;
    m.stem.variant = stem_variant;
    return m;
}

TrainConfig parse_train_config(const std::string& json_text, TrainConfig cfg) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw InvalidConfig(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(j,
                   {"epochs", "batch_size", "lr_initial", "lr_decay_epoch", "lr_after", "seed", "stem_variant", "model",
                    "augment", "augment_flags", "preprocess"},
                   "");
    cfg.epochs = get_or(j, "epochs", cfg.epochs);
    cfg.batch_size = get_or(j, "batch_size", cfg.batch_size);
    cfg.lr_initial = get_or(j, "lr_initial", cfg.lr_initial);
    cfg.lr_decay_epoch = get_or(j, "lr_decay_epoch", cfg.lr_decay_epoch);
    cfg.lr_after = get_or(j, "lr_after", cfg.lr_after);
    cfg.seed = get_or(j, "seed", cfg.seed);
    if (j.contains("stem_variant")) {
        try {
            cfg.stem_variant = nnet::parse_stem_variant(get_or<std::string>(j, "stem_variant", ""));
        } catch (const std::exception& e) {
            throw InvalidConfig(std::string("config field 'stem_variant': ") + e.what());
        }
    }
    cfg.augment = get_or(j, "augment", cfg.augment);
    if (j.contains("augment_flags")) {
        const json& a = j["augment_flags"];
        reject_unknown(a, {"hflip", "vflip", "rotate"}, "augment_flags.");
        cfg.augment_flags.hflip = get_or(a, "hflip", cfg.augment_flags.hflip);
        cfg.augment_flags.vflip = get_or(a, "vflip", cfg.augment_flags.vflip);
        cfg.augment_flags.rotate = get_or(a, "rotate", cfg.augment_flags.rotate);
    }
    if (j.contains("preprocess")) {
        const json& p = j["preprocess"];
        reject_unknown(p, {"target_size", "fov_enabled"}, "preprocess.");
        cfg.preprocess.target_size = get_or(p, "target_size", cfg.preprocess.target_size);
        cfg.preprocess.fov_enabled = get_or(p, "fov_enabled", cfg.preprocess.fov_enabled);
    }
    if (j.contains("model")) {
        const json& m = j["model"];
        reject_unknown(m, {"total_channels", "kernel_size", "stride", "padding", "prior", "body", "class_count"},
                       "model.");
        nnet::GuidedStemConfig& s = cfg.model.stem;
        s.total_channels = get_or(m, "total_channels", s.total_channels);
        s.kernel_size = get_or(m, "kernel_size", s.kernel_size);
        s.stride = get_or(m, "stride", s.stride);
        s.padding = get_or(m, "padding", s.padding);
        cfg.model.class_count = get_or(m, "class_count", cfg.model.class_count);
        if (m.contains("prior")) {
            const json& pr = m["prior"];
            reject_unknown(pr, {"patch_radius", "kernel_size", "sigma", "stride", "padding"}, "model.prior.");
            s.prior.patch_radius = get_or(pr, "patch_radius", s.prior.patch_radius);
            s.prior.kernel_size = get_or(pr, "kernel_size", s.prior.kernel_size);
            s.prior.sigma = get_or(pr, "sigma", s.prior.sigma);
            s.prior.stride = get_or(pr, "stride", s.prior.stride);
            s.prior.padding = get_or(pr, "padding", s.prior.padding);
        }
        if (m.contains("body")) {
            if (!m["body"].is_array()) throw InvalidConfig("config field 'model.body' must be an array");
            cfg.model.body.clear();
            for (const json& b : m["body"]) {
                reject_unknown(b, {"out_channels", "kernel", "stride"}, "model.body[].");
                nnet::ConvBlockConfig block;
                block.out_channels = get_or(b, "out_channels", block.out_channels);
                block.kernel = get_or(b, "kernel", block.kernel);
                block.stride = get_or(b, "stride", block.stride);
                cfg.model.body.push_back(block);
            }
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("config not found: " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return parse_train_config(text.str(), std::move(base));
    } catch (const InvalidConfig& e) {
        throw InvalidConfig(path.string() + ": " + e.what());
    }
}

std::string to_json(const TrainConfig& cfg) {
    nlohmann::ordered_json j;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["lr_initial"] = cfg.lr_initial;
    j["lr_decay_epoch"] = cfg.lr_decay_epoch;
    j["lr_after"] = cfg.lr_after;
    j["seed"] = cfg.seed;
    j["stem_variant"] = std::string(nnet::to_string(cfg.stem_variant));
    const nnet::GuidedStemConfig& s = cfg.model.stem;
    j["model"]["total_channels"] = s.total_channels;
    j["model"]["kernel_size"] = s.kernel_size;
    j["model"]["stride"] = s.stride;
    j["model"]["padding"] = s.padding;
    j["model"]["prior"] = {{"patch_radius", s.prior.patch_radius},
                           {"kernel_size", s.prior.kernel_size},
                           {"sigma", s.prior.sigma},
                           {"stride", s.prior.stride},
                           {"padding", s.prior.padding}};
    j["model"]["body"] = nlohmann::ordered_json::array();
    for (const auto& b : cfg.model.body) {
        j["model"]["body"].push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"stride", b.stride}});
    }
    j["model"]["class_count"] = cfg.model.class_count;
    j["augment"] = cfg.augment;
    j["augment_flags"] = {{"hflip", cfg.augment_flags.hflip},
                          {"vflip", cfg.augment_flags.vflip},
                          {"rotate", cfg.augment_flags.rotate}};
    j["preprocess"] = {{"target_size", cfg.preprocess.target_size}, {"fov_enabled", cfg.preprocess.fov_enabled}};
    return j.dump(2) + "\n";
}

double learning_rate(int epoch, const TrainConfig& cfg) {
    return epoch <= cfg.lr_decay_epoch ? cfg.lr_initial : cfg.lr_after;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    out.write(kMagic, 4);
    put<std::uint32_t>(out, Checkpoint::kVersion);
    put<std::uint32_t>(out, ckpt.fingerprint);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const NamedTensor& t : ckpt.tensors) {
        put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put<std::uint8_t>(out, t.frozen ? 1 : 0);
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
        for (std::uint32_t d : t.dims) put<std::uint32_t>(out, d);
        for (float v : t.data) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    put<std::uint32_t>(out, ckpt.epochs_completed);
    put<std::uint64_t>(out, ckpt.seed);
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw CorruptCheckpoint("bad checkpoint magic");
    const auto version = take<std::uint32_t>(in, "version");
    if (version != Checkpoint::kVersion) {
        throw CorruptCheckpoint("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.fingerprint = take<std::uint32_t>(in, "fingerprint");
    const auto count = take<std::uint32_t>(in, "tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name.resize(take<std::uint16_t>(in, "name length"));
        if (!in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) {
            throw CorruptCheckpoint("checkpoint truncated while reading a tensor name");
        }
        const auto flag = take<std::uint8_t>(in, "frozen flag");
        if (flag > 1) throw CorruptCheckpoint("tensor '" + t.name + "' has invalid frozen flag");
        t.frozen = flag == 1;
        const auto rank = take<std::uint8_t>(in, "rank");
        std::uint64_t elements = 1;
        for (int r = 0; r < rank; ++r) {
            t.dims.push_back(take<std::uint32_t>(in, "dims"));
            elements *= t.dims.back();
        }
        if (elements > (std::uint64_t{1} << 30)) throw CorruptCheckpoint("tensor '" + t.name + "' is implausibly large");
        t.data.resize(elements);
        for (float& v : t.data) v = std::bit_cast<float>(take<std::uint32_t>(in, "tensor data"));
        ckpt.tensors.push_back(std::move(t));
    }
    ckpt.epochs_completed = take<std::uint32_t>(in, "epochs completed");
    ckpt.seed = take<std::uint64_t>(in, "seed");
    if (in.peek() != std::char_traits<char>::eof()) throw CorruptCheckpoint("trailing bytes after checkpoint");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFile("cannot open checkpoint for writing: " + path.string());
    write_checkpoint(out, ckpt);
    if (!out) throw MissingFile("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("checkpoint not found: " + path.string());
    try {
        return read_checkpoint(in);
    } catch (const CorruptCheckpoint& e) {
        throw CorruptCheckpoint(path.string() + ": " + e.what());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const nnet::ModelConfig& expected) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.fingerprint != expected.fingerprint()) {
        char msg[160];
        std::snprintf(msg, sizeof msg, "%s: checkpoint fingerprint %08x does not match model config %08x (stem=%s)",
                      path.string().c_str(), ckpt.fingerprint, expected.fingerprint(),
                      std::string(nnet::to_string(expected.stem.variant)).c_str());
        throw FingerprintMismatch(msg);
    }
    return ckpt;
}

Checkpoint make_checkpoint(const nnet::Model<float>& model, std::uint32_t epochs_completed, std::uint64_t seed) {
    Checkpoint ckpt;
    ckpt.fingerprint = model.config().fingerprint();
    ckpt.epochs_completed = epochs_completed;
    ckpt.seed = seed;
    for (const auto& p : model.params().all()) {
        NamedTensor t;
        t.name = p.name;
        t.frozen = !p.learnable();
        t.dims.assign(p.dims.begin(), p.dims.end());
        t.data = p.value;
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

nnet::Model<float> restore_model(const Checkpoint& ckpt, const nnet::ModelConfig& config) {
    if (ckpt.fingerprint != config.fingerprint()) {
        throw FingerprintMismatch("checkpoint fingerprint does not match the " +
                                  std::string(nnet::to_string(config.stem.variant)) + " model config");
    }
    nnet::Model<float> model(config);
    auto& params = model.params().all();
    if (params.size() != ckpt.tensors.size()) {
        throw CorruptCheckpoint("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                                std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const NamedTensor& t = ckpt.tensors[i];
        auto& p = params[i];
        const bool same_dims = std::equal(t.dims.begin(), t.dims.end(), p.dims.begin(), p.dims.end(),
                                          [](std::uint32_t a, int b) { return a == static_cast<std::uint32_t>(b); });
        if (t.name != p.name || !same_dims || t.frozen == p.learnable()) {
            throw CorruptCheckpoint("checkpoint tensor '" + t.name + "' does not match model tensor '" + p.name + "'");
        }
        if (p.kind == nnet::ParamKind::Frozen && t.data != p.value) {
            throw CorruptCheckpoint("checkpoint tensor '" + t.name + "' differs from the Gaussian kernel of its config");
        }
        p.value = t.data;
    }
    return model;
}

std::optional<nnet::ModelConfig> config_for_fingerprint(std::uint32_t fingerprint) {
    for (auto v : {nnet::StemVariant::Baseline, nnet::StemVariant::DarkOnly, nnet::StemVariant::BrightOnly,
                   nnet::StemVariant::DarkBright}) {
        nnet::ModelConfig cfg = nnet::ModelConfig::for_variant(v);
        if (cfg.fingerprint() == fingerprint) return cfg;
    }
    return std::nullopt;
}

std::string log_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,mean_loss,val_macro_f\n";
    char line[96];
    for (const EpochLog& e : log) {
        if (e.val_macro_f) {
            std::snprintf(line, sizeof line, "%d,%.9g,%.9g\n", e.epoch, e.mean_loss, *e.val_macro_f);
        } else {
            std::snprintf(line, sizeof line, "%d,%.9g,\n", e.epoch, e.mean_loss);
        }
        out += line;
    }
    return out;
}

RawImage network_input(const RawImage& image, const imgproc::PreprocessConfig& cfg) {
    try {
        return imgproc::preprocess(image, cfg);
    } catch (const NoFovFound&) {
        imgproc::PreprocessConfig whole_frame = cfg;
        whole_frame.fov_enabled = false;
        return imgproc::preprocess(image, whole_frame);
    }
}

data::ImageSource preprocessed_source(data::ImageSource raw, const imgproc::PreprocessConfig& cfg) {
    cfg.validate();
    return data::cached_source(
        [raw = std::move(raw), cfg](const std::string& path) { return network_input(raw(path), cfg); });
}

TrainResult train(const TrainConfig& cfg, const data::Manifest& train_set, const data::ImageSource& source,
                  const data::Manifest* validation, std::ostream* progress) {
    cfg.validate();
    if (train_set.empty()) throw TooFewSamples("training manifest is empty");
    if (train_set.size() < 2) throw DegenerateBatch("training needs at least two samples for batch norm");
    if (validation && validation->empty()) throw TooFewSamples("validation manifest is empty");

    nnet::Model<float> model(cfg.model_config());
    model.initialize(cfg.seed);

    data::BatchOptions options;
    options.batch_size = cfg.batch_size;
    options.seed = derive_seed(cfg.seed, 0xba7c4);
    options.augment = cfg.augment;
    options.augment_flags = cfg.augment_flags;
    data::BatchIterator batches(train_set, source, options);

    TrainResult result;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = learning_rate(epoch, cfg);
        batches.start_epoch(epoch - 1);

        std::vector<data::Batch> epoch_batches;
        data::Batch b;
        while (batches.next(b)) {
            if (b.images.size() == 1 && !epoch_batches.empty()) {
                auto& last = epoch_batches.back();
                last.images.push_back(std::move(b.images[0]));
                last.labels.push_back(b.labels[0]);
                last.records.push_back(b.records[0]);
            } else {
                epoch_batches.push_back(std::move(b));
            }
            b = {};
        }

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t bi = 0; bi < epoch_batches.size(); ++bi) {
            const data::Batch& batch = epoch_batches[bi];
            std::vector<const RawImage*> ptrs;
            for (const RawImage& im : batch.images) ptrs.push_back(&im);
            const nnet::Tensor<float> input = nnet::make_batch<float>(ptrs);
            const nnet::Tensor<float> logits = model.forward(input, nnet::Mode::Train);
            const auto loss = nnet::softmax_cross_entropy(logits, batch.labels);
            if (!std::isfinite(static_cast<double>(loss.loss))) {
                throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(bi + 1));
            }
            model.backward(loss.grad_logits);
            nnet::sgd_step(model.params(), lr);
            loss_sum += static_cast<double>(loss.loss) * static_cast<double>(batch.images.size());
            seen += batch.images.size();
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.mean_loss = loss_sum / static_cast<double>(seen);
        if (validation) entry.val_macro_f = evaluate_model(model, *validation, source).macro.f;
        if (progress) {
            char line[128];
            std::snprintf(line, sizeof line, "epoch %d/%d lr %g loss %.5f", epoch, cfg.epochs, lr, entry.mean_loss);
            *progress << line;
            if (entry.val_macro_f) {
                std::snprintf(line, sizeof line, " val_macro_f %.4f", *entry.val_macro_f);
                *progress << line;
            }
            *progress << '\n' << std::flush;
        }
        result.log.push_back(entry);
    }
    result.checkpoint = make_checkpoint(model, static_cast<std::uint32_t>(cfg.epochs), cfg.seed);
    return result;
}

std::vector<int> predict(nnet::Model<float>& model, const data::Manifest& manifest, const data::ImageSource& source,
                         int batch_size) {
    std::vector<int> predictions;
    predictions.reserve(manifest.size());
    for (std::size_t start = 0; start < manifest.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(manifest.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<RawImage> images;
        for (std::size_t i = start; i < end; ++i) images.push_back(source(manifest[i].path));
        std::vector<const RawImage*> ptrs;
        for (const RawImage& im : images) ptrs.push_back(&im);
        const nnet::Tensor<float> logits = model.forward(nnet::make_batch<float>(ptrs), nnet::Mode::Eval);
        for (int n = 0; n < logits.shape().n; ++n) {
            int best = 0;
            for (int c = 1; c < logits.shape().c; ++c) {
                if (logits(n, c, 0, 0) > logits(n, best, 0, 0)) best = c;
            }
            predictions.push_back(best);
        }
    }
    return predictions;
}

eval::MetricsReport evaluate_model(nnet::Model<float>& model, const data::Manifest& manifest,
                                   const data::ImageSource& source) {
    std::vector<int> truth;
    for (const data::Record& r : manifest) truth.push_back(data::index_of(r.label));
    const std::vector<int> predicted = predict(model, manifest, source);
    return eval::metrics_from_cm(eval::confusion_matrix(truth, predicted));
}

eval::MetricsReport evaluate_model(const Checkpoint& ckpt, const nnet::ModelConfig& config,
                                   const data::Manifest& manifest, const data::ImageSource& source) {
    nnet::Model<float> model = restore_model(ckpt, config);
    return evaluate_model(model, manifest, source);
}

}  // namespace guidednet::train
