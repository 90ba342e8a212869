#include "doctest.h"

#include "guidednet/errors.hpp"
#include "guidednet/train.hpp"

#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

using namespace guidednet;
using data::QualityLabel;

namespace {

// Flat images whose brightness encodes the class, with a little noise: linearly separable.
struct Toy {
    data::Manifest manifest;
    std::map<std::string, RawImage> images;

    data::ImageSource source() const {
        return [this](const std::string& path) { return images.at(path); };
    }
};

Toy make_toy(int per_class, int size, std::uint64_t seed) {
    Toy toy;
    Rng rng(seed);
    const float level[3] = {0.8f, 0.5f, 0.2f};
    for (auto label : data::kAllLabels) {
        for (int i = 0; i < per_class; ++i) {
            const std::string path = std::string(data::to_string(label)) + std::to_string(i);
            RawImage img(3, size, size);
            for (float& v : img.values) v = level[data::index_of(label)] + static_cast<float>(rng.uniform(-0.05, 0.05));
            toy.images[path] = img;
            toy.manifest.push_back({path, label});
        }
    }
    return toy;
}

train::TrainConfig toy_config() {
    train::TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 4;
    cfg.lr_decay_epoch = 5;
    cfg.seed = 3;
    cfg.augment = false;
    cfg.preprocess.target_size = 32;
    return cfg;
}

std::string bytes_of(const train::Checkpoint& c) {
    std::ostringstream out;
    train::write_checkpoint(out, c);
    return out.str();
}

}  // namespace

TEST_CASE("learning rate schedule") {
    const train::TrainConfig cfg;
    CHECK(train::learning_rate(10, cfg) == 0.01);
    CHECK(train::learning_rate(11, cfg) == 0.001);
    for (int e = 1; e <= 10; ++e) CHECK(train::learning_rate(e, cfg) == 0.01);
    for (int e = 11; e <= 15; ++e) CHECK(train::learning_rate(e, cfg) == 0.001);
    train::TrainConfig at_zero;
    at_zero.lr_decay_epoch = 0;
    CHECK(train::learning_rate(1, at_zero) == 0.001);
}

TEST_CASE("train config validation and JSON") {
    const train::TrainConfig defaults;
    CHECK(defaults.epochs == 15);
    CHECK(defaults.batch_size == 8);
    CHECK(defaults.lr_initial == 0.01);
    CHECK(defaults.lr_decay_epoch == 10);
    CHECK(defaults.lr_after == 0.001);
    CHECK_NOTHROW(defaults.validate());

    const auto cfg = train::parse_train_config(R"({"epochs": 3, "lr_decay_epoch": 2, "stem_variant": "baseline",
        "preprocess": {"target_size": 64}, "augment_flags": {"rotate": false}})");
    CHECK(cfg.epochs == 3);
    CHECK(cfg.stem_variant == nnet::StemVariant::Baseline);
    CHECK(cfg.preprocess.target_size == 64);
    CHECK_FALSE(cfg.augment_flags.rotate);
    CHECK(cfg.batch_size == 8);

    const auto back = train::parse_train_config(train::to_json(cfg));
    CHECK(train::to_json(back) == train::to_json(cfg));

    CHECK_THROWS_AS(train::parse_train_config(R"({"epoch": 3})"), InvalidConfig);
    CHECK_THROWS_AS(train::parse_train_config(R"({"epochs": -1})"), InvalidConfig);
    CHECK_THROWS_AS(train::parse_train_config(R"({"lr_decay_epoch": 20})"), InvalidConfig);
    CHECK_THROWS_AS(train::parse_train_config(R"({"lr_initial": 0})"), InvalidConfig);
    CHECK_THROWS_AS(train::parse_train_config(R"({"epochs": "many"})"), InvalidConfig);
    CHECK_THROWS_AS(train::parse_train_config("{nope"), InvalidConfig);
}

TEST_CASE("zero epochs returns the seeded initialization") {
    const Toy toy = make_toy(2, 16, 1);
    auto cfg = toy_config();
    cfg.epochs = 0;
    cfg.lr_decay_epoch = 0;
    const auto result = train::train(cfg, toy.manifest, toy.source());
    nnet::Model<float> init(cfg.model_config());
    init.initialize(cfg.seed);
    CHECK(result.checkpoint == train::make_checkpoint(init, 0, cfg.seed));
    CHECK(result.log.empty());
}

TEST_CASE("training on a separable toy set lowers the loss and fits it") {
    const Toy toy = make_toy(6, 32, 2);  // 18 samples
    const data::Manifest sixteen(toy.manifest.begin(), toy.manifest.begin() + 16);
    const auto cfg = toy_config();
    const auto result = train::train(cfg, sixteen, toy.source());
    REQUIRE(result.log.size() == 5);
    MESSAGE("toy loss " << result.log.front().mean_loss << " -> " << result.log.back().mean_loss);
    CHECK(result.log.back().mean_loss < result.log.front().mean_loss);

    const auto twin = train::train(cfg, sixteen, toy.source());
    CHECK(bytes_of(twin.checkpoint) == bytes_of(result.checkpoint));
    CHECK(train::log_csv(twin.log) == train::log_csv(result.log));

    // Eval mode relies on running batch-norm statistics, which need more than 20 steps to settle.
    auto longer = cfg;
    longer.epochs = 15;
    longer.lr_decay_epoch = 15;
    const auto fitted = train::train(longer, sixteen, toy.source());
    const auto report = train::evaluate_model(fitted.checkpoint, longer.model_config(), sixteen, toy.source());
    CHECK(report.accuracy >= 0.9);
    const auto again = train::evaluate_model(fitted.checkpoint, longer.model_config(), sixteen, toy.source());
    CHECK(again == report);
}

TEST_CASE("validation log, trailing singleton batch, one sample per class") {
    const Toy toy = make_toy(3, 16, 4);
    auto cfg = toy_config();
    cfg.epochs = 2;
    cfg.lr_decay_epoch = 1;
    cfg.batch_size = 8;  // 9 samples: batches of 8 and 1, merged into one of 9
    const data::Manifest per_class{toy.manifest[0], toy.manifest[3], toy.manifest[6]};
    const auto result = train::train(cfg, toy.manifest, toy.source(), &per_class);
    REQUIRE(result.log.size() == 2);
    CHECK(result.log[0].val_macro_f.has_value());
    const std::string csv = train::log_csv(result.log);
    CHECK(csv.rfind("epoch,mean_loss,val_macro_f\n", 0) == 0);

    const auto report = train::evaluate_model(result.checkpoint, cfg.model_config(), per_class, toy.source());
    CHECK(eval::total(report.confusion) == 3);
}

TEST_CASE("non-finite loss aborts naming the epoch and batch") {
    Toy toy = make_toy(2, 16, 5);
    toy.images.begin()->second.values[0] = std::numeric_limits<float>::quiet_NaN();
    auto cfg = toy_config();
    cfg.epochs = 1;
    cfg.lr_decay_epoch = 1;
    try {
        train::train(cfg, toy.manifest, toy.source());
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
        CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    }
}

TEST_CASE("checkpoint round trip, corruption and fingerprint checks") {
    const auto dir = std::filesystem::temp_directory_path() / "guidednet_test_ckpt";
    std::filesystem::create_directories(dir);
    nnet::Model<float> model(nnet::ModelConfig::for_variant(nnet::StemVariant::DarkBright));
    model.initialize(9);
    const auto ckpt = train::make_checkpoint(model, 15, 1234);
    train::save_checkpoint(dir / "a.ckpt", ckpt);
    const auto loaded = train::load_checkpoint(dir / "a.ckpt", model.config());
    CHECK(loaded == ckpt);
    train::save_checkpoint(dir / "b.ckpt", loaded);
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    const std::string bytes = slurp(dir / "a.ckpt");
    CHECK(bytes == slurp(dir / "b.ckpt"));
    CHECK(bytes.substr(0, 4) == "GNET");
    CHECK(bytes[4] == 1);

    const auto* gauss = &ckpt.tensors[0];
    CHECK(gauss->name == "stem.gaussian");
    CHECK(gauss->frozen);

    {
        std::ofstream out(dir / "cut.ckpt", std::ios::binary);
        out << bytes.substr(0, bytes.size() - 5);
    }
    CHECK_THROWS_AS(train::load_checkpoint(dir / "cut.ckpt"), CorruptCheckpoint);
    {
        std::ofstream out(dir / "magic.ckpt", std::ios::binary);
        out << "GNEX" << bytes.substr(4);
    }
    CHECK_THROWS_AS(train::load_checkpoint(dir / "magic.ckpt"), CorruptCheckpoint);
    std::string version = bytes;
    version[4] = 2;
    std::istringstream vin(version);
    CHECK_THROWS_AS(train::read_checkpoint(vin), CorruptCheckpoint);

    const auto base = nnet::ModelConfig::for_variant(nnet::StemVariant::Baseline);
    CHECK_THROWS_AS(train::load_checkpoint(dir / "a.ckpt", base), FingerprintMismatch);
    CHECK_THROWS_AS(train::restore_model(ckpt, base), FingerprintMismatch);

    auto tampered = ckpt;
    tampered.tensors[0].data[0] += 0.01f;
    CHECK_THROWS_AS(train::restore_model(tampered, model.config()), CorruptCheckpoint);

    const auto restored = train::restore_model(ckpt, model.config());
    CHECK(train::make_checkpoint(restored, 15, 1234) == ckpt);
    CHECK(train::config_for_fingerprint(ckpt.fingerprint)->stem.variant == nnet::StemVariant::DarkBright);
    CHECK_FALSE(train::config_for_fingerprint(0xdeadbeef).has_value());
}
