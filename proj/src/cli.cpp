#include "guidednet/cli.hpp"

#include "guidednet/ablation.hpp"
#include "guidednet/bench.hpp"
#include "guidednet/data.hpp"
#include "guidednet/errors.hpp"
#include "guidednet/evaluate.hpp"
#include "guidednet/gradcheck.hpp"
#include "guidednet/image_io.hpp"
#include "guidednet/imgproc.hpp"
#include "guidednet/priors.hpp"
#include "guidednet/train.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

namespace guidednet::cli {

namespace {

constexpr const char* kSynopsis = R"(usage: guidednet <command> [options]

commands:
  synth      --out DIR --good N --usable N --reject N [--seed S] [--size PX]
  preprocess --in IMG --out IMG [--no-fov] [--size PX]
  priors     --in IMG --dark OUT.pgm --bright OUT.pgm [--radius R]
  train      --manifest F --root DIR --out CKPT [--config F] [--log F] [--val F]
             [--epochs N] [--batch-size N] [--seed S] [--variant V] [--size PX]
  eval       --manifest F --root DIR --ckpt F --report OUT.json
             [--config F] [--variant V] [--size PX]
  kfold      --manifest F --k K --seed S --out-prefix P
  gradcam    --ckpt F --in IMG --class {good|usable|reject} --out OUT.pgm
             [--config F] [--variant V] [--size PX]
  gradcheck  [--variant V|all] [--entries N] [--fault]
  bench      [--size N] [--radius R] [--repeats N]
  ablate     --out DIR [--seeds S1,S2,...] [--epochs N] [--threads N]

variants: baseline, dark_only, bright_only, dark_bright
run 'guidednet <command> --help' for details
)";

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFile("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw MissingFile("failed writing " + path.string());
}

struct Options {
    // synth
    std::string out_dir;
    std::size_t good = 0, usable = 0, reject = 0;
    std::uint64_t seed = 0;
    int size = 0;
    // preprocess / priors / gradcam
    std::string in, out, dark, bright, klass;
    bool no_fov = false;
    int radius = 7;
    // train / eval
    std::string manifest, root, config, ckpt, log, val, report, variant;
    int epochs = -1, batch_size = -1;
    // kfold
    int k = 5;
    std::string out_prefix;
    // gradcheck
    std::size_t entries = 64;
    bool fault = false;
    // bench
    int repeats = 3;
    // ablate
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    int threads = 0;
};

// Subcommands share this builder but not every option, and CLI::App::count throws on unknown names.
bool given(CLI::App* cmd, const std::string& name) {
    const CLI::Option* opt = cmd->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

train::TrainConfig build_train_config(const Options& o, CLI::App* cmd) {
    train::TrainConfig cfg;
    if (!o.config.empty()) cfg = train::load_train_config(o.config);
    if (given(cmd, "--epochs")) cfg.epochs = o.epochs;
    if (given(cmd, "--batch-size")) cfg.batch_size = o.batch_size;
    if (given(cmd, "--seed")) cfg.seed = o.seed;
    if (given(cmd, "--variant")) cfg.stem_variant = nnet::parse_stem_variant(o.variant);
    if (given(cmd, "--size")) cfg.preprocess.target_size = o.size;
    if (given(cmd, "--no-fov")) cfg.preprocess.fov_enabled = false;
    cfg.lr_decay_epoch = std::min(cfg.lr_decay_epoch, cfg.epochs);
    cfg.validate();
    return cfg;
}

// Model config from --config/--variant when given, else the default config matching the checkpoint.
nnet::ModelConfig resolve_model(const train::TrainConfig& cfg, bool from_file, const train::Checkpoint& ckpt,
                                const std::string& ckpt_path) {
    if (from_file) return cfg.model_config();
    if (auto m = train::config_for_fingerprint(ckpt.fingerprint)) return *m;
    char msg[200];
    std::snprintf(msg, sizeof msg, "%s: fingerprint %08x matches no default model config; pass --config",
                  ckpt_path.c_str(), ckpt.fingerprint);
    throw FingerprintMismatch(msg);
}

int run_synth(const Options& o, std::ostream& out) {
    data::SyntheticParams params;
    params.image_size = o.size > 0 ? o.size : params.image_size;
    const auto images = data::generate_images({o.good, o.usable, o.reject}, o.seed, params);
    const data::Manifest manifest = data::write_dataset(o.out_dir, images);
    out << "wrote " << manifest.size() << " images and manifest.csv to " << o.out_dir << "\n";
    return kExitOk;
}

int run_preprocess(const Options& o, CLI::App* cmd, std::ostream& out) {
    imgproc::PreprocessConfig cfg;
    cfg.fov_enabled = !o.no_fov;
    if (cmd->count("--size")) cfg.target_size = o.size;
    const RawImage image = io::read_image(o.in);
    if (cfg.fov_enabled) {
        cfg.validate();
        const imgproc::FovCircle c = imgproc::detect_fov(image, cfg);
        out << "fov cx " << c.cx << " cy " << c.cy << " r " << c.r << "\n";
    }
    io::write_png(o.out, imgproc::preprocess(image, cfg));
    out << "wrote " << o.out << "\n";
    return kExitOk;
}

int run_priors(const Options& o, std::ostream& out) {
    if (o.radius < 0) throw InvalidConfig("--radius must be >= 0, got " + std::to_string(o.radius));
    const RawImage image = io::read_image(o.in);
    io::write_pgm(o.dark, priors::dark_channel(image, o.radius));
    io::write_pgm(o.bright, priors::bright_channel(image, o.radius));
    out << "wrote " << o.dark << " and " << o.bright << "\n";
    return kExitOk;
}

int run_train(const Options& o, CLI::App* cmd, std::ostream& out) {
    const train::TrainConfig cfg = build_train_config(o, cmd);
    const data::Manifest manifest = data::load_manifest(o.manifest);
    std::optional<data::Manifest> validation;
    if (!o.val.empty()) validation = data::load_manifest(o.val);
    const data::ImageSource source = train::preprocessed_source(data::directory_source(o.root), cfg.preprocess);
    const train::TrainResult result =
        train::train(cfg, manifest, source, validation ? &*validation : nullptr, &out);
    train::save_checkpoint(o.out, result.checkpoint);
    if (!o.log.empty()) write_text(o.log, train::log_csv(result.log));
    out << "wrote " << o.out << "\n";
    return kExitOk;
}

int run_eval(const Options& o, CLI::App* cmd, std::ostream& out) {
    const train::TrainConfig cfg = build_train_config(o, cmd);
    const train::Checkpoint ckpt = train::load_checkpoint(o.ckpt);
    const nnet::ModelConfig model = resolve_model(cfg, !o.config.empty() || !o.variant.empty(), ckpt, o.ckpt);
    if (ckpt.fingerprint != model.fingerprint()) train::load_checkpoint(o.ckpt, model);  // throws with context
    const data::Manifest manifest = data::load_manifest(o.manifest);
    const data::ImageSource source = train::preprocessed_source(data::directory_source(o.root), cfg.preprocess);
    const eval::MetricsReport report = train::evaluate_model(ckpt, model, manifest, source);
    write_text(o.report, eval::to_json(report));
    out << eval::to_text(report);
    return kExitOk;
}

int run_kfold(const Options& o, std::ostream& out) {
    const data::Manifest manifest = data::load_manifest(o.manifest);
    const auto folds = data::kfold_split(manifest, o.k, o.seed);
    for (std::size_t i = 0; i < folds.size(); ++i) {
        const std::string base = o.out_prefix + "fold" + std::to_string(i + 1);
        std::filesystem::path train_path = base + "_train.csv", val_path = base + "_val.csv";
        if (train_path.has_parent_path()) std::filesystem::create_directories(train_path.parent_path());
        data::save_manifest(train_path, folds[i].train);
        data::save_manifest(val_path, folds[i].validation);
        out << base << ": " << folds[i].train.size() << " train, " << folds[i].validation.size() << " validation\n";
    }
    return kExitOk;
}

int run_gradcam(const Options& o, CLI::App* cmd, std::ostream& out) {
    const train::TrainConfig cfg = build_train_config(o, cmd);
    const auto label = data::parse_label(o.klass);
    if (!label) throw InvalidConfig("--class must be good, usable or reject, got '" + o.klass + "'");
    const train::Checkpoint ckpt = train::load_checkpoint(o.ckpt);
    const nnet::ModelConfig model_cfg = resolve_model(cfg, !o.config.empty() || !o.variant.empty(), ckpt, o.ckpt);
    nnet::Model<float> model = train::restore_model(ckpt, model_cfg);
    const RawImage image = train::network_input(io::read_image(o.in), cfg.preprocess);
    io::write_pgm(o.out, eval::gradcam(model, image, data::index_of(*label)));
    out << "wrote " << o.out << "\n";
    return kExitOk;
}

int run_gradcheck(const Options& o, std::ostream& out) {
    std::vector<nnet::StemVariant> variants;
    if (o.variant.empty() || o.variant == "all") {
        variants = {nnet::StemVariant::Baseline, nnet::StemVariant::DarkOnly, nnet::StemVariant::BrightOnly,
                    nnet::StemVariant::DarkBright};
    } else {
        variants = {nnet::parse_stem_variant(o.variant)};
    }
    bool passed = true;
    for (nnet::StemVariant v : variants) {
        nnet::GradientCheckOptions opts;
        opts.max_entries_per_tensor = o.entries;
        if (o.fault) opts.fault = nnet::Fault::FlipLinearWeightGrad;
        const nnet::GradientCheckReport report = nnet::gradient_check(nnet::ModelConfig::for_variant(v), opts);
        out << "variant " << nnet::to_string(v) << "\n" << report.to_text();
        passed = passed && report.passed;
    }
    return passed ? kExitOk : kExitRuntime;
}

int run_bench(const Options& o, std::ostream& out) {
    const bench::ExtremumBench result = bench::run_extremum_bench(o.size > 0 ? o.size : 1024, o.radius, o.repeats);
    out << result.to_text();
    return result.identical ? kExitOk : kExitRuntime;
}

int run_ablate(const Options& o, CLI::App* cmd, std::ostream& out) {
    ablation::AblationConfig cfg = ablation::AblationConfig::defaults();
    cfg.seeds = o.seeds;
    cfg.threads = o.threads;
    if (cmd->count("--epochs")) {
        cfg.train.epochs = o.epochs;
        cfg.train.lr_decay_epoch = std::min(cfg.train.lr_decay_epoch, o.epochs);
    }
    const ablation::AblationResult result = ablation::run_ablation(cfg, &out);
    const std::filesystem::path dir = o.out_dir;
    write_text(dir / "ablation.md", result.table());
    write_text(dir / "ablation.json", result.to_json());
    out << result.table();
    out << "total " << result.seconds << " s; wrote " << (dir / "ablation.md").string() << " and "
        << (dir / "ablation.json").string() << "\n";
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Retinal image quality toolkit with dark/bright channel priors", "guidednet"};
    app.require_subcommand(1);
    app.footer(kSynopsis);
    Options o;

    auto* synth = app.add_subcommand("synth", "Generate a labelled synthetic fundus dataset");
    synth->add_option("--out", o.out_dir, "Output directory")->required();
    synth->add_option("--good", o.good, "Number of good images");
    synth->add_option("--usable", o.usable, "Number of usable images");
    synth->add_option("--reject", o.reject, "Number of reject images");
    synth->add_option("--seed", o.seed, "Random seed");
    synth->add_option("--size", o.size, "Image side in pixels (default 128)");

    auto* prep = app.add_subcommand("preprocess", "Detect the FoV, crop, pad and resize one image");
    prep->add_option("--in", o.in, "Input PNG/PPM")->required();
    prep->add_option("--out", o.out, "Output PNG")->required();
    prep->add_flag("--no-fov", o.no_fov, "Skip FoV detection; pad and resize the whole frame");
    prep->add_option("--size", o.size, "Output side in pixels (default 224)");

    auto* pri = app.add_subcommand("priors", "Write exact dark and bright channel maps");
    pri->add_option("--in", o.in, "Input PNG/PPM")->required();
    pri->add_option("--dark", o.dark, "Dark channel PGM")->required();
    pri->add_option("--bright", o.bright, "Bright channel PGM")->required();
    pri->add_option("--radius", o.radius, "Patch radius (default 7)");

    auto add_model_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", o.config, "Training config JSON");
        cmd->add_option("--size", o.size, "Network input side in pixels");
        cmd->add_flag("--no-fov", o.no_fov, "Skip FoV detection");
        cmd->add_option("--variant", o.variant, "Stem variant: baseline, dark_only, bright_only, dark_bright");
    };

    auto* tr = app.add_subcommand("train", "Train a model");
    tr->add_option("--manifest", o.manifest, "Training manifest")->required();
    tr->add_option("--root", o.root, "Directory the manifest paths are relative to")->required();
    tr->add_option("--out", o.out, "Checkpoint to write")->required();
    tr->add_option("--log", o.log, "Per-epoch CSV log");
    tr->add_option("--val", o.val, "Validation manifest (same root)");
    tr->add_option("--epochs", o.epochs, "Override epochs");
    tr->add_option("--batch-size", o.batch_size, "Override batch size");
    tr->add_option("--seed", o.seed, "Override seed");
    add_model_options(tr);

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("--manifest", o.manifest, "Manifest to evaluate")->required();
    ev->add_option("--root", o.root, "Directory the manifest paths are relative to")->required();
    ev->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
    ev->add_option("--report", o.report, "JSON report to write")->required();
    add_model_options(ev);

    auto* kf = app.add_subcommand("kfold", "Write stratified k-fold manifests");
    kf->add_option("--manifest", o.manifest, "Manifest to split")->required();
    kf->add_option("--k", o.k, "Number of folds")->required();
    kf->add_option("--seed", o.seed, "Shuffle seed")->required();
    kf->add_option("--out-prefix", o.out_prefix, "Prefix for <prefix>foldI_{train,val}.csv")->required();

    auto* gc = app.add_subcommand("gradcam", "Write a Grad-CAM heatmap");
    gc->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
    gc->add_option("--in", o.in, "Input image")->required();
    gc->add_option("--class", o.klass, "Target class: good, usable or reject")->required();
    gc->add_option("--out", o.out, "Heatmap PGM")->required();
    add_model_options(gc);

    auto* gk = app.add_subcommand("gradcheck", "Finite-difference check of every learnable tensor (64-bit)");
    gk->add_option("--variant", o.variant, "Stem variant or 'all'");
    gk->add_option("--entries", o.entries, "Entries probed per tensor, 0 for all (default 64)");
    gk->add_flag("--fault", o.fault, "Inject a sign flip into the linear weight gradient");

    auto* bn = app.add_subcommand("bench", "Time the sliding extremum against the naive loop");
    bn->add_option("--size", o.size, "Map side (default 1024)");
    bn->add_option("--radius", o.radius, "Window radius (default 7)");
    bn->add_option("--repeats", o.repeats, "Timing repeats (default 3)");

    auto* ab = app.add_subcommand("ablate", "Synthesize, train and evaluate every stem variant over seeds");
    ab->add_option("--out", o.out_dir, "Output directory")->required();
    ab->add_option("--seeds", o.seeds, "Comma-separated seeds (default 1,2,3,4,5)")->delimiter(',');
    ab->add_option("--epochs", o.epochs, "Override epochs");
    ab->add_option("--threads", o.threads, "Worker threads (default: all cores)");

    if (!args.empty() && !args[0].starts_with('-')) {
        const auto subs = app.get_subcommands([](const CLI::App*) { return true; });
        const bool known = std::any_of(subs.begin(), subs.end(), [&](const CLI::App* s) { return s->get_name() == args[0]; });
        if (!known) {
            err << "error: unknown command '" << args[0] << "'\n\n" << kSynopsis;
            return kExitUsage;
        }
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << kSynopsis;
        return kExitUsage;
    }

    try {
        if (*synth) return run_synth(o, out);
        if (*prep) return run_preprocess(o, prep, out);
        if (*pri) return run_priors(o, out);
        if (*tr) return run_train(o, tr, out);
        if (*ev) return run_eval(o, ev, out);
        if (*kf) return run_kfold(o, out);
        if (*gc) return run_gradcam(o, gc, out);
        if (*gk) return run_gradcheck(o, out);
        if (*bn) return run_bench(o, out);
        if (*ab) return run_ablate(o, ab, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    err << kSynopsis;
    return kExitUsage;
}

}  // namespace guidednet::cli
