#pragma once

#include "guidednet/imgproc.hpp"
#include "guidednet/raster.hpp"
#include "guidednet/rng.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace guidednet::data {

enum class QualityLabel : int { Good = 0, Usable = 1, Reject = 2 };

constexpr int kClassCount = 3;
constexpr std::array<QualityLabel, kClassCount> kAllLabels{QualityLabel::Good, QualityLabel::Usable,
                                                           QualityLabel::Reject};

std::string_view to_string(QualityLabel label);
/// Lowercase good | usable | reject.
std::optional<QualityLabel> parse_label(std::string_view text);
inline int index_of(QualityLabel label) { return static_cast<int>(label); }

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Degradations applied to one quality grade.
struct DegradationBand {
    Range illumination;  // additive field amplitude, fraction of the [0,1] range
    Range blur_sigma;    // pixels
    double noise_sigma = 0.0;
    double occlusion_probability = 0.0;
};

struct SyntheticParams {
    int image_size = 128;
    double fov_radius_frac = 0.45;  // of image_size
    double fov_center_x_frac = 0.5;
    double fov_center_y_frac = 0.5;
    int vessel_count = 8;
    Range vessel_width{0.8, 2.2};
    double disc_radius_frac = 0.12;  // of the FoV radius
    double disc_brightness = 0.35;
    Range exposure{0.7, 1.0};
    double vignetting = 0.10;
    std::array<DegradationBand, kClassCount> bands{{
        {{0.00, 0.05}, {0.0, 0.6}, 0.010, 0.0},  // good
        {{0.15, 0.35}, {0.3, 1.2}, 0.015, 0.0},  // usable
        {{0.45, 0.80}, {0.6, 1.8}, 0.020, 0.3},  // reject
    }};

    /// Throws InvalidConfig; illumination bands must be ordered and non-overlapping.
    void validate() const;
};

/// Renders a fundus-like image: reddish FoV disk on black, dark vessel curves and a
/// bright optic disc, then blur, an additive planar or radial illumination field with an
/// amplitude drawn from the grade's band, noise, and (reject only) occluding shadows.
/// Everything outside the FoV disk is exactly 0. Deterministic for a given rng state.
RawImage synth_fundus(QualityLabel label, Rng& rng, const SyntheticParams& params);

/// FoV circle the generator draws for these params.
imgproc::FovCircle synthetic_fov(const SyntheticParams& params);

struct Record {
    std::string path;
    QualityLabel label = QualityLabel::Good;

    friend bool operator==(const Record&, const Record&) = default;
};

/// Ordered (relative path, label) records; paths are unique.
using Manifest = std::vector<Record>;

/// Throws ParseError when a path repeats.
void validate_manifest(const Manifest& manifest);

/// One `relative/path.png,label` line per record, no header.
void write_manifest(std::ostream& out, const Manifest& manifest);
/// Throws ParseError with the 1-based line number. Blank lines are skipped.
Manifest parse_manifest(std::istream& in);

void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
/// Throws MissingFile or ParseError.
Manifest load_manifest(const std::filesystem::path& path);

std::array<std::size_t, kClassCount> class_counts(const Manifest& manifest);

struct Fold {
    Manifest train;
    Manifest validation;
};

/// Stratified k-fold: per class, a seeded shuffle dealt round-robin into k folds.
/// Records keep manifest order inside each split. Throws TooFewSamples naming any class with
/// between 1 and k-1 members; absent classes are skipped.
std::vector<Fold> kfold_split(const Manifest& manifest, int k, std::uint64_t seed);

/// Loads the image for a manifest path. Throws ImageLoadError naming the path.
using ImageSource = std::function<RawImage(const std::string& path)>;

/// Reads PNG/PPM files relative to root.
ImageSource directory_source(std::filesystem::path root);

/// Memoizes another source. Not thread-safe.
ImageSource cached_source(ImageSource inner);

struct Batch {
    std::vector<RawImage> images;
    std::vector<int> labels;
    std::vector<std::size_t> records;  // manifest indices
};

struct BatchOptions {
    int batch_size = 8;
    std::uint64_t seed = 0;
    bool augment = false;
    imgproc::AugmentFlags augment_flags;
};

/// Per epoch, a seeded permutation of the manifest cut into batches; the final partial
/// batch is kept. Augmentation draws from a stream keyed by (seed, epoch, position).
class BatchIterator {
public:
    BatchIterator(const Manifest& manifest, ImageSource source, BatchOptions options);

    /// Resets to the start of the given (0-based) epoch.
    void start_epoch(int epoch);
    /// Fills the next batch; returns false at the end of the epoch.
    bool next(Batch& batch);

    std::size_t batches_per_epoch() const;
    const std::vector<std::size_t>& order() const { return order_; }

private:
    const Manifest& manifest_;
    ImageSource source_;
    BatchOptions options_;
    int epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

/// Seeded Fisher-Yates permutation of [0, n).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

struct GenerateCounts {
    std::size_t good = 0;
    std::size_t usable = 0;
    std::size_t reject = 0;
};

struct GeneratedImage {
    Record record;
    RawImage image;  // already quantized to 8 bits, identical to what a PNG round trip yields
};

/// Renders `counts` images; image i of a grade uses the stream derive_seed(seed, grade, i).
/// Paths are `<prefix><grade>_<index>.png`.
std::vector<GeneratedImage> generate_images(const GenerateCounts& counts, std::uint64_t seed,
                                            const SyntheticParams& params, const std::string& prefix = "images/");

/// Writes the images as PNG under root and `root/manifest.csv`; returns the manifest.
Manifest write_dataset(const std::filesystem::path& root, const std::vector<GeneratedImage>& images);

}  // namespace guidednet::data
