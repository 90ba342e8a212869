#include "guidednet/data.hpp"

#include "guidednet/errors.hpp"
#include "guidednet/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>

namespace guidednet::data {

namespace {

constexpr int kSupersample = 4;

// Separable Gaussian blur with edge replication, in place.
void gaussian_blur(std::vector<double>& plane, int h, int w, double sigma) {
    if (sigma < 0.05) return;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) total += taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& t : taps) t /= total;

    std::vector<double> tmp(plane.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += taps[i + radius] * plane[y * w + std::clamp(x + i, 0, w - 1)];
            tmp[y * w + x] = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += taps[i + radius] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
            plane[y * w + x] = acc;
        }
    }
}

// Fraction of each pixel's area inside the circle, by supersampling.
std::vector<double> coverage_mask(int size, const imgproc::FovCircle& fov) {
    std::vector<double> mask(static_cast<std::size_t>(size) * size, 0.0);
    const double r2 = fov.r * fov.r;
    const double reach = fov.r + 1.0;
    for (int y = 0; y < size; ++y) {
        if (std::abs(y - fov.cy) > reach) continue;
        for (int x = 0; x < size; ++x) {
            const double dx = x - fov.cx, dy = y - fov.cy;
            const double d2 = dx * dx + dy * dy;
            if (d2 > reach * reach) continue;
            if (std::sqrt(d2) < fov.r - 1.0) {
                mask[y * size + x] = 1.0;
                continue;
            }
            int inside = 0;
            for (int sy = 0; sy < kSupersample; ++sy) {
                for (int sx = 0; sx < kSupersample; ++sx) {
                    const double px = dx + (sx + 0.5) / kSupersample - 0.5;
                    const double py = dy + (sy + 0.5) / kSupersample - 0.5;
                    inside += (px * px + py * py <= r2) ? 1 : 0;
                }
            }
            mask[y * size + x] = static_cast<double>(inside) / (kSupersample * kSupersample);
        }
    }
    return mask;
}

// Max-combined vessel darkness in [0,1] from random-walk curves leaving the disc.
std::vector<double> vessel_map(int size, double start_x, double start_y, const imgproc::FovCircle& fov,
                               const SyntheticParams& p, Rng& rng) {
    std::vector<double> dark(static_cast<std::size_t>(size) * size, 0.0);
    for (int v = 0; v < p.vessel_count; ++v) {
        double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double width = rng.uniform(p.vessel_width.lo, p.vessel_width.hi);
        const double half = 0.5 * width;
        const double curvature = rng.uniform(-0.04, 0.04);
        const double length = rng.uniform(0.8, 1.5) * fov.r;
        double x = start_x, y = start_y;
        const int reach = static_cast<int>(std::ceil(3.0 * half + 1.0));
        for (double travelled = 0.0; travelled < length; travelled += 1.0) {
            angle += curvature + 0.08 * rng.normal();
            x += std::cos(angle);
            y += std::sin(angle);
            const int cx = static_cast<int>(std::lround(x)), cy = static_cast<int>(std::lround(y));
            for (int yy = cy - reach; yy <= cy + reach; ++yy) {
                if (yy < 0 || yy >= size) continue;
                for (int xx = cx - reach; xx <= cx + reach; ++xx) {
                    if (xx < 0 || xx >= size) continue;
                    const double d2 = (xx - x) * (xx - x) + (yy - y) * (yy - y);
                    const double profile = std::exp(-0.5 * d2 / (half * half));
                    double& cell = dark[yy * size + xx];
                    cell = std::max(cell, profile);
                }
            }
        }
    }
    return dark;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view to_string(QualityLabel label) {
    switch (label) {
        case QualityLabel::Good: return "good";
        case QualityLabel::Usable: return "usable";
        case QualityLabel::Reject: return "reject";
    }
    return "unknown";
}

std::optional<QualityLabel> parse_label(std::string_view text) {
    if (text == "good") return QualityLabel::Good;
    if (text == "usable") return QualityLabel::Usable;
    if (text == "reject") return QualityLabel::Reject;
    return std::nullopt;
}

void SyntheticParams::validate() const {
    if (image_size < 16) throw InvalidConfig("synthetic image_size must be >= 16");
    if (!(fov_radius_frac > 0.0 && fov_radius_frac <= 0.5)) throw InvalidConfig("fov_radius_frac must be in (0, 0.5]");
    for (std::size_t i = 0; i < bands.size(); ++i) {
        const DegradationBand& b = bands[i];
        if (b.illumination.lo < 0.0 || b.illumination.hi < b.illumination.lo || b.illumination.hi > 1.0) {
            throw InvalidConfig("illumination band must satisfy 0 <= lo <= hi <= 1");
        }
        if (i > 0 && !(bands[i - 1].illumination.hi < b.illumination.lo)) {
            throw InvalidConfig("illumination bands must be increasing and non-overlapping");
        }
        if (b.blur_sigma.lo < 0.0 || b.blur_sigma.hi < b.blur_sigma.lo) throw InvalidConfig("bad blur range");
        if (b.noise_sigma < 0.0) throw InvalidConfig("noise sigma must be >= 0");
        if (b.occlusion_probability < 0.0 || b.occlusion_probability > 1.0) {
            throw InvalidConfig("occlusion probability must be in [0, 1]");
        }
    }
}

imgproc::FovCircle synthetic_fov(const SyntheticParams& p) {
    return {p.fov_center_x_frac * p.image_size, p.fov_center_y_frac * p.image_size, p.fov_radius_frac * p.image_size};
}

RawImage synth_fundus(QualityLabel label, Rng& rng, const SyntheticParams& p) {
    p.validate();
    const int s = p.image_size;
    const std::size_t n = static_cast<std::size_t>(s) * s;
    const imgproc::FovCircle fov = synthetic_fov(p);
    const DegradationBand& band = p.bands[index_of(label)];

    // Retina colour with a mild natural fall-off towards the rim.
    const double exposure = rng.uniform(p.exposure.lo, p.exposure.hi);
    const std::array<double, 3> base{exposure * rng.uniform(0.75, 0.85), exposure * rng.uniform(0.36, 0.46),
                                     exposure * rng.uniform(0.12, 0.20)};
    std::array<std::vector<double>, 3> planes;
    for (auto& pl : planes) pl.assign(n, 0.0);
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            const double d = std::hypot(x - fov.cx, y - fov.cy) / fov.r;
            const double shade = 1.0 - p.vignetting * d * d;
            for (int c = 0; c < 3; ++c) planes[c][y * s + x] = base[c] * shade;
        }
    }

    // Optic disc.
    const double disc_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double disc_dist = rng.uniform(0.30, 0.45) * fov.r;
    const double disc_x = fov.cx + disc_dist * std::cos(disc_angle);
    const double disc_y = fov.cy + disc_dist * std::sin(disc_angle);
    const double disc_r = p.disc_radius_frac * fov.r;
    const std::array<double, 3> disc_tint{1.0, 0.85, 0.6};
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            const double d2 = ((x - disc_x) * (x - disc_x) + (y - disc_y) * (y - disc_y)) / (disc_r * disc_r);
            const double blob = std::exp(-0.5 * d2 * d2);
            for (int c = 0; c < 3; ++c) planes[c][y * s + x] += p.disc_brightness * disc_tint[c] * blob;
        }
    }

    const std::vector<double> vessels = vessel_map(s, disc_x, disc_y, fov, p, rng);
    const std::array<double, 3> vessel_depth{0.45, 0.6, 0.5};
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) planes[c][i] *= 1.0 - vessel_depth[c] * vessels[i];
    }

    const double blur = rng.uniform(band.blur_sigma.lo, band.blur_sigma.hi);
    for (auto& pl : planes) gaussian_blur(pl, s, s, blur);

    // Uneven illumination: planar ramp or radial hot/cold spot, amplitude from the grade's band.
    // Brightening adds light; darkening scales it down, so the rim never fades to black.
    const double amplitude = rng.uniform(band.illumination.lo, band.illumination.hi);
    const bool planar = rng.coin(0.5);
    const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double sign = rng.coin(0.5) ? 1.0 : -1.0;
    const double ux = std::cos(dir), uy = std::sin(dir);
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            const double rx = (x - fov.cx) / fov.r, ry = (y - fov.cy) / fov.r;
            const double t = planar ? std::clamp(ux * rx + uy * ry, -1.0, 1.0)
                                    : sign * (1.0 - 2.0 * std::min(1.0, rx * rx + ry * ry));
            for (auto& pl : planes) {
                double& v = pl[y * s + x];
                v = t >= 0.0 ? v + amplitude * t : v * (1.0 + amplitude * t);
            }
        }
    }

    // Shadows from lashes or lid (reject only).
    if (rng.coin(band.occlusion_probability)) {
        const int count = 1 + static_cast<int>(rng.below(3));
        for (int k = 0; k < count; ++k) {
            const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double dist = rng.uniform(0.2, 0.8) * fov.r;
            const double ox = fov.cx + dist * std::cos(a), oy = fov.cy + dist * std::sin(a);
            const double rad = rng.uniform(0.15, 0.35) * fov.r;
            const double depth = rng.uniform(0.5, 0.85);
            for (int y = 0; y < s; ++y) {
                for (int x = 0; x < s; ++x) {
                    const double d2 = ((x - ox) * (x - ox) + (y - oy) * (y - oy)) / (rad * rad);
                    const double shadow = depth * std::exp(-0.5 * d2);
                    for (auto& pl : planes) pl[y * s + x] *= 1.0 - shadow;
                }
            }
        }
    }

    const std::vector<double> mask = coverage_mask(s, fov);
    RawImage image(3, s, s, 0.0f);
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            if (mask[i] == 0.0) {
                rng.normal();  // keep the stream position independent of the mask
                continue;
            }
            const double v = planes[c][i] + band.noise_sigma * rng.normal();
            image.values[c * n + i] = static_cast<float>(std::clamp(v, 0.0, 1.0) * mask[i]);
        }
    }
    return image;
}

void validate_manifest(const Manifest& manifest) {
    std::set<std::string_view> seen;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        if (manifest[i].path.empty()) throw ParseError(i + 1, "empty path");
        if (!seen.insert(manifest[i].path).second) throw ParseError(i + 1, "duplicate path '" + manifest[i].path + "'");
    }
}

void write_manifest(std::ostream& out, const Manifest& manifest) {
    validate_manifest(manifest);
    for (const Record& r : manifest) out << r.path << ',' << to_string(r.label) << '\n';
}

Manifest parse_manifest(std::istream& in) {
    Manifest manifest;
    std::set<std::string> seen;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string text = trim(line);
        if (text.empty()) continue;
        const auto comma = text.rfind(',');
        if (comma == std::string::npos) throw ParseError(number, "expected 'path,label', got '" + text + "'");
        const std::string path = trim(std::string_view(text).substr(0, comma));
        const std::string label_text = trim(std::string_view(text).substr(comma + 1));
        if (path.empty()) throw ParseError(number, "empty path");
        const auto label = parse_label(label_text);
        if (!label) throw ParseError(number, "invalid label '" + label_text + "' (expected good, usable or reject)");
        if (!seen.insert(path).second) throw ParseError(number, "duplicate path '" + path + "'");
        manifest.push_back({path, *label});
    }
    return manifest;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFile("cannot open manifest for writing: " + path.string());
    write_manifest(out, manifest);
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("manifest not found: " + path.string());
    try {
        return parse_manifest(in);
    } catch (const ParseError& e) {
        throw ParseError(e.line(), path.string() + ": " + std::string(e.what()).substr(std::string(e.what()).find(": ") + 2));
    }
}

std::array<std::size_t, kClassCount> class_counts(const Manifest& manifest) {
    std::array<std::size_t, kClassCount> counts{};
    for (const Record& r : manifest) ++counts[index_of(r.label)];
    return counts;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

std::vector<Fold> kfold_split(const Manifest& manifest, int k, std::uint64_t seed) {
    if (k < 2) throw InvalidConfig("k must be >= 2, got " + std::to_string(k));
    validate_manifest(manifest);
    std::vector<int> fold_of(manifest.size(), 0);
    for (QualityLabel label : kAllLabels) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < manifest.size(); ++i) {
            if (manifest[i].label == label) members.push_back(i);
        }
        if (members.empty()) continue;
        if (members.size() < static_cast<std::size_t>(k)) {
            throw TooFewSamples("class '" + std::string(to_string(label)) + "' has " + std::to_string(members.size()) +
                                " samples, fewer than k=" + std::to_string(k));
        }
        const auto order = seeded_permutation(members.size(), derive_seed(seed, index_of(label)));
        for (std::size_t j = 0; j < order.size(); ++j) fold_of[members[order[j]]] = static_cast<int>(j % k);
    }
    std::vector<Fold> folds(k);
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        for (int f = 0; f < k; ++f) (f == fold_of[i] ? folds[f].validation : folds[f].train).push_back(manifest[i]);
    }
    return folds;
}

ImageSource directory_source(std::filesystem::path root) {
    return [root = std::move(root)](const std::string& path) {
        const std::filesystem::path full = root / path;
        try {
            return io::read_image(full);
        } catch (const ImageLoadError&) {
            throw;
        } catch (const std::exception& e) {
            throw ImageLoadError("failed to load " + full.string() + ": " + e.what());
        }
    };
}

ImageSource cached_source(ImageSource inner) {
    auto cache = std::make_shared<std::map<std::string, RawImage>>();
    return [cache, inner = std::move(inner)](const std::string& path) {
        auto it = cache->find(path);
        if (it == cache->end()) it = cache->emplace(path, inner(path)).first;
        return it->second;
    };
}

BatchIterator::BatchIterator(const Manifest& manifest, ImageSource source, BatchOptions options)
    : manifest_(manifest), source_(std::move(source)), options_(options) {
    if (options_.batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
    start_epoch(0);
}

void BatchIterator::start_epoch(int epoch) {
    epoch_ = epoch;
    cursor_ = 0;
    order_ = seeded_permutation(manifest_.size(), derive_seed(options_.seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
}

bool BatchIterator::next(Batch& batch) {
    batch.images.clear();
    batch.labels.clear();
    batch.records.clear();
    if (cursor_ >= order_.size()) return false;
    const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(options_.batch_size));
    for (; cursor_ < end; ++cursor_) {
        const std::size_t idx = order_[cursor_];
        const Record& rec = manifest_[idx];
        RawImage image = source_(rec.path);
        if (options_.augment) {
            Rng rng(derive_seed(options_.seed, static_cast<std::uint64_t>(epoch_) + 1, cursor_));
            image = imgproc::augment(image, rng, options_.augment_flags);
        }
        batch.images.push_back(std::move(image));
        batch.labels.push_back(index_of(rec.label));
        batch.records.push_back(idx);
    }
    return true;
}

std::size_t BatchIterator::batches_per_epoch() const {
    const auto b = static_cast<std::size_t>(options_.batch_size);
    return (manifest_.size() + b - 1) / b;
}

std::vector<GeneratedImage> generate_images(const GenerateCounts& counts, std::uint64_t seed,
                                            const SyntheticParams& params, const std::string& prefix) {
    params.validate();
    std::vector<GeneratedImage> out;
    const std::array<std::size_t, kClassCount> per{counts.good, counts.usable, counts.reject};
    for (QualityLabel label : kAllLabels) {
        for (std::size_t i = 0; i < per[index_of(label)]; ++i) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index_of(label)) + 1, i));
            RawImage image = synth_fundus(label, rng, params);
            io::quantize_8bit(image);
            char name[64];
            std::snprintf(name, sizeof name, "%s_%05zu.png", std::string(to_string(label)).c_str(), i);
            out.push_back({{prefix + name, label}, std::move(image)});
        }
    }
    return out;
}

Manifest write_dataset(const std::filesystem::path& root, const std::vector<GeneratedImage>& images) {
    Manifest manifest;
    for (const GeneratedImage& g : images) {
        const std::filesystem::path full = root / g.record.path;
        std::filesystem::create_directories(full.parent_path());
        io::write_png(full, g.image);
        manifest.push_back(g.record);
    }
    save_manifest(root / "manifest.csv", manifest);
    return manifest;
}

}  // namespace guidednet::data
