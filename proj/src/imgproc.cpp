#include "guidednet/imgproc.hpp"

#include "guidednet/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace guidednet::imgproc {

namespace {

constexpr double kMinEdgeMagnitude = 1e-6;
constexpr double kRefineBand = 3.0;  // working-resolution pixels either side of the Hough circle
constexpr int kRefineIterations = 2;

struct Gray {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

Gray luminance(const RawImage& image) {
    Gray g{image.height, image.width, std::vector<double>(image.plane_size())};
    const auto r = image.plane(0), gr = image.plane(1), b = image.plane(2);
    for (std::size_t i = 0; i < g.values.size(); ++i) {
        g.values[i] = 0.299 * r[i] + 0.587 * gr[i] + 0.114 * b[i];
    }
    return g;
}

// Block-average by an integer factor so the longest side fits the cap.
Gray downsample(const Gray& in, int factor) {
    if (factor <= 1) return in;
    Gray out{(in.height + factor - 1) / factor, (in.width + factor - 1) / factor, {}};
    out.values.assign(static_cast<std::size_t>(out.height) * out.width, 0.0);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            double sum = 0.0;
            int count = 0;
            for (int dy = 0; dy < factor && y * factor + dy < in.height; ++dy) {
                for (int dx = 0; dx < factor && x * factor + dx < in.width; ++dx) {
                    sum += in.at(y * factor + dy, x * factor + dx);
                    ++count;
                }
            }
            out.values[static_cast<std::size_t>(y) * out.width + x] = sum / count;
        }
    }
    return out;
}

struct EdgePixel {
    int x = 0;
    int y = 0;
    double gx = 0.0;
    double gy = 0.0;
    double magnitude = 0.0;
};

std::vector<EdgePixel> sobel_edges(const Gray& g, double percentile) {
    const int h = g.height, w = g.width;
    auto px = [&](int y, int x) { return g.at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); };
    std::vector<EdgePixel> all;
    all.reserve(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
            const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
            all.push_back({x, y, gx, gy, std::hypot(gx, gy)});
        }
    }
    std::vector<double> mags(all.size());
    std::transform(all.begin(), all.end(), mags.begin(), [](const EdgePixel& e) { return e.magnitude; });
    const auto idx = static_cast<std::size_t>(percentile * static_cast<double>(mags.size() - 1));
    std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(idx), mags.end());
    const double threshold = std::max(mags[idx], kMinEdgeMagnitude);

    std::vector<EdgePixel> edges;
    for (const EdgePixel& e : all) {
        if (e.magnitude > threshold) edges.push_back(e);
    }
    return edges;
}

struct HoughPeak {
    double cx = 0.0;
    double cy = 0.0;
    int r = 0;
    double votes = 0.0;
};

HoughPeak hough_vote(const std::vector<EdgePixel>& edges, int height, int width, const HoughParams& hp) {
    const int side = std::min(height, width);
    const int r_lo = std::max(1, static_cast<int>(std::floor(hp.min_radius_frac * side)));
    const int r_hi = std::max(r_lo, static_cast<int>(std::ceil(hp.max_radius_frac * side)));
    const int x_lo = static_cast<int>(std::floor(hp.center_margin_frac * width));
    const int x_hi = static_cast<int>(std::ceil((1.0 - hp.center_margin_frac) * width));
    const int y_lo = static_cast<int>(std::floor(hp.center_margin_frac * height));
    const int y_hi = static_cast<int>(std::ceil((1.0 - hp.center_margin_frac) * height));
    const int acc_w = x_hi - x_lo + 1;
    const int acc_h = y_hi - y_lo + 1;
    const std::size_t plane = static_cast<std::size_t>(acc_w) * acc_h;

    std::vector<int> acc(plane);
    std::vector<int> smoothed(plane);
    HoughPeak best;
    for (int r = r_lo; r <= r_hi; ++r) {
        std::fill(acc.begin(), acc.end(), 0);
        for (const EdgePixel& e : edges) {
            const double ux = e.gx / e.magnitude;
            const double uy = e.gy / e.magnitude;
            for (int sign : {1, -1}) {
                const int cx = static_cast<int>(std::lround(e.x + sign * r * ux));
                const int cy = static_cast<int>(std::lround(e.y + sign * r * uy));
                if (cx < x_lo || cx > x_hi || cy < y_lo || cy > y_hi) continue;
                ++acc[static_cast<std::size_t>(cy - y_lo) * acc_w + (cx - x_lo)];
            }
        }
        // 3x3 box sum absorbs the scatter from a finite-width edge band.
        for (int y = 0; y < acc_h; ++y) {
            for (int x = 0; x < acc_w; ++x) {
                int sum = 0;
                for (int dy = -1; dy <= 1; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= acc_h) continue;
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int xx = x + dx;
                        if (xx < 0 || xx >= acc_w) continue;
                        sum += acc[static_cast<std::size_t>(yy) * acc_w + xx];
                    }
                }
                smoothed[static_cast<std::size_t>(y) * acc_w + x] = sum;
            }
        }
        for (int y = 0; y < acc_h; ++y) {
            for (int x = 0; x < acc_w; ++x) {
                const int v = smoothed[static_cast<std::size_t>(y) * acc_w + x];
                if (v > best.votes) best = {static_cast<double>(x + x_lo), static_cast<double>(y + y_lo), r, double(v)};
            }
        }
    }
    return best;
}

// Magnitude-weighted algebraic (Kasa) circle fit: x^2 + y^2 + D x + E y + F = 0.
bool fit_circle(const std::vector<EdgePixel>& edges, FovCircle& circle) {
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Vector3d atb = Eigen::Vector3d::Zero();
    int used = 0;
    for (const EdgePixel& e : edges) {
        const double dist = std::hypot(e.x - circle.cx, e.y - circle.cy);
        if (std::abs(dist - circle.r) > kRefineBand) continue;
        const Eigen::Vector3d row(e.x, e.y, 1.0);
        const double rhs = -(double(e.x) * e.x + double(e.y) * e.y);
        ata += e.magnitude * row * row.transpose();
        atb += e.magnitude * rhs * row;
        ++used;
    }
    if (used < 8) return false;
    const Eigen::Vector3d sol = ata.ldlt().solve(atb);
    const double cx = -sol[0] / 2.0;
    const double cy = -sol[1] / 2.0;
    const double r2 = cx * cx + cy * cy - sol[2];
    if (!std::isfinite(r2) || r2 <= 0.0) return false;
    const double r = std::sqrt(r2);
    if (std::hypot(cx - circle.cx, cy - circle.cy) > kRefineBand || std::abs(r - circle.r) > kRefineBand) {
        return false;
    }
    circle = {cx, cy, r};
    return true;
}

float sample_zero(const RawImage& image, int c, double yf, double xf) {
    const int x0 = static_cast<int>(std::floor(xf));
    const int y0 = static_cast<int>(std::floor(yf));
    const double fx = xf - x0;
    const double fy = yf - y0;
    auto px = [&](int y, int x) -> double {
        if (y < 0 || y >= image.height || x < 0 || x >= image.width) return 0.0;
        return image.at(c, y, x);
    };
    const double top = (1.0 - fx) * px(y0, x0) + fx * px(y0, x0 + 1);
    const double bottom = (1.0 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1);
    return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

}  // namespace

void PreprocessConfig::validate() const {
    if (target_size < 32 || target_size % 2 != 0) {
        throw InvalidConfig("target_size must be even and >= 32, got " + std::to_string(target_size));
    }
    const HoughParams& h = hough;
    if (!(h.min_radius_frac > 0.0) || !(h.max_radius_frac <= 0.75) || h.min_radius_frac > h.max_radius_frac) {
        throw InvalidConfig("Hough radius range must lie within (0, 0.75]");
    }
    if (!(h.edge_percentile > 0.0 && h.edge_percentile < 1.0)) {
        throw InvalidConfig("edge percentile must lie in (0, 1)");
    }
    if (!(h.center_margin_frac >= 0.0 && h.center_margin_frac < 0.5)) {
        throw InvalidConfig("centre margin must lie in [0, 0.5)");
    }
    if (h.accumulator_cap < 16) throw InvalidConfig("accumulator cap must be >= 16");
}

void validate_raw_image(const RawImage& image) {
    if (image.channels != 3) {
        throw InvalidImage("expected 3 channels, got " + std::to_string(image.channels));
    }
    if (image.height < 8 || image.width < 8) {
        throw InvalidImage("image must be at least 8x8, got " + std::to_string(image.height) + "x" +
                           std::to_string(image.width));
    }
    for (float v : image.values) {
        if (!(v >= 0.0f && v <= 1.0f)) throw InvalidImage("intensity outside [0,1]");
    }
}

FovCircle detect_fov(const RawImage& image, const PreprocessConfig& cfg) {
    validate_raw_image(image);
    cfg.validate();
    const HoughParams& hp = cfg.hough;

    const int longest = std::max(image.height, image.width);
    const int factor = (longest + hp.accumulator_cap - 1) / hp.accumulator_cap;
    const Gray work = downsample(luminance(image), factor);
    const std::vector<EdgePixel> edges = sobel_edges(work, hp.edge_percentile);
    if (edges.empty()) throw NoFovFound("no edges found; blank or non-fundus image");

    const HoughPeak peak = hough_vote(edges, work.height, work.width, hp);
    const double required = hp.min_vote_fraction * 2.0 * std::numbers::pi * std::max(peak.r, 1);
    if (peak.r == 0 || peak.votes < required) {
        throw NoFovFound("peak Hough vote " + std::to_string(peak.votes) + " below " + std::to_string(required));
    }

    FovCircle circle{peak.cx, peak.cy, static_cast<double>(peak.r)};
    for (int i = 0; i < kRefineIterations; ++i) {
        if (!fit_circle(edges, circle)) break;
    }
    // Working pixel centres map back to input pixel centres.
    const double f = factor;
    return {(circle.cx + 0.5) * f - 0.5, (circle.cy + 0.5) * f - 0.5, circle.r * f};
}

RawImage pad_to_square(const RawImage& image) {
    const int side = std::max(image.height, image.width);
    const int top = (side - image.height) / 2;
    const int left = (side - image.width) / 2;
    RawImage out(image.channels, side, side, 0.0f);
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < image.height; ++y) {
            const auto src = image.plane(c).subspan(static_cast<std::size_t>(y) * image.width, image.width);
            std::copy(src.begin(), src.end(), &out.at(c, y + top, left));
        }
    }
    return out;
}

RawImage resize_bilinear(const RawImage& image, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw InvalidConfig("resize target must be positive");
    if (out_h == image.height && out_w == image.width) return image;
    RawImage out(image.channels, out_h, out_w);
    const double sy = static_cast<double>(image.height) / out_h;
    const double sx = static_cast<double>(image.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < image.channels; ++c) {
                const double top = (1.0 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1);
                const double bottom = (1.0 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1);
                out.at(c, y, x) = static_cast<float>((1.0 - wy) * top + wy * bottom);
            }
        }
    }
    return out;
}

RawImage crop_pad_resize(const RawImage& image, const FovCircle& circle, const PreprocessConfig& cfg) {
    cfg.validate();
    const int x0 = std::max(0, static_cast<int>(std::floor(circle.cx - circle.r + 0.5)));
    const int x1 = std::min(image.width, static_cast<int>(std::floor(circle.cx + circle.r + 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(circle.cy - circle.r + 0.5)));
    const int y1 = std::min(image.height, static_cast<int>(std::floor(circle.cy + circle.r + 0.5)));
    if (x1 <= x0 || y1 <= y0) throw EmptyCrop("FoV bounding box has zero area inside the frame");

    RawImage crop(image.channels, y1 - y0, x1 - x0);
    for (int c = 0; c < image.channels; ++c) {
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) crop.at(c, y - y0, x - x0) = image.at(c, y, x);
        }
    }
    return resize_bilinear(pad_to_square(crop), cfg.target_size, cfg.target_size);
}

RawImage preprocess(const RawImage& image, const PreprocessConfig& cfg) {
    validate_raw_image(image);
    cfg.validate();
    if (!cfg.fov_enabled) return resize_bilinear(pad_to_square(image), cfg.target_size, cfg.target_size);
    return crop_pad_resize(image, detect_fov(image, cfg), cfg);
}

AugmentPlan draw_augment_plan(Rng& rng, const AugmentFlags& flags) {
    const bool h = rng.coin(0.5);
    const bool v = rng.coin(0.5);
    const double angle = rng.uniform(0.0, 360.0);
    return {flags.hflip && h, flags.vflip && v, flags.rotate ? angle : 0.0};
}

RawImage flip_horizontal(const RawImage& image) {
    RawImage out = image;
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
        }
    }
    return out;
}

RawImage flip_vertical(const RawImage& image) {
    RawImage out = image;
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, image.height - 1 - y, x);
        }
    }
    return out;
}

RawImage rotate(const RawImage& image, double angle_deg) {
    if (angle_deg == 0.0) return image;
    const double theta = angle_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(theta);
    const double sn = std::sin(theta);
    const double cx = (image.width - 1) / 2.0;
    const double cy = (image.height - 1) / 2.0;
    RawImage out(image.channels, image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            // Inverse map: destination offset rotated by -theta.
            const double dx = x - cx;
            const double dy = y - cy;
            const double sx = cx + cs * dx + sn * dy;
            const double sy = cy - sn * dx + cs * dy;
            for (int c = 0; c < image.channels; ++c) out.at(c, y, x) = sample_zero(image, c, sy, sx);
        }
    }
    for (float& v : out.values) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

RawImage apply_augment(const RawImage& image, const AugmentPlan& plan) {
    RawImage out = plan.hflip ? flip_horizontal(image) : image;
    if (plan.vflip) out = flip_vertical(out);
    return rotate(out, plan.angle_deg);
}

RawImage augment(const RawImage& image, Rng& rng, const AugmentFlags& flags) {
    return apply_augment(image, draw_augment_plan(rng, flags));
}

}  // namespace guidednet::imgproc
