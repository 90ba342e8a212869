#pragma once

#include "guidednet/raster.hpp"
#include "guidednet/rng.hpp"

namespace guidednet::imgproc {

/// Field-of-view circle in pixel coordinates (pixel centres sit on integers).
struct FovCircle {
    double cx = 0.0;  // column
    double cy = 0.0;  // row
    double r = 0.0;
};

struct HoughParams {
    double edge_percentile = 0.95;
    double min_radius_frac = 0.35;  // of min(H, W)
    double max_radius_frac = 0.60;
    double center_margin_frac = 0.20;  // centres searched in the middle 60% of each axis
    int accumulator_cap = 256;         // longest working-resolution side
    double min_vote_fraction = 0.25;   // of 2*pi*r at the working resolution
};

struct PreprocessConfig {
    int target_size = 224;
    bool fov_enabled = true;
    HoughParams hough;

    void validate() const;
};

/// Throws InvalidImage unless the image has 3 channels, sides >= 8 and values in [0,1].
void validate_raw_image(const RawImage& image);

/// Gradient-based circular Hough transform on the thresholded Sobel magnitude of the
/// luminance, at a working resolution no larger than the accumulator cap. The winning
/// circle is refined by a magnitude-weighted least-squares fit to the edge pixels in a
/// thin band around it, then mapped back to input coordinates.
/// Throws NoFovFound when the peak vote count is under the configured fraction of 2*pi*r.
FovCircle detect_fov(const RawImage& image, const PreprocessConfig& cfg);

/// Zero-pads the shorter side symmetrically (extra row/column goes bottom/right).
RawImage pad_to_square(const RawImage& image);

/// Bilinear resampling with half-pixel centre alignment and edge clamping.
RawImage resize_bilinear(const RawImage& image, int out_h, int out_w);

/// Crop to the circle's bounding square clipped to the frame, pad to square, resize to
/// target_size x target_size. Throws EmptyCrop for a zero-area clipped box.
RawImage crop_pad_resize(const RawImage& image, const FovCircle& circle, const PreprocessConfig& cfg);

/// Full preprocessing: FoV detection (when enabled) then crop/pad/resize.
/// With FoV disabled the whole frame is padded and resized.
RawImage preprocess(const RawImage& image, const PreprocessConfig& cfg);

struct AugmentFlags {
    bool hflip = true;
    bool vflip = true;
    bool rotate = true;
};

struct AugmentPlan {
    bool hflip = false;
    bool vflip = false;
    double angle_deg = 0.0;
};

/// Draws a coin for each flip and an angle in [0, 360); disabled flags zero the result.
/// Always consumes the same amount of randomness, whatever the flags.
AugmentPlan draw_augment_plan(Rng& rng, const AugmentFlags& flags);

/// Flips first, then rotation about the image centre (bilinear, zero fill).
RawImage apply_augment(const RawImage& image, const AugmentPlan& plan);

RawImage augment(const RawImage& image, Rng& rng, const AugmentFlags& flags);

RawImage flip_horizontal(const RawImage& image);
RawImage flip_vertical(const RawImage& image);
RawImage rotate(const RawImage& image, double angle_deg);

}  // namespace guidednet::imgproc
