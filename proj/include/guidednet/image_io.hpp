#pragma once

#include "guidednet/raster.hpp"

#include <filesystem>

namespace guidednet::io {

/// Reads an 8-bit PNG or binary PPM (P6), detected by signature. Byte v maps to v/255.
/// Grayscale, palette and 16-bit PNGs are expanded/stripped to 8-bit RGB.
/// Throws ImageLoadError naming the path.
RawImage read_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG; values are clamped to [0,1] and stored as round(255 v).
void write_png(const std::filesystem::path& path, const RawImage& image);

/// Writes channel 0 of a map as binary PGM (P5), value round(255 v) after clamping.
void write_pgm(const std::filesystem::path& path, const Raster<float>& map);

/// Reads a binary PGM (P5) with maxval 255 into a single-channel map of v/255.
Raster<float> read_pgm(const std::filesystem::path& path);

/// round(255 v) after clamping to [0,1].
unsigned char to_byte(float v);

/// Snaps every value to the nearest 8-bit level, matching a PNG round trip.
void quantize_8bit(RawImage& image);

}  // namespace guidednet::io
