#include "guidednet/image_io.hpp"

#include "guidednet/errors.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cctype>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace guidednet::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

RawImage from_interleaved(const std::vector<unsigned char>& bytes, int height, int width) {
    RawImage image(3, height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t base = (static_cast<std::size_t>(y) * width + x) * 3;
            for (int c = 0; c < 3; ++c) image.at(c, y, x) = static_cast<float>(bytes[base + c]) / 255.0f;
        }
    }
    return image;
}

RawImage read_png_file(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ImageLoadError("cannot open image: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageLoadError("libpng init failed for: " + path.string());
    }

    std::vector<unsigned char> pixels;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0, height = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageLoadError("corrupt PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(width) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageLoadError("unsupported PNG layout: " + path.string());
    }
    pixels.resize(static_cast<std::size_t>(width) * height * 3);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    return from_interleaved(pixels, static_cast<int>(height), static_cast<int>(width));
}

// Reads the next whitespace-separated header token, skipping '#' comments.
bool next_pnm_token(std::istream& in, std::string& token) {
    token.clear();
    char ch = 0;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string ignored;
            std::getline(in, ignored);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!token.empty()) return true;
            continue;
        }
        token.push_back(ch);
    }
    return !token.empty();
}

struct PnmHeader {
    int width = 0;
    int height = 0;
    int maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const std::string& magic, const std::filesystem::path& path) {
    std::string token;
    if (!next_pnm_token(in, token) || token != magic) throw ImageLoadError("not a " + magic + " file: " + path.string());
    PnmHeader h;
    try {
        if (!next_pnm_token(in, token)) throw ImageLoadError("truncated header: " + path.string());
        h.width = std::stoi(token);
        if (!next_pnm_token(in, token)) throw ImageLoadError("truncated header: " + path.string());
        h.height = std::stoi(token);
        if (!next_pnm_token(in, token)) throw ImageLoadError("truncated header: " + path.string());
        h.maxval = std::stoi(token);
    } catch (const std::logic_error&) {
        throw ImageLoadError("malformed header: " + path.string());
    }
    if (h.width <= 0 || h.height <= 0 || h.maxval != 255) {
        throw ImageLoadError("unsupported header (need maxval 255): " + path.string());
    }
    return h;
}

RawImage read_ppm_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageLoadError("cannot open image: " + path.string());
    const PnmHeader h = read_pnm_header(in, "P6", path);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(h.width) * h.height * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw ImageLoadError("truncated pixel data: " + path.string());
    }
    return from_interleaved(bytes, h.height, h.width);
}

}  // namespace

unsigned char to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<unsigned char>(std::lround(c * 255.0f));
}

void quantize_8bit(RawImage& image) {
    for (float& v : image.values) v = static_cast<float>(to_byte(v)) / 255.0f;
}

RawImage read_image(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw ImageLoadError("cannot open image: " + path.string());
    std::array<unsigned char, 8> sig{};
    probe.read(reinterpret_cast<char*>(sig.data()), sig.size());
    const auto got = probe.gcount();
    probe.close();
    if (got >= 8 && png_sig_cmp(sig.data(), 0, 8) == 0) return read_png_file(path);
    if (got >= 2 && sig[0] == 'P' && sig[1] == '6') return read_ppm_file(path);
    throw ImageLoadError("unrecognized image format (expected PNG or P6 PPM): " + path.string());
}

void write_png(const std::filesystem::path& path, const RawImage& image) {
    if (image.channels != 3) throw ImageWriteError("write_png expects 3 channels: " + path.string());
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ImageWriteError("cannot open for writing: " + path.string());

    std::vector<unsigned char> pixels(static_cast<std::size_t>(image.width) * image.height * 3);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const std::size_t base = (static_cast<std::size_t>(y) * image.width + x) * 3;
            for (int c = 0; c < 3; ++c) pixels[base + c] = to_byte(image.at(c, y, x));
        }
    }
    std::vector<png_bytep> rows(image.height);
    for (int y = 0; y < image.height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * image.width * 3;

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw ImageWriteError("libpng init failed for: " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageWriteError("PNG encode failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_pgm(const std::filesystem::path& path, const Raster<float>& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageWriteError("cannot open for writing: " + path.string());
    out << "P5\n" << map.width << ' ' << map.height << "\n255\n";
    std::vector<unsigned char> bytes(map.plane_size());
    const auto plane = map.plane(0);
    std::transform(plane.begin(), plane.end(), bytes.begin(), to_byte);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageWriteError("write failed: " + path.string());
}

Raster<float> read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageLoadError("cannot open image: " + path.string());
    const PnmHeader h = read_pnm_header(in, "P5", path);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(h.width) * h.height);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw ImageLoadError("truncated pixel data: " + path.string());
    }
    Raster<float> map(1, h.height, h.width);
    for (std::size_t i = 0; i < bytes.size(); ++i) map.values[i] = static_cast<float>(bytes[i]) / 255.0f;
    return map;
}

}  // namespace guidednet::io
