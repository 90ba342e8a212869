#include "doctest.h"
#include "oracles.hpp"

#include "guidednet/data.hpp"
#include "guidednet/errors.hpp"
#include "guidednet/imgproc.hpp"

using namespace guidednet;

namespace {

data::SyntheticParams disk_params(double cx, double cy, double r) {
    data::SyntheticParams p;
    p.fov_center_x_frac = cx / p.image_size;
    p.fov_center_y_frac = cy / p.image_size;
    p.fov_radius_frac = r / p.image_size;
    return p;
}

}  // namespace

TEST_CASE("detect_fov finds the generator's disk and follows a translation") {
    const imgproc::PreprocessConfig cfg;
    const auto p = disk_params(64, 60, 50);
    Rng rng(21);
    const RawImage img = data::synth_fundus(data::QualityLabel::Good, rng, p);
    const auto c = imgproc::detect_fov(img, cfg);
    CHECK(std::abs(c.cx - 64) <= 2.0);
    CHECK(std::abs(c.cy - 60) <= 2.0);
    CHECK(std::abs(c.r - 50) <= 2.0);

    Rng rng2(21);
    const RawImage shifted = data::synth_fundus(data::QualityLabel::Good, rng2, disk_params(69, 65, 50));
    const auto s = imgproc::detect_fov(shifted, cfg);
    CHECK(std::abs((s.cx - c.cx) - 5.0) <= 2.0);
    CHECK(std::abs((s.cy - c.cy) - 5.0) <= 2.0);
}

TEST_CASE("detect_fov rejects a blank frame") {
    const RawImage blank(3, 128, 128, 0.0f);
    CHECK_THROWS_AS(imgproc::detect_fov(blank, imgproc::PreprocessConfig{}), NoFovFound);
}

TEST_CASE("raw image validation") {
    CHECK_THROWS_AS(imgproc::validate_raw_image(RawImage(3, 7, 20)), InvalidImage);
    CHECK_THROWS_AS(imgproc::validate_raw_image(RawImage(1, 20, 20)), InvalidImage);
    RawImage bad(3, 10, 10, 0.5f);
    bad.values[17] = 1.5f;
    CHECK_THROWS_AS(imgproc::validate_raw_image(bad), InvalidImage);
}

TEST_CASE("crop_pad_resize: full-frame identity and shape contract") {
    Rng rng(1);
    const RawImage img = oracle::random_image(rng, 3, 224, 224);
    const imgproc::PreprocessConfig cfg;
    CHECK(imgproc::crop_pad_resize(img, {111.5, 111.5, 112.0}, cfg) == img);

    const RawImage wide = oracle::random_image(rng, 3, 90, 150);
    const auto out = imgproc::crop_pad_resize(wide, {70.0, 40.0, 60.0}, cfg);
    CHECK(out.channels == 3);
    CHECK(out.height == 224);
    CHECK(out.width == 224);
    for (float v : out.values) CHECK((v >= 0.0f && v <= 1.0f));

    CHECK_THROWS_AS(imgproc::crop_pad_resize(wide, {-500.0, 40.0, 10.0}, cfg), EmptyCrop);
}

TEST_CASE("crop_pad_resize: 100x128 region pads 14 rows each side, then bilinear") {
    Rng rng(9);
    const RawImage img = oracle::random_image(rng, 3, 100, 128);
    const imgproc::PreprocessConfig cfg;
    const auto out = imgproc::crop_pad_resize(img, {63.5, 49.5, 64.0}, cfg);

    const auto square = imgproc::pad_to_square(img);
    REQUIRE(square.height == 128);
    REQUIRE(square.width == 128);
    for (int x = 0; x < 128; ++x) {
        for (int y : {0, 13, 114, 127}) CHECK(square.at(1, y, x) == 0.0f);
        CHECK(square.at(1, 14, x) == img.at(1, 0, x));
        CHECK(square.at(1, 113, x) == img.at(1, 99, x));
    }

    RawImage padded(3, 128, 128, 0.0f);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 100; ++y)
            for (int x = 0; x < 128; ++x) padded.at(c, y + 14, x) = img.at(c, y, x);
    const double scale = 128.0 / 224.0;
    for (auto [y, x] : {std::pair{0, 0}, {37, 201}, {112, 112}, {223, 5}, {150, 77}}) {
        for (int c = 0; c < 3; ++c) {
            const double expect = oracle::bilinear(padded, c, (y + 0.5) * scale - 0.5, (x + 0.5) * scale - 0.5);
            CHECK(std::abs(out.at(c, y, x) - expect) <= 1e-6);
        }
    }
}

TEST_CASE("preprocess without FoV pads and resizes the whole frame") {
    Rng rng(2);
    const RawImage img = oracle::random_image(rng, 3, 64, 48);
    imgproc::PreprocessConfig cfg;
    cfg.fov_enabled = false;
    cfg.target_size = 64;
    const auto out = imgproc::preprocess(img, cfg);
    CHECK(out == imgproc::pad_to_square(img));

    cfg.target_size = 33;
    CHECK_THROWS_AS(imgproc::preprocess(img, cfg), InvalidConfig);
}

TEST_CASE("augment: flips, identity, index mapping") {
    Rng rng(6);
    const RawImage img = oracle::random_image(rng, 3, 16, 16);
    CHECK(imgproc::flip_horizontal(imgproc::flip_horizontal(img)) == img);
    CHECK(imgproc::flip_vertical(imgproc::flip_vertical(img)) == img);
    CHECK(imgproc::apply_augment(img, {false, false, 0.0}) == img);

    const auto h = imgproc::apply_augment(img, {true, false, 0.0});
    const auto v = imgproc::apply_augment(img, {false, true, 0.0});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                CHECK(h.at(c, y, 15 - x) == img.at(c, y, x));
                CHECK(v.at(c, 15 - y, x) == img.at(c, y, x));
            }

    imgproc::AugmentFlags off{false, false, false};
    Rng r1(3);
    CHECK(imgproc::augment(img, r1, off) == img);
}

TEST_CASE("rotation by 90 degrees is an index permutation") {
    Rng rng(7);
    const RawImage img = oracle::random_image(rng, 3, 20, 20);
    const auto rot = imgproc::rotate(img, 90.0);
    const int n = 20;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) CHECK(std::abs(rot.at(c, y, x) - img.at(c, n - 1 - x, y)) <= 1e-6);

    // Four quarter turns come back to the start.
    auto back = img;
    for (int i = 0; i < 4; ++i) back = imgproc::rotate(back, 90.0);
    for (std::size_t i = 0; i < img.values.size(); ++i) CHECK(std::abs(back.values[i] - img.values[i]) <= 1e-5);
}

TEST_CASE("augment is deterministic per seed and zero-fills corners") {
    Rng rng(8);
    const RawImage img(3, 32, 32, 1.0f);
    Rng a(99), b(99);
    const auto x = imgproc::augment(img, a, {});
    const auto y = imgproc::augment(img, b, {});
    CHECK(x == y);
    const auto r45 = imgproc::rotate(img, 45.0);
    CHECK(r45.at(0, 0, 0) == 0.0f);
    CHECK(r45.at(0, 16, 16) == 1.0f);
}
