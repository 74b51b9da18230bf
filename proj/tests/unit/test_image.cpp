#include "doctest.h"

#include "fixtures.h"
#include "lookalike/augment.h"
#include "lookalike/errors.h"
#include "lookalike/image.h"
#include "lookalike/rng.h"

using namespace lookalike;
using fixture::TempDir;

namespace {

Image gradient(int w, int h, int c) {
    Image img(w, h, c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k) img.at(x, y, k) = static_cast<float>((x * 7 + y * 3 + k * 50) % 256) / 255.0f;
    return img;
}

float max_abs_diff(const Image& a, const Image& b, int margin) {
    float worst = 0;
    for (int y = margin; y < a.height - margin; ++y)
        for (int x = margin; x < a.width - margin; ++x)
            for (int c = 0; c < a.channels; ++c) worst = std::max(worst, std::abs(a.at(x, y, c) - b.at(x, y, c)));
    return worst;
}

// Smooth radial pattern: bilinear resampling errors stay small on it.
Image smooth(int size) {
    Image img(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const float dx = (x - size / 2.0f) / size, dy = (y - size / 2.0f) / size;
            img.at(x, y, 0) = 0.5f + 0.4f * std::cos(6 * dx);
            img.at(x, y, 1) = 0.5f + 0.4f * std::sin(5 * dy);
            img.at(x, y, 2) = 0.5f + 0.3f * std::cos(4 * (dx + dy));
        }
    return img;
}

}  // namespace

TEST_CASE("png and netpbm round-trip at 8-bit precision") {
    TempDir dir;
    for (const char* name : {"x.png", "x.ppm"}) {
        const auto img = gradient(13, 9, 3);
        write_image(dir / name, img);
        const auto back = read_image(dir / name);
        CHECK(back.width == 13);
        CHECK(back.height == 9);
        CHECK(max_abs_diff(img, back, 0) <= 0.5f / 255.0f + 1e-6f);
    }
    const auto mask = gradient(5, 4, 1);
    write_image(dir / "m.pgm", mask);
    CHECK(read_image(dir / "m.pgm").channels == 1);
}

TEST_CASE("image decode errors") {
    TempDir dir;
    fixture::write_file(dir / "bad.png", "not a png at all");
    try {
        read_image(dir / "bad.png");
        FAIL("expected Decode");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Decode);
    }
    try {
        read_image(dir / "absent.png");
        FAIL("expected MissingFile");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MissingFile);
    }
}

TEST_CASE("pad_to_square centers the content") {
    Image img(4, 2, 1, 1.0f);
    const auto sq = pad_to_square(img);
    CHECK(sq.width == 4);
    CHECK(sq.height == 4);
    CHECK(sq.at(0, 0, 0) == 0.0f);
    CHECK(sq.at(0, 1, 0) == 1.0f);
    CHECK(sq.at(3, 2, 0) == 1.0f);
    CHECK(sq.at(3, 3, 0) == 0.0f);
}

TEST_CASE("resize to the same size is the identity") {
    const auto img = gradient(16, 16, 3);
    CHECK(max_abs_diff(resize_bilinear(img, 16, 16), img, 0) < 1e-6f);
    CHECK(max_abs_diff(resize_nearest(img, 16, 16), img, 0) < 1e-6f);
}

TEST_CASE("augmentations off is the identity") {
    AugmentConfig off;
    off.rotation = off.hflip = off.color_jitter = off.crop = false;
    CHECK_FALSE(off.any());
    Rng rng(1);
    const auto img = gradient(20, 20, 3);
    const auto mask = gradient(20, 20, 1);
    const auto [i2, m2] = augment(img, mask, off, rng);
    CHECK(i2.data == img.data);
    CHECK(m2.data == mask.data);
}

TEST_CASE("horizontal flip mirrors image and mask together") {
    const auto img = gradient(7, 5, 3);
    const auto flipped = flip_horizontal(img);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x) CHECK(flipped.at(x, y, 1) == img.at(6 - x, y, 1));

    AugmentConfig only_flip;
    only_flip.rotation = only_flip.color_jitter = only_flip.crop = false;
    const auto mask = gradient(7, 5, 1);
    bool saw_flip = false;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const auto [i2, m2] = augment(img, mask, only_flip, rng);
        const bool image_flipped = i2.data == flipped.data;
        CHECK((image_flipped || i2.data == img.data));
        CHECK(image_flipped == (m2.data == flip_horizontal(mask).data));
        saw_flip |= image_flipped;
    }
    CHECK(saw_flip);
}

TEST_CASE("rotation round-trip is close in the interior") {
    const auto img = smooth(48);
    const auto back = rotate_image(rotate_image(img, 20.0), -20.0);
    CHECK(max_abs_diff(img, back, 12) < 0.05f);
}

TEST_CASE("channel permutation") {
    const auto img = gradient(3, 3, 3);
    const auto p = permute_channels(img, {2, 0, 1});
    CHECK(p.at(1, 1, 0) == img.at(1, 1, 2));
    CHECK(p.at(1, 1, 1) == img.at(1, 1, 0));
    const auto mask = gradient(3, 3, 1);
    CHECK(permute_channels(mask, {2, 0, 1}).data == mask.data);
}

TEST_CASE("augment is deterministic per seed and keeps image and mask aligned") {
    const auto img = gradient(30, 24, 3);
    Image mask(30, 24, 1, 1.0f);
    AugmentConfig cfg;
    Rng r1(9), r2(9);
    const auto a = augment(img, mask, cfg, r1);
    const auto b = augment(img, mask, cfg, r2);
    CHECK(a.first.data == b.first.data);
    CHECK(a.second.data == b.second.data);
    CHECK(a.first.same_size(a.second));
}
