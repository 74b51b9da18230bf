#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lookalike {

// Interleaved float image, values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

    float& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    float at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    bool empty() const { return data.empty(); }
    bool same_size(const Image& other) const { return width == other.width && height == other.height; }
};

// PNG (8-bit) and binary netpbm (.ppm/.pgm) are supported. Throws Decode on bad data,
// MissingFile when the path does not exist.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);

std::vector<uint8_t> encode_png(const Image& image);

Image to_grayscale(const Image& image);

Image resize_bilinear(const Image& image, int width, int height);
Image resize_nearest(const Image& image, int width, int height);

// Zero-pads the shorter side so the result is square, keeping the content centered.
Image pad_to_square(const Image& image);

}  // namespace lookalike
