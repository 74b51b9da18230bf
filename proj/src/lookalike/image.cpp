#include "lookalike/image.h"

#include <png.h>

#include <csetjmp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "lookalike/errors.h"

namespace lookalike {

namespace {

uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

std::vector<uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::MissingFile, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct PngReadContext {
    const std::vector<uint8_t>* bytes;
    size_t offset;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t count) {
    auto* ctx = static_cast<PngReadContext*>(png_get_io_ptr(png));
    if (ctx->offset + count > ctx->bytes->size()) png_error(png, "truncated PNG stream");
    std::memcpy(out, ctx->bytes->data() + ctx->offset, count);
    ctx->offset += count;
}

void png_warning_handler(png_structp, png_const_charp) {}

// libpng reports errors by longjmp back into this frame; every object below is
// constructed before setjmp so nothing is skipped when it fires.
Image decode_png(const std::vector<uint8_t>& bytes, const std::string& name) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) fail(ErrorKind::Decode, name + ": not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_handler);
    if (!png) fail(ErrorKind::Decode, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    PngReadContext ctx{&bytes, 0};
    std::vector<uint8_t> raw;
    std::vector<png_bytep> rows;
    Image image;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::Decode, name + ": corrupt PNG data");
    }
    png_set_read_fn(png, &ctx, png_read_from_memory);
    png_read_info(png, info);

    const int color_type = png_get_color_type(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::Decode, name + ": unsupported channel count");
    }

    raw.resize(static_cast<size_t>(width) * height * channels);
    rows.resize(height);
    for (int y = 0; y < height; ++y) rows[y] = raw.data() + static_cast<size_t>(y) * width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    image = Image(width, height, channels);
    for (size_t i = 0; i < raw.size(); ++i) image.data[i] = raw[i] / 255.0f;
    return image;
}

void skip_netpbm_space(const std::vector<uint8_t>& bytes, size_t& pos) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
}

int read_netpbm_int(const std::vector<uint8_t>& bytes, size_t& pos, const std::string& name) {
    skip_netpbm_space(bytes, pos);
    int value = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        value = value * 10 + (bytes[pos] - '0');
        any = true;
        ++pos;
    }
    if (!any) fail(ErrorKind::Decode, name + ": malformed netpbm header");
    return value;
}

Image decode_netpbm(const std::vector<uint8_t>& bytes, const std::string& name) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        fail(ErrorKind::Decode, name + ": not a binary netpbm file");
    const int channels = bytes[1] == '6' ? 3 : 1;
    size_t pos = 2;
    const int width = read_netpbm_int(bytes, pos, name);
    const int height = read_netpbm_int(bytes, pos, name);
    const int maxval = read_netpbm_int(bytes, pos, name);
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) fail(ErrorKind::Decode, name + ": bad netpbm header");
    ++pos;
    const size_t count = static_cast<size_t>(width) * height * channels;
    if (bytes.size() < pos + count) fail(ErrorKind::Decode, name + ": truncated netpbm data");
    Image image(width, height, channels);
    for (size_t i = 0; i < count; ++i) image.data[i] = static_cast<float>(bytes[pos + i]) / maxval;
    return image;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

std::string lower_extension(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    const std::string ext = lower_extension(path);
    if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return decode_netpbm(bytes, path.string());
    return decode_png(bytes, path.string());
}

namespace {

// Only trivially destructible locals live in this frame, so the longjmp is safe.
bool write_png_rows(const Image& image, std::vector<uint8_t>* out, uint8_t* row, size_t row_size) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_handler);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_set_write_fn(png, out, png_write_to_vector, png_flush_noop);
    png_set_IHDR(png, info, image.width, image.height, 8,
                 image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        for (size_t i = 0; i < row_size; ++i) row[i] = to_byte(image.data[static_cast<size_t>(y) * row_size + i]);
        png_write_row(png, row);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

}  // namespace

std::vector<uint8_t> encode_png(const Image& image) {
    if (image.channels != 1 && image.channels != 3) fail(ErrorKind::Io, "png encoder supports 1 or 3 channels");
    std::vector<uint8_t> out;
    std::vector<uint8_t> row(static_cast<size_t>(image.width) * image.channels);
    if (!write_png_rows(image, &out, row.data(), row.size())) fail(ErrorKind::Io, "png encoding failed");
    return out;
}

void write_image(const std::filesystem::path& path, const Image& image) {
    std::vector<uint8_t> bytes;
    const std::string ext = lower_extension(path);
    if (ext == ".ppm" || ext == ".pgm") {
        std::ostringstream header;
        header << (image.channels == 3 ? "P6" : "P5") << "\n" << image.width << " " << image.height << "\n255\n";
        const std::string h = header.str();
        bytes.assign(h.begin(), h.end());
        for (float v : image.data) bytes.push_back(to_byte(v));
    } else {
        bytes = encode_png(image);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

Image to_grayscale(const Image& image) {
    if (image.channels == 1) return image;
    Image gray(image.width, image.height, 1);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            float sum = 0.0f;
            for (int c = 0; c < image.channels; ++c) sum += image.at(x, y, c);
            gray.at(x, y, 0) = sum / image.channels;
        }
    return gray;
}

Image resize_bilinear(const Image& image, int width, int height) {
    if (image.width == width && image.height == height) return image;
    Image out(width, height, image.channels);
    const float sx = static_cast<float>(image.width) / width;
    const float sy = static_cast<float>(image.height) / height;
    for (int y = 0; y < height; ++y) {
        const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(image.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const float wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const float fx = std::clamp((x + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(image.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const float wx = fx - x0;
            for (int c = 0; c < image.channels; ++c) {
                const float top = image.at(x0, y0, c) * (1 - wx) + image.at(x1, y0, c) * wx;
                const float bottom = image.at(x0, y1, c) * (1 - wx) + image.at(x1, y1, c) * wx;
                out.at(x, y, c) = top * (1 - wy) + bottom * wy;
            }
        }
    }
    return out;
}

Image resize_nearest(const Image& image, int width, int height) {
    if (image.width == width && image.height == height) return image;
    Image out(width, height, image.channels);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(image.height - 1, static_cast<int>((y + 0.5f) * image.height / height));
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(image.width - 1, static_cast<int>((x + 0.5f) * image.width / width));
            for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(sx, sy, c);
        }
    }
    return out;
}

Image pad_to_square(const Image& image) {
    const int side = std::max(image.width, image.height);
    if (image.width == side && image.height == side) return image;
    Image out(side, side, image.channels, 0.0f);
    const int ox = (side - image.width) / 2;
    const int oy = (side - image.height) / 2;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c) out.at(x + ox, y + oy, c) = image.at(x, y, c);
    return out;
}

}  // namespace lookalike
