#include "lookalike/augment.h"

#include <algorithm>
#include <cmath>

#include "lookalike/errors.h"

namespace lookalike {

nlohmann::json to_json(const AugmentConfig& cfg) {
    return {{"rotation", cfg.rotation},         {"hflip", cfg.hflip},   {"color_jitter", cfg.color_jitter},
            {"crop", cfg.crop},                 {"max_rotation_deg", cfg.max_rotation_deg},
            {"jitter", cfg.jitter},             {"crop_min_scale", cfg.crop_min_scale},
            {"channel_shuffle", cfg.channel_shuffle}};
}

AugmentConfig augment_config_from_json(const nlohmann::json& doc) {
    AugmentConfig cfg;
    try {
        cfg.rotation = doc.value("rotation", cfg.rotation);
        cfg.hflip = doc.value("hflip", cfg.hflip);
        cfg.color_jitter = doc.value("color_jitter", cfg.color_jitter);
        cfg.crop = doc.value("crop", cfg.crop);
        cfg.max_rotation_deg = doc.value("max_rotation_deg", cfg.max_rotation_deg);
        cfg.jitter = doc.value("jitter", cfg.jitter);
        cfg.crop_min_scale = doc.value("crop_min_scale", cfg.crop_min_scale);
        cfg.channel_shuffle = doc.value("channel_shuffle", cfg.channel_shuffle);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("augmentations: ") + e.what());
    }
    if (cfg.crop_min_scale <= 0.0 || cfg.crop_min_scale > 1.0) fail(ErrorKind::Invariant, "crop_min_scale must be in (0,1]");
    if (cfg.jitter < 0.0 || cfg.jitter >= 1.0) fail(ErrorKind::Invariant, "jitter must be in [0,1)");
    return cfg;
}

Image rotate_image(const Image& image, double degrees, bool nearest) {
    Image out(image.width, image.height, image.channels);
    const double rad = degrees * M_PI / 180.0;
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    const double cx = (image.width - 1) / 2.0;
    const double cy = (image.height - 1) / 2.0;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            // inverse map: output pixel -> source location
            const double dx = x - cx;
            const double dy = y - cy;
            const double sx = c * dx + s * dy + cx;
            const double sy = -s * dx + c * dy + cy;
            if (nearest) {
                const int ix = static_cast<int>(std::lround(sx));
                const int iy = static_cast<int>(std::lround(sy));
                if (ix < 0 || iy < 0 || ix >= image.width || iy >= image.height) continue;
                for (int ch = 0; ch < image.channels; ++ch) out.at(x, y, ch) = image.at(ix, iy, ch);
                continue;
            }
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double wx = sx - x0;
            const double wy = sy - y0;
            for (int ch = 0; ch < image.channels; ++ch) {
                double acc = 0.0;
                for (int j = 0; j < 2; ++j)
                    for (int i = 0; i < 2; ++i) {
                        const int px = x0 + i;
                        const int py = y0 + j;
                        if (px < 0 || py < 0 || px >= image.width || py >= image.height) continue;
                        acc += image.at(px, py, ch) * (i ? wx : 1 - wx) * (j ? wy : 1 - wy);
                    }
                out.at(x, y, ch) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Image permute_channels(const Image& image, const std::array<int, 3>& order) {
    if (image.channels != 3) return image;
    Image out(image.width, image.height, 3);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(x, y, order[c]);
    return out;
}

Image flip_horizontal(const Image& image) {
    Image out(image.width, image.height, image.channels);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int ch = 0; ch < image.channels; ++ch) out.at(image.width - 1 - x, y, ch) = image.at(x, y, ch);
    return out;
}

Image crop_image(const Image& image, int x0, int y0, int width, int height) {
    if (x0 < 0 || y0 < 0 || width < 1 || height < 1 || x0 + width > image.width || y0 + height > image.height)
        fail(ErrorKind::Shape, "crop window outside the image");
    Image out(width, height, image.channels);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int ch = 0; ch < image.channels; ++ch) out.at(x, y, ch) = image.at(x0 + x, y0 + y, ch);
    return out;
}

std::pair<Image, Image> augment(const Image& image, const Image& mask, const AugmentConfig& cfg, Rng& rng) {
    if (!image.same_size(mask)) fail(ErrorKind::Shape, "image and mask differ in size");
    Image img = image;
    Image msk = mask;
    if (cfg.crop) {
        const double scale = rng.uniform(cfg.crop_min_scale, 1.0);
        const int w = std::max(1, static_cast<int>(std::lround(img.width * scale)));
        const int h = std::max(1, static_cast<int>(std::lround(img.height * scale)));
        const int x0 = static_cast<int>(rng.below(static_cast<uint64_t>(img.width - w + 1)));
        const int y0 = static_cast<int>(rng.below(static_cast<uint64_t>(img.height - h + 1)));
        img = crop_image(img, x0, y0, w, h);
        msk = crop_image(msk, x0, y0, w, h);
    }
    if (cfg.rotation) {
        const double deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
        img = rotate_image(img, deg);
        msk = rotate_image(msk, deg, true);
    }
    if (cfg.hflip && rng.bernoulli(0.5)) {
        img = flip_horizontal(img);
        msk = flip_horizontal(msk);
    }
    if (cfg.color_jitter && img.channels == 3) {
        const double brightness = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
        const double contrast = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
        const double saturation = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
        double mean = 0.0;
        for (float v : img.data) mean += v;
        mean /= std::max<size_t>(1, img.data.size());
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double rgb[3];
                for (int ch = 0; ch < 3; ++ch) rgb[ch] = img.at(x, y, ch) * brightness;
                const double gray = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
                for (int ch = 0; ch < 3; ++ch) {
                    double v = gray + (rgb[ch] - gray) * saturation;
                    v = (v - mean * brightness) * contrast + mean * brightness;
                    img.at(x, y, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
    }
    return {std::move(img), std::move(msk)};
}

}  // namespace lookalike
