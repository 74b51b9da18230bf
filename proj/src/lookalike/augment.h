#pragma once

#include <array>
#include <utility>

#include "json.hpp"
#include "lookalike/image.h"
#include "lookalike/rng.h"

namespace lookalike {

// Magnitudes are not taken from any reference setup; they are ordinary defaults.
struct AugmentConfig {
    bool rotation = true;
    bool hflip = true;
    bool color_jitter = true;
    bool crop = true;
    double max_rotation_deg = 30.0;
    double jitter = 0.2;        // brightness / contrast / saturation factor range 1 +- jitter
    double crop_min_scale = 0.8;
    // One RGB permutation per training step, shared by every image in the batch. Pair labels
    // survive it because both sides of every pair see the same permutation.
    bool channel_shuffle = false;

    bool any() const { return rotation || hflip || color_jitter || crop || channel_shuffle; }
};

nlohmann::json to_json(const AugmentConfig& cfg);
AugmentConfig augment_config_from_json(const nlohmann::json& doc);

// Rotates about the image center; uncovered pixels become 0. Bilinear for images, nearest
// for masks.
Image rotate_image(const Image& image, double degrees, bool nearest = false);
Image flip_horizontal(const Image& image);
// out channel c = input channel order[c]; single-channel images pass through.
Image permute_channels(const Image& image, const std::array<int, 3>& order);
Image crop_image(const Image& image, int x0, int y0, int width, int height);

// Same geometric transform on image and mask; jitter touches the image only.
std::pair<Image, Image> augment(const Image& image, const Image& mask, const AugmentConfig& cfg, Rng& rng);

}  // namespace lookalike
