#pragma once

#include <cstdint>
#include <filesystem>

#include "lookalike/datamodel.h"

namespace lookalike {

// Procedural stand-in for a real capture dataset. Every object is a colored geometric
// pattern; identical objects share the pattern exactly, similar objects perturb the body
// color or the silhouette aspect, different objects use an unrelated pattern. Each object
// gets 6-8 randomized views (rotation, scale, shift, noise, partial occlusion).
//
// Writes <out_dir>/manifest.json plus PNG crops and masks under <out_dir>/crops.
// Each scene contains at least 3 identical, 1 similar and 2 different pairs.
DatasetManifest make_toy_dataset(const std::filesystem::path& out_dir, int n_scenes, uint64_t seed,
                                 Split split = Split::Train);

}  // namespace lookalike
