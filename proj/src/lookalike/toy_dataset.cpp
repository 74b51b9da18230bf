#include "lookalike/toy_dataset.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>

#include "lookalike/errors.h"
#include "lookalike/image.h"
#include "lookalike/rng.h"

namespace lookalike {

namespace {

enum class Shape { Circle, Square, Triangle, Diamond, Cross, Ring };
constexpr int kShapeCount = 6;

using Color = std::array<float, 3>;

struct Pattern {
    Shape shape = Shape::Circle;
    Color body{};
    Color accent{};
    float aspect = 1.0f;       // horizontal stretch of the silhouette
    float accent_pos = 0.0f;   // vertical center of the accent band, object coordinates
};

struct ViewParams {
    int width = 48;
    int height = 48;
    float angle = 0.0f;
    float scale = 1.0f;
    float dx = 0.0f;
    float dy = 0.0f;
    float background = 0.5f;
    bool occluded = false;
    float occ_x0 = 0, occ_y0 = 0, occ_x1 = 0, occ_y1 = 0;
};

float color_distance(const Color& a, const Color& b) {
    float d = 0.0f;
    for (int c = 0; c < 3; ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
    return std::sqrt(d);
}

Color random_color(Rng& rng) {
    Color color{};
    for (auto& v : color) v = static_cast<float>(rng.uniform(0.1, 0.9));
    return color;
}

bool inside_shape(const Pattern& p, float u, float v) {
    const float x = u / p.aspect;
    switch (p.shape) {
        case Shape::Circle: return x * x + v * v <= 0.8f * 0.8f;
        case Shape::Square: return std::abs(x) <= 0.72f && std::abs(v) <= 0.72f;
        case Shape::Triangle: return v >= -0.75f && v <= 0.75f && std::abs(x) <= (v + 0.75f) / 1.5f * 0.85f;
        case Shape::Diamond: return std::abs(x) + std::abs(v) <= 0.88f;
        case Shape::Cross:
            return (std::abs(x) <= 0.28f && std::abs(v) <= 0.82f) || (std::abs(v) <= 0.28f && std::abs(x) <= 0.82f);
        case Shape::Ring: {
            const float r = std::sqrt(x * x + v * v);
            return r >= 0.42f && r <= 0.85f;
        }
    }
    return false;
}

Pattern random_pattern(Rng& rng) {
    Pattern p;
    p.shape = static_cast<Shape>(rng.below(kShapeCount));
    p.body = random_color(rng);
    do {
        p.accent = random_color(rng);
    } while (color_distance(p.accent, p.body) < 0.35f);
    p.aspect = static_cast<float>(rng.uniform(0.6, 0.8));
    p.accent_pos = std::array<float, 3>{-0.4f, 0.0f, 0.4f}[rng.below(3)];
    return p;
}

Pattern different_pattern(const Pattern& base, Rng& rng) {
    for (;;) {
        Pattern p = random_pattern(rng);
        if (p.shape != base.shape && color_distance(p.body, base.body) >= 0.5f) return p;
    }
}

Pattern similar_pattern(const Pattern& base, Rng& rng, SimilarityType& type) {
    Pattern p = base;
    if (rng.bernoulli(0.5)) {
        type = SimilarityType::TextureColor;
        const int channel = static_cast<int>(rng.below(3));
        const float shift = p.body[channel] > 0.5f ? -0.4f : 0.4f;
        p.body[channel] += shift;
    } else {
        // Aspect rather than accent position: a moved accent band can vanish on thin shapes.
        type = SimilarityType::Shape;
        p.aspect = base.aspect + 0.4f;
    }
    return p;
}

ViewParams random_view(Rng& rng) {
    ViewParams v;
    // Near-square crops: padding to square then barely moves the object between views.
    v.width = 44 + static_cast<int>(rng.below(9));
    v.height = std::clamp(v.width - 2 + static_cast<int>(rng.below(5)), 44, 52);
    v.angle = static_cast<float>(rng.uniform(-8.0, 8.0) * M_PI / 180.0);
    v.scale = static_cast<float>(rng.uniform(0.9, 1.0));
    v.dx = static_cast<float>(rng.uniform(-1.5, 1.5));
    v.dy = static_cast<float>(rng.uniform(-1.5, 1.5));
    v.background = static_cast<float>(rng.uniform(0.42, 0.58));
    v.occluded = rng.bernoulli(0.2);
    if (v.occluded) {
        // A bar entering from one side of the crop.
        const float depth = static_cast<float>(rng.uniform(0.1, 0.25));
        switch (rng.below(4)) {
            case 0: v.occ_x0 = 0; v.occ_x1 = depth * v.width; v.occ_y0 = 0; v.occ_y1 = static_cast<float>(v.height); break;
            case 1: v.occ_x0 = (1 - depth) * v.width; v.occ_x1 = static_cast<float>(v.width); v.occ_y0 = 0; v.occ_y1 = static_cast<float>(v.height); break;
            case 2: v.occ_x0 = 0; v.occ_x1 = static_cast<float>(v.width); v.occ_y0 = 0; v.occ_y1 = depth * v.height; break;
            default: v.occ_x0 = 0; v.occ_x1 = static_cast<float>(v.width); v.occ_y0 = (1 - depth) * v.height; v.occ_y1 = static_cast<float>(v.height); break;
        }
    }
    return v;
}

struct RenderedView {
    Image image;
    Image mask;
    double visibility = 0.0;
};

RenderedView render(const Pattern& p, const ViewParams& v, Rng& rng) {
    RenderedView out{Image(v.width, v.height, 3), Image(v.width, v.height, 1), 0.0};
    const float half = 0.5f * std::min(v.width, v.height) * v.scale;
    const float cx = 0.5f * v.width + v.dx;
    const float cy = 0.5f * v.height + v.dy;
    const float ca = std::cos(v.angle);
    const float sa = std::sin(v.angle);
    int total = 0;
    int visible = 0;
    for (int y = 0; y < v.height; ++y) {
        for (int x = 0; x < v.width; ++x) {
            const float px = (x + 0.5f - cx) / half;
            const float py = (y + 0.5f - cy) / half;
            const float u = ca * px + sa * py;
            const float w = -sa * px + ca * py;
            const bool on_object = inside_shape(p, u, w);
            const bool occluded = v.occluded && x + 0.5f >= v.occ_x0 && x + 0.5f < v.occ_x1 &&
                                  y + 0.5f >= v.occ_y0 && y + 0.5f < v.occ_y1;
            Color color{v.background, v.background, v.background};
            if (on_object) {
                ++total;
                const bool accent = std::abs(w - p.accent_pos) <= 0.16f;
                color = accent ? p.accent : p.body;
            }
            if (occluded) color = {0.15f, 0.15f, 0.18f};
            const bool fg = on_object && !occluded;
            if (fg) ++visible;
            for (int c = 0; c < 3; ++c)
                out.image.at(x, y, c) = std::clamp(color[c] + static_cast<float>(rng.normal() * 0.02), 0.0f, 1.0f);
            out.mask.at(x, y, 0) = fg ? 1.0f : 0.0f;
        }
    }
    out.visibility = total > 0 ? static_cast<double>(visible) / total : 0.0;
    // Quantize so the manifest text is short and stable.
    out.visibility = std::round(out.visibility * 10000.0) / 10000.0;
    return out;
}

std::string format_id(const char* prefix, int value, int width) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%s%0*d", prefix, width, value);
    return buffer;
}

const std::array<const char*, 6> kClassNames{"chair", "lamp", "mug", "pillow", "monitor", "plant"};

}  // namespace

DatasetManifest make_toy_dataset(const std::filesystem::path& out_dir, int n_scenes, uint64_t seed, Split split) {
    if (n_scenes < 1) fail(ErrorKind::Precondition, "make_toy_dataset requires n_scenes >= 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "crops", ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + (out_dir / "crops").string() + ": " + ec.message());

    Rng rng(seed);
    DatasetManifest manifest;
    manifest.split = split;
    manifest.root = out_dir;

    for (int s = 0; s < n_scenes; ++s) {
        SceneManifest scene;
        scene.scene_id = format_id("scene_", s, 4);
        const auto scene_dir = std::filesystem::path("crops") / scene.scene_id;
        std::filesystem::create_directories(out_dir / scene_dir, ec);
        if (ec) fail(ErrorKind::Io, "cannot create " + (out_dir / scene_dir).string());

        std::vector<std::string> classes(kClassNames.begin(), kClassNames.end());
        rng.shuffle(classes);
        const int n_classes = 3 + static_cast<int>(rng.below(2));

        struct Planned {
            std::string cls;
            Pattern pattern;
            int group;  // objects with the same group id are identical
            int base_group;
            std::set<SimilarityType> types;
        };
        std::vector<Planned> planned;
        int next_group = 0;
        for (int c = 0; c < n_classes; ++c) {
            const Pattern base = random_pattern(rng);
            const int base_group = next_group++;
            const int copies = c == 0 ? 3 : 2 + static_cast<int>(rng.below(2));
            for (int i = 0; i < copies; ++i) planned.push_back({classes[c], base, base_group, base_group, {}});
            SimilarityType type{};
            const Pattern similar = similar_pattern(base, rng, type);
            planned.push_back({classes[c], similar, next_group++, base_group, {type}});
            const Pattern different = different_pattern(base, rng);
            planned.push_back({classes[c], different, next_group++, -1, {}});
        }

        for (size_t o = 0; o < planned.size(); ++o) {
            ObjectInstance object;
            object.object_id = format_id("o", static_cast<int>(o), 2);
            object.semantic_class = planned[o].cls;
            std::vector<int> frames(24);
            for (int f = 0; f < 24; ++f) frames[f] = f;
            rng.shuffle(frames);
            const int n_views = 6 + static_cast<int>(rng.below(3));
            for (int j = 0; j < n_views; ++j) {
                const ViewParams params = random_view(rng);
                RenderedView view = render(planned[o].pattern, params, rng);
                const auto image_rel = scene_dir / (object.object_id + "_v" + std::to_string(j) + ".png");
                const auto mask_rel = scene_dir / (object.object_id + "_m" + std::to_string(j) + ".png");
                write_image(out_dir / image_rel, view.image);
                write_image(out_dir / mask_rel, view.mask);
                object.views.push_back({image_rel.generic_string(), mask_rel.generic_string(), view.visibility,
                                        format_id("f", frames[j], 3)});
            }
            std::stable_sort(object.views.begin(), object.views.end(), [](const ViewCrop& x, const ViewCrop& y) {
                if (x.visibility != y.visibility) return x.visibility > y.visibility;
                return x.source_frame_id < y.source_frame_id;
            });
            scene.objects.push_back(std::move(object));
        }

        for (size_t i = 0; i < planned.size(); ++i) {
            for (size_t j = i + 1; j < planned.size(); ++j) {
                if (planned[i].cls != planned[j].cls) continue;
                PairRecord pair;
                pair.a = scene.objects[i].object_id;
                pair.b = scene.objects[j].object_id;
                const Planned& x = planned[i];
                const Planned& y = planned[j];
                if (x.group == y.group) {
                    pair.label = PairLabel::Identical;
                } else if ((x.base_group == y.group && !x.types.empty()) || (y.base_group == x.group && !y.types.empty())) {
                    pair.label = PairLabel::Similar;
                    pair.similarity_types = x.types.empty() ? y.types : x.types;
                } else {
                    pair.label = PairLabel::Different;
                }
                scene.pairs.push_back(std::move(pair));
            }
        }
        manifest.scenes.push_back(std::move(scene));
    }

    validate_manifest(manifest);
    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

}  // namespace lookalike
