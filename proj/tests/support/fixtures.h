#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "lookalike/datamodel.h"
#include "lookalike/image.h"

namespace fixture {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "lk") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

// Solid-color crop plus a full mask on disk, returned as a view record.
inline lookalike::ViewCrop solid_view(const std::filesystem::path& root, const std::string& stem, float r, float g,
                                      float b, double visibility, const std::string& frame, int w = 24, int h = 24) {
    lookalike::Image image(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            image.at(x, y, 0) = r;
            image.at(x, y, 1) = g;
            image.at(x, y, 2) = b;
        }
    lookalike::write_image(root / (stem + ".png"), image);
    lookalike::write_image(root / (stem + "_m.png"), lookalike::Image(w, h, 1, 1.0f));
    return {stem + ".png", stem + "_m.png", visibility, frame};
}

// One scene: objects {a, b, c: chair} and {d: table}, labels a-b Identical, a-c Different.
inline lookalike::DatasetManifest small_manifest(const std::filesystem::path& root) {
    using namespace lookalike;
    DatasetManifest m;
    m.root = root;
    SceneManifest s;
    s.scene_id = "s0";
    const char* ids[] = {"a", "b", "c", "d"};
    const float colors[][3] = {{0.8f, 0.2f, 0.2f}, {0.8f, 0.2f, 0.2f}, {0.2f, 0.2f, 0.8f}, {0.2f, 0.8f, 0.2f}};
    for (int i = 0; i < 4; ++i) {
        ObjectInstance o;
        o.object_id = ids[i];
        o.semantic_class = i < 3 ? "chair" : "table";
        for (int v = 0; v < 2; ++v)
            o.views.push_back(solid_view(root, std::string(ids[i]) + std::to_string(v), colors[i][0], colors[i][1],
                                         colors[i][2], 0.9 - 0.1 * v, "f" + std::to_string(v)));
        s.objects.push_back(o);
    }
    s.pairs.push_back({"a", "b", PairLabel::Identical, {}, false});
    s.pairs.push_back({"a", "c", PairLabel::Different, {}, false});
    m.scenes.push_back(s);
    return m;
}

// One scene "s" of `chairs` chairs c00.. and `tables` tables t00.., no pairs, no image files.
inline lookalike::DatasetManifest annotation_manifest(int chairs, int tables) {
    using namespace lookalike;
    DatasetManifest m;
    SceneManifest s;
    s.scene_id = "s";
    auto add = [&](const char* prefix, const char* cls, int n) {
        for (int i = 0; i < n; ++i) {
            char id[16];
            std::snprintf(id, sizeof(id), "%s%02d", prefix, i);
            s.objects.push_back({id, cls, {{std::string(id) + ".png", "", 1.0, "f0"}}});
        }
    };
    add("c", "chair", chairs);
    add("t", "table", tables);
    m.scenes.push_back(s);
    return m;
}

}  // namespace fixture
