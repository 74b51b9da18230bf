#include "lookalike/datamodel.h"

#include <algorithm>
#include <fstream>
#include <map>

#include "lookalike/errors.h"
#include "lookalike/image.h"
#include "lookalike/rng.h"

namespace lookalike {

using nlohmann::json;

const char* to_string(PairLabel label) {
    switch (label) {
        case PairLabel::Identical: return "identical";
        case PairLabel::Similar: return "similar";
        case PairLabel::Different: return "different";
        case PairLabel::Unknown: return "unknown";
    }
    return "unknown";
}

const char* to_string(SimilarityType type) {
    switch (type) {
        case SimilarityType::Shape: return "shape";
        case SimilarityType::Articulated: return "articulated";
        case SimilarityType::Mirrored: return "mirrored";
        case SimilarityType::Deformable: return "deformable";
        case SimilarityType::TextureColor: return "texture_color";
    }
    return "shape";
}

const char* to_string(Split split) { return split == Split::Train ? "train" : "val"; }

PairLabel parse_pair_label(const std::string& text) {
    if (text == "identical") return PairLabel::Identical;
    if (text == "similar") return PairLabel::Similar;
    if (text == "different") return PairLabel::Different;
    if (text == "unknown") return PairLabel::Unknown;
    fail(ErrorKind::Schema, "unknown pair label '" + text + "'");
}

SimilarityType parse_similarity_type(const std::string& text) {
    if (text == "shape") return SimilarityType::Shape;
    if (text == "articulated") return SimilarityType::Articulated;
    if (text == "mirrored") return SimilarityType::Mirrored;
    if (text == "deformable") return SimilarityType::Deformable;
    if (text == "texture_color") return SimilarityType::TextureColor;
    fail(ErrorKind::Schema, "unknown similarity type '" + text + "'");
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::Train;
    if (text == "val") return Split::Val;
    fail(ErrorKind::Schema, "unknown split '" + text + "'");
}

PairKey::PairKey(std::string x, std::string y) : a(std::move(x)), b(std::move(y)) {
    if (b < a) std::swap(a, b);
}

const ObjectInstance* SceneManifest::find_object(const std::string& object_id) const {
    for (const auto& object : objects)
        if (object.object_id == object_id) return &object;
    return nullptr;
}

std::vector<PairKey> SceneManifest::intra_class_pairs() const {
    std::vector<PairKey> keys;
    for (size_t i = 0; i < objects.size(); ++i)
        for (size_t j = i + 1; j < objects.size(); ++j)
            if (objects[i].semantic_class == objects[j].semantic_class)
                keys.emplace_back(objects[i].object_id, objects[j].object_id);
    std::sort(keys.begin(), keys.end());
    return keys;
}

const SceneManifest* DatasetManifest::find_scene(const std::string& scene_id) const {
    for (const auto& scene : scenes)
        if (scene.scene_id == scene_id) return &scene;
    return nullptr;
}

namespace {

bool view_order(const ViewCrop& x, const ViewCrop& y) {
    if (x.visibility != y.visibility) return x.visibility > y.visibility;
    return x.source_frame_id < y.source_frame_id;
}

template <typename T>
T required(const json& doc, const char* key, const std::string& where) {
    if (!doc.is_object() || !doc.contains(key)) fail(ErrorKind::Schema, where + ": missing field '" + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, where + ": field '" + key + "' has wrong type");
    }
}

std::string pair_name(const std::string& a, const std::string& b) { return "(" + a + "," + b + ")"; }

}  // namespace

json pair_to_json(const PairRecord& pair) {
    json types = json::array();
    for (auto type : pair.similarity_types) types.push_back(to_string(type));
    return json{{"a", pair.a},
                {"b", pair.b},
                {"label", to_string(pair.label)},
                {"similarity_types", types},
                {"synthetic", pair.synthetic}};
}

PairRecord pair_from_json(const json& doc) {
    PairRecord pair;
    pair.a = required<std::string>(doc, "a", "pair");
    pair.b = required<std::string>(doc, "b", "pair");
    pair.label = parse_pair_label(required<std::string>(doc, "label", "pair " + pair_name(pair.a, pair.b)));
    if (doc.contains("similarity_types")) {
        if (!doc["similarity_types"].is_array()) fail(ErrorKind::Schema, "similarity_types must be an array");
        for (const auto& t : doc["similarity_types"]) {
            if (!t.is_string()) fail(ErrorKind::Schema, "similarity type must be a string");
            pair.similarity_types.insert(parse_similarity_type(t.get<std::string>()));
        }
    }
    if (doc.contains("synthetic")) {
        if (!doc["synthetic"].is_boolean()) fail(ErrorKind::Schema, "synthetic must be a boolean");
        pair.synthetic = doc["synthetic"].get<bool>();
    }
    if (pair.b < pair.a) std::swap(pair.a, pair.b);
    return pair;
}

DatasetManifest manifest_from_json(const json& doc, const std::filesystem::path& root, const LoadOptions& options) {
    if (!doc.is_object()) fail(ErrorKind::Schema, "manifest must be an object");
    DatasetManifest manifest;
    manifest.root = root;
    manifest.split = parse_split(required<std::string>(doc, "split", "manifest"));
    if (!doc.contains("scenes") || !doc["scenes"].is_array()) fail(ErrorKind::Schema, "manifest: 'scenes' must be an array");

    for (const auto& scene_doc : doc["scenes"]) {
        SceneManifest scene;
        scene.scene_id = required<std::string>(scene_doc, "scene_id", "scene");
        const std::string where = "scene " + scene.scene_id;
        if (!scene_doc.contains("objects") || !scene_doc["objects"].is_array())
            fail(ErrorKind::Schema, where + ": 'objects' must be an array");
        for (const auto& object_doc : scene_doc["objects"]) {
            ObjectInstance object;
            object.object_id = required<std::string>(object_doc, "object_id", where + " object");
            object.semantic_class = required<std::string>(object_doc, "semantic_class", "object " + object.object_id);
            if (!object_doc.contains("views") || !object_doc["views"].is_array())
                fail(ErrorKind::Schema, "object " + object.object_id + ": 'views' must be an array");
            for (const auto& view_doc : object_doc["views"]) {
                ViewCrop view;
                const std::string vwhere = "object " + object.object_id + " view";
                view.image = required<std::string>(view_doc, "image", vwhere);
                view.mask = required<std::string>(view_doc, "mask", vwhere);
                view.visibility = required<double>(view_doc, "visibility", vwhere);
                view.source_frame_id = required<std::string>(view_doc, "source_frame_id", vwhere);
                object.views.push_back(std::move(view));
            }
            std::stable_sort(object.views.begin(), object.views.end(), view_order);
            scene.objects.push_back(std::move(object));
        }
        if (!scene_doc.contains("pairs") || !scene_doc["pairs"].is_array())
            fail(ErrorKind::Schema, where + ": 'pairs' must be an array");
        for (const auto& pair_doc : scene_doc["pairs"]) scene.pairs.push_back(pair_from_json(pair_doc));
        manifest.scenes.push_back(std::move(scene));
    }

    validate_manifest(manifest);

    if (options.check_files) {
        for (const auto& scene : manifest.scenes)
            for (const auto& object : scene.objects)
                for (const auto& view : object.views) {
                    for (const auto& rel : {view.image, view.mask})
                        if (!std::filesystem::exists(manifest.resolve(rel)))
                            fail(ErrorKind::MissingFile, "object " + object.object_id + ": " + manifest.resolve(rel).string());
                    if (options.check_image_sizes) {
                        const Image image = read_image(manifest.resolve(view.image));
                        const Image mask = read_image(manifest.resolve(view.mask));
                        if (!image.same_size(mask))
                            fail(ErrorKind::Invariant, "object " + object.object_id + ": mask size differs from image " + view.image);
                    }
                }
    }
    return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::MissingFile, "manifest not found: " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, "malformed manifest " + path.string() + ": " + e.what());
    }
    return manifest_from_json(doc, path.parent_path(), options);
}

json manifest_to_json(const DatasetManifest& manifest) {
    json scenes = json::array();
    for (const auto& scene : manifest.scenes) {
        json objects = json::array();
        for (const auto& object : scene.objects) {
            json views = json::array();
            for (const auto& view : object.views)
                views.push_back({{"image", view.image},
                                 {"mask", view.mask},
                                 {"visibility", view.visibility},
                                 {"source_frame_id", view.source_frame_id}});
            objects.push_back({{"object_id", object.object_id}, {"semantic_class", object.semantic_class}, {"views", views}});
        }
        json pairs = json::array();
        for (const auto& pair : scene.pairs) pairs.push_back(pair_to_json(pair));
        scenes.push_back({{"scene_id", scene.scene_id}, {"objects", objects}, {"pairs", pairs}});
    }
    return json{{"split", to_string(manifest.split)}, {"scenes", scenes}};
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write manifest " + path.string());
    out << manifest_to_json(manifest).dump(1) << "\n";
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

void validate_manifest(const DatasetManifest& manifest) {
    std::set<std::string> scene_ids;
    for (const auto& scene : manifest.scenes) {
        if (!scene_ids.insert(scene.scene_id).second) fail(ErrorKind::Invariant, "duplicate scene_id " + scene.scene_id);
        std::map<std::string, const ObjectInstance*> objects;
        for (const auto& object : scene.objects) {
            if (!objects.emplace(object.object_id, &object).second)
                fail(ErrorKind::Invariant, "scene " + scene.scene_id + ": duplicate object_id " + object.object_id);
            if (object.views.empty()) fail(ErrorKind::Invariant, "object " + object.object_id + " has no views");
            for (const auto& view : object.views)
                if (!(view.visibility >= 0.0 && view.visibility <= 1.0))
                    fail(ErrorKind::Invariant, "object " + object.object_id + ": visibility outside [0,1]");
        }
        std::set<PairKey> seen;
        for (const auto& pair : scene.pairs) {
            const std::string name = pair_name(pair.a, pair.b);
            if (pair.a == pair.b) fail(ErrorKind::Invariant, "self-pair " + name);
            if (pair.b < pair.a) fail(ErrorKind::Invariant, "pair " + name + " not in canonical order");
            const auto ia = objects.find(pair.a);
            const auto ib = objects.find(pair.b);
            if (ia == objects.end() || ib == objects.end())
                fail(ErrorKind::Invariant, "pair " + name + " references a missing object");
            // Synthetic negatives are the one sanctioned exception to the intra-class rule.
            const bool cross_ok = pair.synthetic && pair.label == PairLabel::Different;
            if (ia->second->semantic_class != ib->second->semantic_class && !cross_ok)
                fail(ErrorKind::Invariant, "cross-class pair " + name);
            if (!pair.similarity_types.empty() && pair.label != PairLabel::Similar)
                fail(ErrorKind::Invariant, "pair " + name + " carries similarity types but is not similar");
            if (!seen.insert(PairKey(pair.a, pair.b)).second) fail(ErrorKind::Invariant, "duplicate pair " + name);
        }
    }
}

std::vector<ViewCrop> select_top_views(const ObjectInstance& object, int k) {
    if (k < 1) fail(ErrorKind::Precondition, "select_top_views requires k >= 1");
    std::vector<ViewCrop> views = object.views;
    std::stable_sort(views.begin(), views.end(), view_order);
    if (static_cast<int>(views.size()) > k) views.resize(k);
    return views;
}

DatasetManifest complete_negative_pairs(const DatasetManifest& manifest, uint64_t seed, CompletionReport* report) {
    DatasetManifest out = manifest;
    CompletionReport local;
    Rng rng(seed);
    for (auto& scene : out.scenes) {
        std::set<std::string> has_negative;
        std::set<PairKey> existing;
        for (const auto& pair : scene.pairs) {
            existing.insert(PairKey(pair.a, pair.b));
            if (pair.label == PairLabel::Similar || pair.label == PairLabel::Different) {
                has_negative.insert(pair.a);
                has_negative.insert(pair.b);
            }
        }
        const std::vector<PairRecord> annotated = scene.pairs;
        for (const auto& pair : annotated) {
            if (pair.label != PairLabel::Identical) continue;
            if (has_negative.count(pair.a) || has_negative.count(pair.b)) continue;
            const std::string& cls = scene.find_object(pair.a)->semantic_class;
            std::vector<std::string> candidates;
            for (const auto& object : scene.objects)
                if (object.semantic_class != cls) candidates.push_back(object.object_id);
            if (candidates.empty()) {
                ++local.uncompleted;
                continue;
            }
            for (const std::string& anchor : {pair.a, pair.b}) {
                const std::string& other = candidates[rng.below(candidates.size())];
                PairKey key(anchor, other);
                if (!existing.insert(key).second) continue;
                PairRecord added;
                added.a = key.a;
                added.b = key.b;
                added.label = PairLabel::Different;
                added.synthetic = true;
                scene.pairs.push_back(std::move(added));
                ++local.added;
            }
        }
    }
    if (report) *report = local;
    return out;
}

}  // namespace lookalike
