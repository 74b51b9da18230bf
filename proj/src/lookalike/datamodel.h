#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace lookalike {

enum class PairLabel { Identical, Similar, Different, Unknown };
enum class SimilarityType { Shape, Articulated, Mirrored, Deformable, TextureColor };
enum class Split { Train, Val };

const char* to_string(PairLabel label);
const char* to_string(SimilarityType type);
const char* to_string(Split split);
PairLabel parse_pair_label(const std::string& text);
SimilarityType parse_similarity_type(const std::string& text);
Split parse_split(const std::string& text);

struct ViewCrop {
    std::string image;  // relative to the manifest root
    std::string mask;
    double visibility = 0.0;
    std::string source_frame_id;
};

struct ObjectInstance {
    std::string object_id;
    std::string semantic_class;
    std::vector<ViewCrop> views;
};

struct PairRecord {
    std::string a;
    std::string b;
    PairLabel label = PairLabel::Unknown;
    std::set<SimilarityType> similarity_types;
    bool synthetic = false;
};

// Unordered pair key in canonical (lexicographically sorted) order.
struct PairKey {
    std::string a;
    std::string b;

    PairKey() = default;
    PairKey(std::string x, std::string y);
    auto operator<=>(const PairKey&) const = default;
};

struct SceneManifest {
    std::string scene_id;
    std::vector<ObjectInstance> objects;
    std::vector<PairRecord> pairs;

    const ObjectInstance* find_object(const std::string& object_id) const;
    // All unordered pairs of distinct objects sharing a semantic class, canonical order.
    std::vector<PairKey> intra_class_pairs() const;
};

struct DatasetManifest {
    Split split = Split::Train;
    std::vector<SceneManifest> scenes;
    std::filesystem::path root;  // directory that relative view paths resolve against

    const SceneManifest* find_scene(const std::string& scene_id) const;
    std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

struct LoadOptions {
    bool check_files = true;
    // Decodes every crop/mask pair to verify matching dimensions.
    bool check_image_sizes = false;
};

DatasetManifest load_manifest(const std::filesystem::path& path, const LoadOptions& options = {});
DatasetManifest manifest_from_json(const nlohmann::json& doc, const std::filesystem::path& root,
                                   const LoadOptions& options = {});
nlohmann::json manifest_to_json(const DatasetManifest& manifest);
nlohmann::json pair_to_json(const PairRecord& pair);
PairRecord pair_from_json(const nlohmann::json& doc);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Checks every documented invariant; throws Error(Invariant) naming the offending record.
void validate_manifest(const DatasetManifest& manifest);

// Deterministic: highest visibility first, ties by source_frame_id ascending.
std::vector<ViewCrop> select_top_views(const ObjectInstance& object, int k);

struct CompletionReport {
    int added = 0;
    int uncompleted = 0;  // identical pairs left without a negative (no out-of-class objects)
};

// Adds synthetic Different pairs (a,c), (b,d) with c, d from other classes of the same scene for
// every Identical pair (a,b) where neither a nor b has an annotated Similar/Different partner.
DatasetManifest complete_negative_pairs(const DatasetManifest& manifest, uint64_t seed,
                                        CompletionReport* report = nullptr);

}  // namespace lookalike
