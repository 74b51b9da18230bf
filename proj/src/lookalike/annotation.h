#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "lookalike/classifier.h"
#include "lookalike/datamodel.h"
#include "lookalike/similarity.h"

namespace lookalike {

enum class EventKind { Label, Merge, Undo };

const char* to_string(EventKind kind);

struct AnnotationEvent {
    long event_id = 0;
    std::string timestamp;
    EventKind kind = EventKind::Label;
    // label and merge
    std::string scene_id;
    std::string a;
    std::string b;
    // label only
    PairLabel label = PairLabel::Unknown;
    std::set<SimilarityType> similarity_types;
    // undo only
    long target = 0;
};

nlohmann::json to_json(const AnnotationEvent& event);
AnnotationEvent event_from_json(const nlohmann::json& doc);

// Append-only JSON-lines file, one event per line, fsync after every append. A torn final
// line left by a crash is dropped (and truncated away) when the file is reopened.
class EventLog {
public:
    explicit EventLog(std::filesystem::path path);
    ~EventLog();
    EventLog(const EventLog&) = delete;
    EventLog& operator=(const EventLog&) = delete;

    const std::vector<AnnotationEvent>& events() const { return events_; }
    void append(const AnnotationEvent& event);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    int fd_ = -1;
    std::vector<AnnotationEvent> events_;
};

struct SceneProgress {
    std::string scene_id;
    int total = 0;
    int labeled = 0;        // explicit label events
    int auto_resolved = 0;  // implied Identical through a shared group
    int remaining = 0;
};

// Pure fold over an event sequence. Annotation starts from scratch: labels already present
// in the manifest are ignored, every intra-class pair is a candidate.
class AnnotationState {
public:
    explicit AnnotationState(const DatasetManifest& manifest);

    // Throws Validation / NotFound / Conflict when `event` cannot follow the current state.
    void check(const AnnotationEvent& event) const;
    // check() then fold. Undo rebuilds the derived state from the surviving events.
    void apply(const AnnotationEvent& event);
    static AnnotationState replay(const DatasetManifest& manifest, const std::vector<AnnotationEvent>& events);

    // Replaces the serving order of one scene (review mode). Pairs missing from `order` keep
    // their canonical position after it.
    void set_queue(const std::string& scene_id, const std::vector<PairKey>& order);

    struct Resolution {
        PairLabel label = PairLabel::Unknown;
        std::set<SimilarityType> similarity_types;
        bool implied = false;  // Identical only through group membership
        long event_id = 0;     // 0 when implied
    };
    std::optional<Resolution> resolution(const std::string& scene_id, const PairKey& pair) const;
    // First pair in queue order that is neither labeled nor implied; throws NoPairsRemaining.
    PairKey next_pair(const std::string& scene_id) const;
    bool same_group(const std::string& scene_id, const std::string& a, const std::string& b) const;
    int group_size(const std::string& scene_id, const std::string& object_id) const;
    // Groups of size >= 2, members sorted, groups ordered by first member.
    std::vector<std::vector<std::string>> groups(const std::string& scene_id) const;
    SceneProgress progress(const std::string& scene_id) const;
    // Latest label/merge event that has not been undone; 0 when none.
    long undo_target() const;

    // Manifest with each scene's pairs replaced by the resolved labels, canonical order.
    DatasetManifest export_manifest() const;

    const DatasetManifest& manifest() const { return manifest_; }
    const std::vector<AnnotationEvent>& events() const { return events_; }

private:
    struct Scene {
        size_t manifest_index = 0;  // into manifest_.scenes; an index keeps copies valid
        std::map<std::string, size_t> index;
        std::vector<PairKey> queue;
        std::set<PairKey> candidates;
        std::map<PairKey, Resolution> labels;
        std::vector<size_t> parent;  // union-find over objects, rebuilt on undo
    };

    const Scene& scene(const std::string& scene_id) const;
    Scene& scene(const std::string& scene_id);
    static size_t root(const Scene& s, size_t x);
    void check_join(const Scene& s, size_t ra, size_t rb) const;
    void fold(const AnnotationEvent& event);
    void rebuild();

    DatasetManifest manifest_;
    std::map<std::string, Scene> scenes_;
    std::vector<AnnotationEvent> events_;
    std::set<long> undone_;
};

// Review-mode order: most ambiguous first, by distance of the score to the nearer threshold.
std::vector<PairKey> review_order(const PredictionDocument& predictions, const Thresholds& thresholds);

// Thread-safe front end: concurrent readers, one writer; every accepted mutation is durable
// before the call returns.
class AnnotationService {
public:
    using Clock = std::function<std::string()>;

    AnnotationService(DatasetManifest manifest, const std::filesystem::path& log_path, Clock clock = {});

    void enable_review(const std::vector<PredictionDocument>& predictions, const Thresholds& thresholds);

    std::vector<std::string> scene_ids() const;
    nlohmann::json scenes_json() const;
    // Pair presentation: both objects with their top-3 crops and current group sizes.
    nlohmann::json next_pair(const std::string& scene_id) const;
    AnnotationEvent submit_label(const std::string& scene_id, const std::string& a, const std::string& b,
                                 PairLabel label, const std::set<SimilarityType>& types);
    AnnotationEvent merge(const std::string& scene_id, const std::string& a, const std::string& b);
    AnnotationEvent undo();
    nlohmann::json progress_json() const;
    nlohmann::json export_json() const;
    // Current resolution of a pair as JSON (label null when unresolved).
    nlohmann::json pair_state(const std::string& scene_id, const std::string& a, const std::string& b) const;
    // Scene holding the intra-class pair (a, b); throws NotFound, or Validation when ambiguous.
    std::string scene_of_pair(const std::string& a, const std::string& b) const;

    AnnotationState snapshot() const;
    const std::filesystem::path& log_path() const { return log_.path(); }

private:
    AnnotationEvent commit(AnnotationEvent event);

    mutable std::shared_mutex mutex_;
    AnnotationState state_;
    EventLog log_;
    Clock clock_;
};

std::string utc_timestamp();

}  // namespace lookalike
