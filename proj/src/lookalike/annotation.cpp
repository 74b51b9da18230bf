#include "lookalike/annotation.h"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>

#include "lookalike/errors.h"

namespace lookalike {

using json = nlohmann::json;

const char* to_string(EventKind kind) {
    switch (kind) {
        case EventKind::Label: return "label";
        case EventKind::Merge: return "merge";
        case EventKind::Undo: return "undo";
    }
    return "?";
}

namespace {

EventKind parse_event_kind(const std::string& text) {
    if (text == "label") return EventKind::Label;
    if (text == "merge") return EventKind::Merge;
    if (text == "undo") return EventKind::Undo;
    fail(ErrorKind::Schema, "unknown event kind '" + text + "'");
}

}  // namespace

json to_json(const AnnotationEvent& event) {
    json doc{{"event_id", event.event_id}, {"timestamp", event.timestamp}, {"kind", to_string(event.kind)}};
    if (event.kind == EventKind::Undo) {
        doc["target"] = event.target;
        return doc;
    }
    doc["scene_id"] = event.scene_id;
    doc["a"] = event.a;
    doc["b"] = event.b;
    if (event.kind == EventKind::Label) {
        doc["label"] = to_string(event.label);
        json types = json::array();
        for (auto t : event.similarity_types) types.push_back(to_string(t));
        doc["similarity_types"] = types;
    }
    return doc;
}

AnnotationEvent event_from_json(const json& doc) {
    AnnotationEvent event;
    try {
        event.event_id = doc.at("event_id").get<long>();
        event.timestamp = doc.value("timestamp", std::string());
        event.kind = parse_event_kind(doc.at("kind").get<std::string>());
        if (event.kind == EventKind::Undo) {
            event.target = doc.at("target").get<long>();
        } else {
            event.scene_id = doc.at("scene_id").get<std::string>();
            event.a = doc.at("a").get<std::string>();
            event.b = doc.at("b").get<std::string>();
        }
        if (event.kind == EventKind::Label) {
            event.label = parse_pair_label(doc.at("label").get<std::string>());
            for (const auto& t : doc.value("similarity_types", json::array()))
                event.similarity_types.insert(parse_similarity_type(t.get<std::string>()));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("annotation event: ") + e.what());
    }
    return event;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t secs = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buffer[40];
    std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof(out), "%s.%03dZ", buffer, static_cast<int>(ms));
    return out;
}

// --- log ---------------------------------------------------------------------------------

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path)) {
    std::string content;
    {
        std::ifstream in(path_, std::ios::binary);
        if (in) content.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    size_t keep = 0;
    size_t pos = 0;
    int line_no = 0;
    while (pos < content.size()) {
        const size_t nl = content.find('\n', pos);
        if (nl == std::string::npos) break;  // torn tail
        ++line_no;
        const std::string line = content.substr(pos, nl - pos);
        pos = nl + 1;
        keep = pos;
        if (line.empty()) continue;
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::exception& e) {
            fail(ErrorKind::Schema, path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        AnnotationEvent event = event_from_json(doc);
        if (!events_.empty() && event.event_id <= events_.back().event_id)
            fail(ErrorKind::Invariant, path_.string() + ":" + std::to_string(line_no) + ": event ids not increasing");
        events_.push_back(std::move(event));
    }

    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorKind::Io, "cannot open log " + path_.string() + ": " + std::strerror(errno));
    if (keep < content.size() && ::ftruncate(fd_, static_cast<off_t>(keep)) != 0)
        fail(ErrorKind::Io, "cannot truncate torn log tail: " + std::string(std::strerror(errno)));
}

EventLog::~EventLog() {
    if (fd_ >= 0) ::close(fd_);
}

void EventLog::append(const AnnotationEvent& event) {
    const std::string line = to_json(event).dump() + "\n";
    size_t written = 0;
    while (written < line.size()) {
        const ssize_t n = ::write(fd_, line.data() + written, line.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            fail(ErrorKind::Io, "log append failed: " + std::string(std::strerror(errno)));
        }
        written += static_cast<size_t>(n);
    }
    if (::fsync(fd_) != 0) fail(ErrorKind::Io, "log fsync failed: " + std::string(std::strerror(errno)));
    events_.push_back(event);
}

// --- state -------------------------------------------------------------------------------

AnnotationState::AnnotationState(const DatasetManifest& manifest) : manifest_(manifest) {
    for (size_t i = 0; i < manifest_.scenes.size(); ++i) {
        const SceneManifest& sm = manifest_.scenes[i];
        Scene s;
        s.manifest_index = i;
        for (const auto& object : sm.objects) s.index.emplace(object.object_id, s.index.size());
        s.queue = sm.intra_class_pairs();
        s.candidates.insert(s.queue.begin(), s.queue.end());
        s.parent.resize(s.index.size());
        for (size_t x = 0; x < s.parent.size(); ++x) s.parent[x] = x;
        scenes_.emplace(sm.scene_id, std::move(s));
    }
}

const AnnotationState::Scene& AnnotationState::scene(const std::string& scene_id) const {
    const auto it = scenes_.find(scene_id);
    if (it == scenes_.end()) fail(ErrorKind::NotFound, "unknown scene " + scene_id);
    return it->second;
}

AnnotationState::Scene& AnnotationState::scene(const std::string& scene_id) {
    return const_cast<Scene&>(static_cast<const AnnotationState*>(this)->scene(scene_id));
}

size_t AnnotationState::root(const Scene& s, size_t x) {
    while (s.parent[x] != x) x = s.parent[x];
    return x;
}

// Joining two groups must not imply Identical for a pair already labeled otherwise.
void AnnotationState::check_join(const Scene& s, size_t ra, size_t rb) const {
    if (ra == rb) return;
    for (const auto& [key, res] : s.labels) {
        if (res.label == PairLabel::Identical) continue;
        const size_t x = root(s, s.index.at(key.a));
        const size_t y = root(s, s.index.at(key.b));
        if ((x == ra && y == rb) || (x == rb && y == ra))
            fail(ErrorKind::Conflict, "joining the groups contradicts the " + std::string(to_string(res.label)) +
                                          " label on " + key.a + "/" + key.b);
    }
}

void AnnotationState::check(const AnnotationEvent& event) const {
    if (!events_.empty() && event.event_id <= events_.back().event_id)
        fail(ErrorKind::Invariant, "event ids must increase");
    if (event.kind == EventKind::Undo) {
        if (event.target != undo_target())
            fail(event.target == 0 || undo_target() == 0 ? ErrorKind::NothingToUndo : ErrorKind::Validation,
                 "undo must target the latest surviving label or merge");
        return;
    }
    const Scene& s = scene(event.scene_id);
    if (event.a == event.b) fail(ErrorKind::Validation, "a pair needs two distinct objects");
    const auto ia = s.index.find(event.a);
    const auto ib = s.index.find(event.b);
    if (ia == s.index.end() || ib == s.index.end())
        fail(ErrorKind::NotFound, "unknown object in scene " + event.scene_id);
    const PairKey key(event.a, event.b);
    if (!s.candidates.count(key))
        fail(ErrorKind::Validation, "objects " + key.a + " and " + key.b + " do not share a semantic class");
    const size_t ra = root(s, ia->second);
    const size_t rb = root(s, ib->second);

    if (event.kind == EventKind::Merge) {
        check_join(s, ra, rb);
        return;
    }
    const bool similar = event.label == PairLabel::Similar;
    if (!similar && !event.similarity_types.empty())
        fail(ErrorKind::Validation, "similarity types are only allowed with the similar label");
    if (similar && event.similarity_types.empty())
        fail(ErrorKind::Validation, "the similar label requires at least one similarity type");
    if (s.labels.count(key)) fail(ErrorKind::Conflict, "pair " + key.a + "/" + key.b + " is already labeled");
    if (ra == rb) fail(ErrorKind::Conflict, "pair " + key.a + "/" + key.b + " is already implied identical");
    if (event.label == PairLabel::Identical) check_join(s, ra, rb);
}

void AnnotationState::fold(const AnnotationEvent& event) {
    Scene& s = scene(event.scene_id);
    const size_t ra = root(s, s.index.at(event.a));
    const size_t rb = root(s, s.index.at(event.b));
    if (event.kind == EventKind::Label) {
        s.labels[PairKey(event.a, event.b)] = {event.label, event.similarity_types, false, event.event_id};
        if (event.label != PairLabel::Identical) return;
    }
    // Smaller root under larger keeps the trees shallow; ties by index for determinism.
    if (ra != rb) s.parent[std::max(ra, rb)] = std::min(ra, rb);
}

void AnnotationState::rebuild() {
    for (auto& [id, s] : scenes_) {
        s.labels.clear();
        for (size_t i = 0; i < s.parent.size(); ++i) s.parent[i] = i;
    }
    for (const auto& event : events_)
        if (event.kind != EventKind::Undo && !undone_.count(event.event_id)) fold(event);
}

void AnnotationState::apply(const AnnotationEvent& event) {
    check(event);
    events_.push_back(event);
    if (event.kind == EventKind::Undo) {
        undone_.insert(event.target);
        rebuild();
    } else {
        fold(event);
    }
}

AnnotationState AnnotationState::replay(const DatasetManifest& manifest, const std::vector<AnnotationEvent>& events) {
    AnnotationState state(manifest);
    for (const auto& event : events) state.apply(event);
    return state;
}

void AnnotationState::set_queue(const std::string& scene_id, const std::vector<PairKey>& order) {
    Scene& s = scene(scene_id);
    std::vector<PairKey> queue;
    std::set<PairKey> seen;
    for (const auto& key : order)
        if (s.candidates.count(key) && seen.insert(key).second) queue.push_back(key);
    for (const auto& key : manifest_.scenes[s.manifest_index].intra_class_pairs())
        if (!seen.count(key)) queue.push_back(key);
    s.queue = std::move(queue);
}

std::optional<AnnotationState::Resolution> AnnotationState::resolution(const std::string& scene_id,
                                                                       const PairKey& pair) const {
    const Scene& s = scene(scene_id);
    const auto it = s.labels.find(pair);
    if (it != s.labels.end()) return it->second;
    const auto ia = s.index.find(pair.a);
    const auto ib = s.index.find(pair.b);
    if (ia == s.index.end() || ib == s.index.end()) fail(ErrorKind::NotFound, "unknown object in scene " + scene_id);
    if (root(s, ia->second) == root(s, ib->second)) return Resolution{PairLabel::Identical, {}, true, 0};
    return std::nullopt;
}

PairKey AnnotationState::next_pair(const std::string& scene_id) const {
    const Scene& s = scene(scene_id);
    for (const auto& key : s.queue) {
        if (s.labels.count(key)) continue;
        if (root(s, s.index.at(key.a)) == root(s, s.index.at(key.b))) continue;
        return key;
    }
    fail(ErrorKind::NoPairsRemaining, "scene " + scene_id + " has no unlabeled pairs");
}

bool AnnotationState::same_group(const std::string& scene_id, const std::string& a, const std::string& b) const {
    const Scene& s = scene(scene_id);
    const auto ia = s.index.find(a);
    const auto ib = s.index.find(b);
    if (ia == s.index.end() || ib == s.index.end()) fail(ErrorKind::NotFound, "unknown object in scene " + scene_id);
    return root(s, ia->second) == root(s, ib->second);
}

int AnnotationState::group_size(const std::string& scene_id, const std::string& object_id) const {
    const Scene& s = scene(scene_id);
    const auto it = s.index.find(object_id);
    if (it == s.index.end()) fail(ErrorKind::NotFound, "unknown object " + object_id);
    const size_t r = root(s, it->second);
    int n = 0;
    for (size_t i = 0; i < s.parent.size(); ++i) n += root(s, i) == r;
    return n;
}

std::vector<std::vector<std::string>> AnnotationState::groups(const std::string& scene_id) const {
    const Scene& s = scene(scene_id);
    std::map<size_t, std::vector<std::string>> by_root;
    for (const auto& [id, i] : s.index) by_root[root(s, i)].push_back(id);
    std::vector<std::vector<std::string>> out;
    for (auto& [r, members] : by_root) {
        if (members.size() < 2) continue;
        std::sort(members.begin(), members.end());
        out.push_back(std::move(members));
    }
    std::sort(out.begin(), out.end());
    return out;
}

SceneProgress AnnotationState::progress(const std::string& scene_id) const {
    const Scene& s = scene(scene_id);
    SceneProgress p;
    p.scene_id = scene_id;
    p.total = static_cast<int>(s.queue.size());
    for (const auto& key : s.queue) {
        if (s.labels.count(key))
            ++p.labeled;
        else if (root(s, s.index.at(key.a)) == root(s, s.index.at(key.b)))
            ++p.auto_resolved;
    }
    p.remaining = p.total - p.labeled - p.auto_resolved;
    return p;
}

long AnnotationState::undo_target() const {
    for (auto it = events_.rbegin(); it != events_.rend(); ++it)
        if (it->kind != EventKind::Undo && !undone_.count(it->event_id)) return it->event_id;
    return 0;
}

DatasetManifest AnnotationState::export_manifest() const {
    DatasetManifest out = manifest_;
    for (auto& sm : out.scenes) {
        sm.pairs.clear();
        for (const auto& key : sm.intra_class_pairs()) {
            const auto res = resolution(sm.scene_id, key);
            if (!res) continue;
            PairRecord record;
            record.a = key.a;
            record.b = key.b;
            record.label = res->label;
            record.similarity_types = res->similarity_types;
            sm.pairs.push_back(std::move(record));
        }
    }
    return out;
}

std::vector<PairKey> review_order(const PredictionDocument& predictions, const Thresholds& thresholds) {
    std::vector<std::pair<double, PairKey>> scored;
    for (const auto& p : predictions.pairs) {
        const double ambiguity = std::min(std::abs(p.score - thresholds.t1), std::abs(p.score - thresholds.t2));
        scored.emplace_back(ambiguity, PairKey(p.a, p.b));
    }
    std::sort(scored.begin(), scored.end());
    std::vector<PairKey> order;
    for (auto& [ambiguity, key] : scored) order.push_back(std::move(key));
    return order;
}

// --- service -----------------------------------------------------------------------------

AnnotationService::AnnotationService(DatasetManifest manifest, const std::filesystem::path& log_path, Clock clock)
    : state_(manifest), log_(log_path), clock_(clock ? std::move(clock) : Clock(utc_timestamp)) {
    for (const auto& event : log_.events()) state_.apply(event);
}

void AnnotationService::enable_review(const std::vector<PredictionDocument>& predictions, const Thresholds& thresholds) {
    std::unique_lock lock(mutex_);
    for (const auto& doc : predictions) state_.set_queue(doc.scene_id, review_order(doc, thresholds));
}

std::vector<std::string> AnnotationService::scene_ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> ids;
    for (const auto& scene : state_.manifest().scenes) ids.push_back(scene.scene_id);
    return ids;
}

namespace {

json progress_to_json(const SceneProgress& p) {
    return {{"scene_id", p.scene_id},
            {"total", p.total},
            {"labeled", p.labeled},
            {"auto_resolved", p.auto_resolved},
            {"remaining", p.remaining}};
}

json resolution_json(const std::optional<AnnotationState::Resolution>& res) {
    if (!res) return {{"label", nullptr}, {"similarity_types", json::array()}, {"implied", false}};
    json types = json::array();
    for (auto t : res->similarity_types) types.push_back(to_string(t));
    return {{"label", to_string(res->label)}, {"similarity_types", types}, {"implied", res->implied}};
}

}  // namespace

json AnnotationService::scenes_json() const {
    std::shared_lock lock(mutex_);
    json scenes = json::array();
    for (const auto& scene : state_.manifest().scenes) {
        json entry = progress_to_json(state_.progress(scene.scene_id));
        entry["objects"] = scene.objects.size();
        scenes.push_back(entry);
    }
    return {{"scenes", scenes}};
}

json AnnotationService::next_pair(const std::string& scene_id) const {
    std::shared_lock lock(mutex_);
    const PairKey key = state_.next_pair(scene_id);
    const SceneManifest* scene = state_.manifest().find_scene(scene_id);
    auto object_json = [&](const std::string& id) {
        const ObjectInstance* object = scene->find_object(id);
        json crops = json::array();
        for (const auto& view : select_top_views(*object, 3))
            crops.push_back({{"image", "/files/" + view.image},
                             {"mask", view.mask.empty() ? json(nullptr) : json("/files/" + view.mask)},
                             {"visibility", view.visibility},
                             {"source_frame_id", view.source_frame_id}});
        return json{{"object_id", id},
                    {"semantic_class", object->semantic_class},
                    {"crops", crops},
                    {"group_size", state_.group_size(scene_id, id)}};
    };
    return {{"scene_id", scene_id},
            {"a", object_json(key.a)},
            {"b", object_json(key.b)},
            {"progress", progress_to_json(state_.progress(scene_id))}};
}

AnnotationEvent AnnotationService::commit(AnnotationEvent event) {
    std::unique_lock lock(mutex_);
    event.event_id = state_.events().empty() ? 1 : state_.events().back().event_id + 1;
    event.timestamp = clock_();
    if (event.kind == EventKind::Undo) {
        event.target = state_.undo_target();
        if (event.target == 0) fail(ErrorKind::NothingToUndo, "no label or merge left to undo");
    }
    state_.check(event);
    log_.append(event);
    state_.apply(event);
    return event;
}

AnnotationEvent AnnotationService::submit_label(const std::string& scene_id, const std::string& a, const std::string& b,
                                                PairLabel label, const std::set<SimilarityType>& types) {
    AnnotationEvent event;
    event.kind = EventKind::Label;
    event.scene_id = scene_id;
    const PairKey key(a, b);
    event.a = key.a;
    event.b = key.b;
    event.label = label;
    event.similarity_types = types;
    return commit(std::move(event));
}

AnnotationEvent AnnotationService::merge(const std::string& scene_id, const std::string& a, const std::string& b) {
    AnnotationEvent event;
    event.kind = EventKind::Merge;
    event.scene_id = scene_id;
    const PairKey key(a, b);
    event.a = key.a;
    event.b = key.b;
    return commit(std::move(event));
}

AnnotationEvent AnnotationService::undo() {
    AnnotationEvent event;
    event.kind = EventKind::Undo;
    return commit(std::move(event));
}

json AnnotationService::progress_json() const {
    std::shared_lock lock(mutex_);
    json scenes = json::array();
    SceneProgress total;
    for (const auto& scene : state_.manifest().scenes) {
        const SceneProgress p = state_.progress(scene.scene_id);
        total.total += p.total;
        total.labeled += p.labeled;
        total.auto_resolved += p.auto_resolved;
        total.remaining += p.remaining;
        scenes.push_back(progress_to_json(p));
    }
    json doc = progress_to_json(total);
    doc.erase("scene_id");
    doc["events"] = state_.events().size();
    doc["scenes"] = scenes;
    return doc;
}

json AnnotationService::export_json() const {
    std::shared_lock lock(mutex_);
    return manifest_to_json(state_.export_manifest());
}

json AnnotationService::pair_state(const std::string& scene_id, const std::string& a, const std::string& b) const {
    std::shared_lock lock(mutex_);
    const PairKey key(a, b);
    json doc = resolution_json(state_.resolution(scene_id, key));
    doc["scene_id"] = scene_id;
    doc["a"] = key.a;
    doc["b"] = key.b;
    return doc;
}

std::string AnnotationService::scene_of_pair(const std::string& a, const std::string& b) const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> hits;
    for (const auto& scene : state_.manifest().scenes) {
        const ObjectInstance* x = scene.find_object(a);
        const ObjectInstance* y = scene.find_object(b);
        if (x && y && a != b && x->semantic_class == y->semantic_class) hits.push_back(scene.scene_id);
    }
    if (hits.empty()) fail(ErrorKind::NotFound, "no scene holds the pair " + a + "/" + b);
    if (hits.size() > 1) fail(ErrorKind::Validation, "pair " + a + "/" + b + " exists in several scenes; pass scene_id");
    return hits.front();
}

AnnotationState AnnotationService::snapshot() const {
    std::shared_lock lock(mutex_);
    return state_;
}

}  // namespace lookalike
