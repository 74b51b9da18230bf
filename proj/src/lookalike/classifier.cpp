#include "lookalike/classifier.h"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "lookalike/errors.h"

namespace lookalike {

PairLabel classify(double s, const Thresholds& t) {
    if (!(s >= 0.0 && s <= 1.0)) fail(ErrorKind::Domain, "score " + std::to_string(s) + " outside [0,1]");
    if (s >= t.t2) return PairLabel::Identical;
    if (s >= t.t1) return PairLabel::Similar;
    return PairLabel::Different;
}

DisjointSet::DisjointSet(size_t n) : parent_(n), count_(n, 1) { std::iota(parent_.begin(), parent_.end(), size_t{0}); }

size_t DisjointSet::add() {
    parent_.push_back(parent_.size());
    count_.push_back(1);
    return parent_.size() - 1;
}

size_t DisjointSet::find(size_t x) {
    while (parent_[x] != x) {
        parent_[x] = parent_[parent_[x]];
        x = parent_[x];
    }
    return x;
}

bool DisjointSet::unite(size_t a, size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (count_[a] < count_[b]) std::swap(a, b);
    parent_[b] = a;
    count_[a] += count_[b];
    return true;
}

SceneGrouping group_scene(const std::vector<SimilarityResult>& results, const Thresholds& t) {
    std::set<PairKey> seen;
    std::map<std::string, size_t> index;
    DisjointSet sets;
    auto node = [&](const std::string& id) {
        const auto [it, inserted] = index.emplace(id, 0);
        if (inserted) it->second = sets.add();
        return it->second;
    };
    std::vector<std::pair<PairKey, PairLabel>> labeled;
    for (const auto& r : results) {
        PairKey key(r.a, r.b);
        if (!seen.insert(key).second) fail(ErrorKind::DuplicatePair, "pair (" + key.a + "," + key.b + ") scored twice");
        labeled.emplace_back(key, classify(r.score, t));
    }
    for (const auto& [key, label] : labeled)
        if (label == PairLabel::Identical) sets.unite(node(key.a), node(key.b));

    SceneGrouping out;
    std::map<size_t, std::vector<std::string>> members;
    for (const auto& [id, i] : index) members[sets.find(i)].push_back(id);  // ids arrive sorted
    for (auto& [root, ids] : members)
        if (ids.size() >= 2) out.identical_groups.push_back(std::move(ids));
    std::sort(out.identical_groups.begin(), out.identical_groups.end());

    for (const auto& [key, label] : labeled) {
        if (label != PairLabel::Similar) continue;
        const auto ia = index.find(key.a);
        const auto ib = index.find(key.b);
        if (ia != index.end() && ib != index.end() && sets.find(ia->second) == sets.find(ib->second)) continue;
        out.similar_pairs.emplace_back(key.a, key.b);
    }
    std::sort(out.similar_pairs.begin(), out.similar_pairs.end());
    return out;
}

nlohmann::json prediction_document(const std::string& scene_id, const std::vector<SimilarityResult>& results,
                                   const Thresholds& t) {
    const SceneGrouping grouping = group_scene(results, t);
    std::vector<SimilarityResult> sorted = results;
    for (auto& r : sorted)
        if (r.b < r.a) std::swap(r.a, r.b);
    std::sort(sorted.begin(), sorted.end(),
              [](const SimilarityResult& x, const SimilarityResult& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& r : sorted)
        pairs.push_back({{"a", r.a}, {"b", r.b}, {"score", r.score}, {"label", to_string(classify(r.score, t))}});
    nlohmann::json similar = nlohmann::json::array();
    for (const auto& [a, b] : grouping.similar_pairs) similar.push_back({a, b});
    return {{"scene_id", scene_id},
            {"pairs", pairs},
            {"identical_groups", grouping.identical_groups},
            {"similar_pairs", similar}};
}

PredictionDocument prediction_from_json(const nlohmann::json& doc) {
    PredictionDocument out;
    try {
        out.scene_id = doc.at("scene_id").get<std::string>();
        for (const auto& p : doc.at("pairs")) {
            PredictedPair pair;
            PairKey key(p.at("a").get<std::string>(), p.at("b").get<std::string>());
            pair.a = key.a;
            pair.b = key.b;
            pair.score = p.value("score", 0.0);
            pair.label = parse_pair_label(p.at("label").get<std::string>());
            out.pairs.push_back(std::move(pair));
        }
        if (doc.contains("identical_groups"))
            out.grouping.identical_groups = doc.at("identical_groups").get<std::vector<std::vector<std::string>>>();
        if (doc.contains("similar_pairs"))
            for (const auto& p : doc.at("similar_pairs"))
                out.grouping.similar_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("prediction document: ") + e.what());
    }
    return out;
}

}  // namespace lookalike
