#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lookalike/datamodel.h"
#include "lookalike/similarity.h"

namespace lookalike {

// Id if s >= t2, Sim if t1 <= s < t2, Diff below t1. Throws Domain outside [0,1].
PairLabel classify(double s, const Thresholds& t);

// Disjoint-set forest with path halving and union by size.
class DisjointSet {
public:
    explicit DisjointSet(size_t n = 0);
    size_t add();
    size_t find(size_t x);
    bool unite(size_t a, size_t b);  // false when already joined
    size_t size() const { return parent_.size(); }

private:
    std::vector<size_t> parent_;
    std::vector<size_t> count_;
};

struct SceneGrouping {
    std::vector<std::vector<std::string>> identical_groups;  // each sorted, ordered by first member
    std::vector<std::pair<std::string, std::string>> similar_pairs;
};

SceneGrouping group_scene(const std::vector<SimilarityResult>& results, const Thresholds& t);

// {"scene_id","pairs":[{"a","b","score","label"}],"identical_groups","similar_pairs"}
nlohmann::json prediction_document(const std::string& scene_id, const std::vector<SimilarityResult>& results,
                                   const Thresholds& t);

struct PredictedPair {
    std::string a;
    std::string b;
    double score = 0.0;
    PairLabel label = PairLabel::Unknown;
};

struct PredictionDocument {
    std::string scene_id;
    std::vector<PredictedPair> pairs;
    SceneGrouping grouping;
};

PredictionDocument prediction_from_json(const nlohmann::json& doc);

}  // namespace lookalike
