#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lookalike/classifier.h"
#include "lookalike/datamodel.h"

namespace lookalike {

// Counts per (gt, pred) cell over {Identical, Similar, Different, Unknown}.
struct PairConfusion {
    std::array<std::array<long, 4>, 4> counts{};

    void add(PairLabel gt, PairLabel pred, long n = 1);
    long total() const;
    PairConfusion& operator+=(const PairConfusion& other);
};

struct IoUReport {
    double iou_id = 0.0;
    double iou_sim = 0.0;
    double iou_diff = 0.0;
    double overall = 0.0;
    long n_pairs = 0;
    // Classes whose union was empty; their IoU is 1 by convention.
    std::vector<PairLabel> empty_classes;
};

IoUReport iou_from_confusion(const PairConfusion& c);
nlohmann::json to_json(const IoUReport& r);

using LabeledPairs = std::map<PairKey, PairLabel>;

// Throws UniverseMismatch unless gt and pred hold the same keys.
PairConfusion confusion(const LabeledPairs& gt, const LabeledPairs& pred);
IoUReport pair_iou(const LabeledPairs& gt, const LabeledPairs& pred);

struct Association {
    std::vector<std::pair<int, int>> matches;  // (pred, gt), in the order they were accepted
    std::vector<int> unmatched_gt;
    std::vector<int> unmatched_pred;
};

// overlaps[p][g]. Greedy by descending overlap (ties: lower pred, then lower gt index) unless
// `optimal`, which maximizes the summed overlap of above-threshold matches.
Association associate_instances(const std::vector<std::vector<double>>& overlaps, double threshold = 0.5,
                                bool optimal = false);

// GT pairs are the universe; a GT pair whose members both map to predicted instances takes the
// predicted label of that pair (Unknown when absent), otherwise Unknown.
PairConfusion predicted_instance_confusion(const LabeledPairs& gt, const std::vector<std::string>& gt_ids,
                                           const LabeledPairs& pred, const std::vector<std::string>& pred_ids,
                                           const Association& mapping);
IoUReport evaluate_predicted_instances(const LabeledPairs& gt, const std::vector<std::string>& gt_ids,
                                       const LabeledPairs& pred, const std::vector<std::string>& pred_ids,
                                       const Association& mapping);

LabeledPairs labeled_pairs(const SceneManifest& scene);
LabeledPairs labeled_pairs(const PredictionDocument& doc);

}  // namespace lookalike
