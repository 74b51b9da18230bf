#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lookalike/classifier.h"
#include "lookalike/datamodel.h"
#include "lookalike/encoder.h"
#include "lookalike/evaluator.h"

namespace lookalike {

struct PredictOptions {
    int views = 5;
    int workers = 0;  // 0: hardware concurrency
};

// Scores every intra-class pair of every scene; one prediction document per scene.
std::vector<nlohmann::json> predict_dataset(const DatasetManifest& manifest, const LookalikeModel& model,
                                            const PredictOptions& options = {});

struct EvalSummary {
    IoUReport pooled;
    std::vector<std::pair<std::string, IoUReport>> scenes;
};

// GT-instance evaluation. Throws UniverseMismatch when a scene is missing or the pair sets differ.
EvalSummary evaluate_documents(const DatasetManifest& gt, const std::vector<PredictionDocument>& predictions);
nlohmann::json to_json(const EvalSummary& summary);

// Precomputed mask overlaps for one scene: overlaps[p][g] between predicted instance pred_ids[p]
// and GT instance gt_ids[g].
struct InstanceOverlaps {
    std::vector<std::string> pred_ids;
    std::vector<std::string> gt_ids;
    std::vector<std::vector<double>> overlaps;
};

// {"scenes": [{"scene_id", "pred_ids", "gt_ids", "overlaps"}]}
std::map<std::string, InstanceOverlaps> overlaps_from_json(const nlohmann::json& doc);

// Predicted-instance evaluation: per scene, associate instances by overlap, then score GT pairs
// with the unknown-class rule. Throws UniverseMismatch for a scene without predictions or overlaps.
EvalSummary evaluate_predicted_documents(const DatasetManifest& gt, const std::vector<PredictionDocument>& predictions,
                                         const std::map<std::string, InstanceOverlaps>& overlaps,
                                         double threshold = 0.5, bool optimal = false);

}  // namespace lookalike
