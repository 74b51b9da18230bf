#include "lookalike/predict.h"

#include <map>

#include "lookalike/errors.h"
#include "lookalike/parallel.h"

namespace lookalike {

std::vector<nlohmann::json> predict_dataset(const DatasetManifest& manifest, const LookalikeModel& model,
                                            const PredictOptions& options) {
    if (options.views < 1) fail(ErrorKind::Precondition, "views must be >= 1");
    const int workers = options.workers > 0 ? options.workers : default_worker_count();
    FeatureCache cache(model.backbone());
    std::vector<nlohmann::json> docs;
    for (const auto& scene : manifest.scenes) {
        const auto keys = scene.intra_class_pairs();
        std::vector<SimilarityResult> results(keys.size());
        parallel_for(keys.size(), workers, [&](size_t i) {
            results[i] = model.score_pair(*scene.find_object(keys[i].a), *scene.find_object(keys[i].b), options.views,
                                          manifest.root, &cache);
        });
        docs.push_back(prediction_document(scene.scene_id, results, model.thresholds()));
    }
    return docs;
}

EvalSummary evaluate_documents(const DatasetManifest& gt, const std::vector<PredictionDocument>& predictions) {
    std::map<std::string, const PredictionDocument*> by_scene;
    for (const auto& doc : predictions) by_scene[doc.scene_id] = &doc;
    EvalSummary summary;
    PairConfusion pooled;
    for (const auto& scene : gt.scenes) {
        const auto it = by_scene.find(scene.scene_id);
        if (it == by_scene.end()) fail(ErrorKind::UniverseMismatch, "no predictions for scene " + scene.scene_id);
        const PairConfusion c = confusion(labeled_pairs(scene), labeled_pairs(*it->second));
        pooled += c;
        summary.scenes.emplace_back(scene.scene_id, iou_from_confusion(c));
    }
    summary.pooled = iou_from_confusion(pooled);
    return summary;
}

std::map<std::string, InstanceOverlaps> overlaps_from_json(const nlohmann::json& doc) {
    std::map<std::string, InstanceOverlaps> out;
    try {
        for (const auto& entry : doc.at("scenes")) {
            InstanceOverlaps o;
            o.pred_ids = entry.at("pred_ids").get<std::vector<std::string>>();
            o.gt_ids = entry.at("gt_ids").get<std::vector<std::string>>();
            o.overlaps = entry.at("overlaps").get<std::vector<std::vector<double>>>();
            const std::string id = entry.at("scene_id").get<std::string>();
            if (o.overlaps.size() != o.pred_ids.size())
                fail(ErrorKind::Schema, "overlaps for " + id + ": one row per predicted instance expected");
            for (const auto& row : o.overlaps) {
                if (row.size() != o.gt_ids.size())
                    fail(ErrorKind::Schema, "overlaps for " + id + ": one column per GT instance expected");
                for (double v : row)
                    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::Schema, "overlaps for " + id + ": values must lie in [0,1]");
            }
            if (!out.emplace(id, std::move(o)).second) fail(ErrorKind::Schema, "duplicate overlaps for scene " + id);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("overlaps: ") + e.what());
    }
    return out;
}

EvalSummary evaluate_predicted_documents(const DatasetManifest& gt, const std::vector<PredictionDocument>& predictions,
                                         const std::map<std::string, InstanceOverlaps>& overlaps, double threshold,
                                         bool optimal) {
    std::map<std::string, const PredictionDocument*> by_scene;
    for (const auto& doc : predictions) by_scene[doc.scene_id] = &doc;
    EvalSummary summary;
    PairConfusion pooled;
    for (const auto& scene : gt.scenes) {
        const auto doc = by_scene.find(scene.scene_id);
        if (doc == by_scene.end()) fail(ErrorKind::UniverseMismatch, "no predictions for scene " + scene.scene_id);
        const auto o = overlaps.find(scene.scene_id);
        if (o == overlaps.end()) fail(ErrorKind::UniverseMismatch, "no overlaps for scene " + scene.scene_id);
        const Association mapping = associate_instances(o->second.overlaps, threshold, optimal);
        const PairConfusion c = predicted_instance_confusion(labeled_pairs(scene), o->second.gt_ids,
                                                             labeled_pairs(*doc->second), o->second.pred_ids, mapping);
        pooled += c;
        summary.scenes.emplace_back(scene.scene_id, iou_from_confusion(c));
    }
    summary.pooled = iou_from_confusion(pooled);
    return summary;
}

nlohmann::json to_json(const EvalSummary& summary) {
    nlohmann::json scenes = nlohmann::json::array();
    for (const auto& [id, report] : summary.scenes) {
        nlohmann::json row = to_json(report);
        row["scene_id"] = id;
        scenes.push_back(row);
    }
    return {{"pooled", to_json(summary.pooled)}, {"scenes", scenes}};
}

}  // namespace lookalike
