#include "lookalike/similarity.h"

#include <algorithm>

#include "lookalike/errors.h"

namespace lookalike {

SimilarityResult similarity(const ObjectEmbedding& ea, const ObjectEmbedding& eb) {
    if (ea.features.size() != eb.features.size() || ea.features.size() == 0)
        fail(ErrorKind::DimMismatch, "embeddings have sizes " + std::to_string(ea.features.size()) + " and " +
                                         std::to_string(eb.features.size()));
    SimilarityResult result;
    result.score = std::clamp(ea.features.dot(eb.features), 0.0, 1.0);
    result.distance = 1.0 - result.score;
    return result;
}

void Thresholds::validate() const {
    if (!(0.0 < t1 && t1 < t2 && t2 < 1.0)) fail(ErrorKind::Invariant, "thresholds must satisfy 0 < t1 < t2 < 1");
}

nlohmann::json to_json(const Thresholds& t) { return {{"t1", t.t1}, {"t2", t.t2}}; }

Thresholds thresholds_from_json(const nlohmann::json& doc) {
    Thresholds t;
    try {
        if (doc.contains("t1")) t.t1 = doc["t1"].get<double>();
        if (doc.contains("t2")) t.t2 = doc["t2"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("thresholds: ") + e.what());
    }
    t.validate();
    return t;
}

}  // namespace lookalike
