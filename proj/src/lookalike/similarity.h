#pragma once

#include <Eigen/Dense>

#include <string>

#include "json.hpp"

namespace lookalike {

struct ObjectEmbedding {
    Eigen::RowVectorXd features;  // flattened aggregated patch tokens, unit norm
};

struct SimilarityResult {
    double score = 0.0;
    double distance = 1.0;
    std::string a;
    std::string b;
};

// s = clamp(ea . eb, 0, 1) and d = 1 - s. Throws DimMismatch.
SimilarityResult similarity(const ObjectEmbedding& ea, const ObjectEmbedding& eb);

struct Thresholds {
    double t1 = 0.33;
    double t2 = 0.66;

    void validate() const;  // 0 < t1 < t2 < 1
};

nlohmann::json to_json(const Thresholds& t);
Thresholds thresholds_from_json(const nlohmann::json& doc);

}  // namespace lookalike
