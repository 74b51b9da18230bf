#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lookalike/datamodel.h"

namespace lookalike {

struct Margins {
    double alpha1 = 0.4;  // Id vs Sim
    double alpha2 = 0.4;  // Sim vs Diff
    double alpha3 = 0.8;  // Id vs Diff

    void validate() const;  // each in [0,1]
};

nlohmann::json to_json(const Margins& m);
Margins margins_from_json(const nlohmann::json& doc);

// Distances from one anchor object to its in-batch partners, grouped by GT label.
struct AnchorNeighborhood {
    std::string anchor;
    std::vector<double> d_id;
    std::vector<double> d_sim;
    std::vector<double> d_diff;
};

struct MinedDistances {
    std::optional<double> d_id;       // hardest positive: max
    std::optional<double> d_sim_min;
    std::optional<double> d_sim_max;
    std::optional<double> d_diff;     // hardest negative: min
};

MinedDistances mine_hard(const AnchorNeighborhood& n);

// Sum over anchors of the three hinge terms, divided by the anchor count when `normalize`.
// When `grad` is given it receives dL/dd for every distance, shaped like `batch`
// (subgradient routed to the first arg-max / arg-min element).
double triplet_loss(const std::vector<AnchorNeighborhood>& batch, const Margins& m, bool normalize = true,
                    std::vector<AnchorNeighborhood>* grad = nullptr);

struct AlignmentOptions {
    // Clips each term at zero instead of the signed form, so the loss is nonnegative.
    bool hinged = false;
};

// Signed score-alignment loss summed over pairs; Similar and Unknown pairs contribute 0.
// `grad` receives dL/ds per pair.
double alignment_loss(const std::vector<std::pair<PairLabel, double>>& pairs, double t1, double t2,
                      const AlignmentOptions& options = {}, std::vector<double>* grad = nullptr);

inline double total_loss(double triplet, double align) { return triplet + align; }

// One scored pair of a training batch.
struct PairScore {
    std::string a;
    std::string b;
    PairLabel label = PairLabel::Unknown;
    double s = 0.0;
};

struct ObjectiveOptions {
    bool normalize_triplet = true;
    // Divides the alignment sum by the number of pairs in the batch.
    bool normalize_alignment = true;
    AlignmentOptions alignment;
};

struct BatchObjective {
    double triplet = 0.0;
    double align = 0.0;
    double total = 0.0;
    std::vector<double> dtotal_ds;  // one entry per input pair
};

// Every object in a GT Identical pair is an anchor; its neighborhood collects d = 1 - s over
// all batch pairs containing it.
std::vector<AnchorNeighborhood> build_neighborhoods(const std::vector<PairScore>& pairs);

BatchObjective batch_objective(const std::vector<PairScore>& pairs, const Margins& m, double t1, double t2,
                               const ObjectiveOptions& options = {});

}  // namespace lookalike
