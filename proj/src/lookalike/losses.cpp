#include "lookalike/losses.h"

#include <algorithm>
#include <map>

#include "lookalike/errors.h"

namespace lookalike {

void Margins::validate() const {
    for (double a : {alpha1, alpha2, alpha3})
        if (!(a >= 0.0 && a <= 1.0)) fail(ErrorKind::Invariant, "margins must lie in [0,1]");
}

nlohmann::json to_json(const Margins& m) { return {{"alpha1", m.alpha1}, {"alpha2", m.alpha2}, {"alpha3", m.alpha3}}; }

Margins margins_from_json(const nlohmann::json& doc) {
    Margins m;
    try {
        m.alpha1 = doc.value("alpha1", m.alpha1);
        m.alpha2 = doc.value("alpha2", m.alpha2);
        m.alpha3 = doc.value("alpha3", m.alpha3);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("margins: ") + e.what());
    }
    m.validate();
    return m;
}

namespace {

// Index of the first max (or min) element; -1 when empty.
int arg_extreme(const std::vector<double>& v, bool want_max) {
    if (v.empty()) return -1;
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (want_max ? v[i] > v[best] : v[i] < v[best]) best = i;
    return best;
}

}  // namespace

MinedDistances mine_hard(const AnchorNeighborhood& n) {
    MinedDistances out;
    if (!n.d_id.empty()) out.d_id = *std::max_element(n.d_id.begin(), n.d_id.end());
    if (!n.d_sim.empty()) {
        out.d_sim_min = *std::min_element(n.d_sim.begin(), n.d_sim.end());
        out.d_sim_max = *std::max_element(n.d_sim.begin(), n.d_sim.end());
    }
    if (!n.d_diff.empty()) out.d_diff = *std::min_element(n.d_diff.begin(), n.d_diff.end());
    return out;
}

double triplet_loss(const std::vector<AnchorNeighborhood>& batch, const Margins& m, bool normalize,
                    std::vector<AnchorNeighborhood>* grad) {
    if (batch.empty()) fail(ErrorKind::Precondition, "triplet_loss needs a nonempty batch");
    const double w = normalize ? 1.0 / static_cast<double>(batch.size()) : 1.0;
    if (grad) {
        grad->clear();
        for (const auto& n : batch)
            grad->push_back({n.anchor, std::vector<double>(n.d_id.size(), 0.0), std::vector<double>(n.d_sim.size(), 0.0),
                             std::vector<double>(n.d_diff.size(), 0.0)});
    }
    double total = 0.0;
    for (size_t a = 0; a < batch.size(); ++a) {
        const auto& n = batch[a];
        const int id = arg_extreme(n.d_id, true);
        const int sim_min = arg_extreme(n.d_sim, false);
        const int sim_max = arg_extreme(n.d_sim, true);
        const int diff = arg_extreme(n.d_diff, false);

        // hinge(lhs - rhs + margin); gradient +w to lhs, -w to rhs when active
        auto hinge = [&](const std::vector<double>& lv, int li, std::vector<double> AnchorNeighborhood::*lg,
                         const std::vector<double>& rv, int ri, std::vector<double> AnchorNeighborhood::*rg, double margin) {
            if (li < 0 || ri < 0) return;
            const double arg = lv[li] - rv[ri] + margin;
            if (arg <= 0.0) return;
            total += arg;
            if (grad) {
                ((*grad)[a].*lg)[li] += w;
                ((*grad)[a].*rg)[ri] -= w;
            }
        };
        hinge(n.d_id, id, &AnchorNeighborhood::d_id, n.d_sim, sim_min, &AnchorNeighborhood::d_sim, m.alpha1);
        hinge(n.d_sim, sim_max, &AnchorNeighborhood::d_sim, n.d_diff, diff, &AnchorNeighborhood::d_diff, m.alpha2);
        hinge(n.d_id, id, &AnchorNeighborhood::d_id, n.d_diff, diff, &AnchorNeighborhood::d_diff, m.alpha3);
    }
    return total * w;
}

double alignment_loss(const std::vector<std::pair<PairLabel, double>>& pairs, double t1, double t2,
                      const AlignmentOptions& options, std::vector<double>* grad) {
    if (grad) grad->assign(pairs.size(), 0.0);
    double total = 0.0;
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto [label, s] = pairs[i];
        double lhs = 0.0;
        double rhs = 0.0;
        double sign = 0.0;  // d(term)/ds of each term
        if (label == PairLabel::Identical) {
            lhs = t2 - s;
            rhs = 1.0 - s;
            sign = -1.0;
        } else if (label == PairLabel::Different) {
            lhs = s - t1;
            rhs = s;
            sign = 1.0;
        } else {
            continue;
        }
        double g = 0.0;
        for (double term : {lhs, rhs}) {
            if (options.hinged && term <= 0.0) continue;
            total += term;
            g += sign;
        }
        if (grad) (*grad)[i] = g;
    }
    return total;
}

std::vector<AnchorNeighborhood> build_neighborhoods(const std::vector<PairScore>& pairs) {
    std::map<std::string, AnchorNeighborhood> anchors;
    for (const auto& p : pairs) {
        if (p.label != PairLabel::Identical) continue;
        anchors[p.a].anchor = p.a;
        anchors[p.b].anchor = p.b;
    }
    for (const auto& p : pairs) {
        const double d = 1.0 - p.s;
        for (const std::string* id : {&p.a, &p.b}) {
            auto it = anchors.find(*id);
            if (it == anchors.end()) continue;
            if (p.label == PairLabel::Identical) it->second.d_id.push_back(d);
            else if (p.label == PairLabel::Similar) it->second.d_sim.push_back(d);
            else if (p.label == PairLabel::Different) it->second.d_diff.push_back(d);
        }
    }
    std::vector<AnchorNeighborhood> out;
    out.reserve(anchors.size());
    for (auto& [id, n] : anchors) out.push_back(std::move(n));
    return out;
}

BatchObjective batch_objective(const std::vector<PairScore>& pairs, const Margins& m, double t1, double t2,
                               const ObjectiveOptions& options) {
    BatchObjective out;
    out.dtotal_ds.assign(pairs.size(), 0.0);
    if (pairs.empty()) return out;

    // Map every (anchor, category, slot) back to the pair it came from, mirroring build_neighborhoods.
    const auto neighborhoods = build_neighborhoods(pairs);
    if (!neighborhoods.empty()) {
        std::map<std::string, size_t> slot_of;
        for (size_t i = 0; i < neighborhoods.size(); ++i) slot_of[neighborhoods[i].anchor] = i;
        std::vector<std::vector<size_t>> src_id(neighborhoods.size()), src_sim(neighborhoods.size()),
            src_diff(neighborhoods.size());
        for (size_t k = 0; k < pairs.size(); ++k) {
            const auto& p = pairs[k];
            for (const std::string* id : {&p.a, &p.b}) {
                const auto it = slot_of.find(*id);
                if (it == slot_of.end()) continue;
                if (p.label == PairLabel::Identical) src_id[it->second].push_back(k);
                else if (p.label == PairLabel::Similar) src_sim[it->second].push_back(k);
                else if (p.label == PairLabel::Different) src_diff[it->second].push_back(k);
            }
        }
        std::vector<AnchorNeighborhood> grad;
        out.triplet = triplet_loss(neighborhoods, m, options.normalize_triplet, &grad);
        for (size_t i = 0; i < grad.size(); ++i) {
            // d = 1 - s, so dL/ds = -dL/dd
            for (size_t j = 0; j < grad[i].d_id.size(); ++j) out.dtotal_ds[src_id[i][j]] -= grad[i].d_id[j];
            for (size_t j = 0; j < grad[i].d_sim.size(); ++j) out.dtotal_ds[src_sim[i][j]] -= grad[i].d_sim[j];
            for (size_t j = 0; j < grad[i].d_diff.size(); ++j) out.dtotal_ds[src_diff[i][j]] -= grad[i].d_diff[j];
        }
    }

    std::vector<std::pair<PairLabel, double>> labeled;
    labeled.reserve(pairs.size());
    for (const auto& p : pairs) labeled.emplace_back(p.label, p.s);
    std::vector<double> align_grad;
    const double align_scale = options.normalize_alignment ? 1.0 / static_cast<double>(pairs.size()) : 1.0;
    out.align = alignment_loss(labeled, t1, t2, options.alignment, &align_grad) * align_scale;
    for (size_t k = 0; k < pairs.size(); ++k) out.dtotal_ds[k] += align_grad[k] * align_scale;
    out.total = total_loss(out.triplet, out.align);
    return out;
}

}  // namespace lookalike
