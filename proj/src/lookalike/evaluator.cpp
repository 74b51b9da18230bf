#include "lookalike/evaluator.h"

#include <algorithm>
#include <limits>
#include <numeric>
#include <tuple>

#include "lookalike/errors.h"

namespace lookalike {

namespace {

int slot(PairLabel l) { return static_cast<int>(l); }

// Minimum-cost assignment on an n x m matrix (n <= m), classic potentials formulation.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost, int n, int m) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= m; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace

void PairConfusion::add(PairLabel gt, PairLabel pred, long n) { counts[slot(gt)][slot(pred)] += n; }

long PairConfusion::total() const {
    long t = 0;
    for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), 0L);
    return t;
}

PairConfusion& PairConfusion::operator+=(const PairConfusion& other) {
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) counts[i][j] += other.counts[i][j];
    return *this;
}

IoUReport iou_from_confusion(const PairConfusion& c) {
    IoUReport r;
    r.n_pairs = c.total();
    double* fields[] = {&r.iou_id, &r.iou_sim, &r.iou_diff};
    const PairLabel classes[] = {PairLabel::Identical, PairLabel::Similar, PairLabel::Different};
    for (int k = 0; k < 3; ++k) {
        const int s = slot(classes[k]);
        long gt_total = 0;
        long pred_total = 0;
        for (int j = 0; j < 4; ++j) {
            gt_total += c.counts[s][j];
            pred_total += c.counts[j][s];
        }
        const long inter = c.counts[s][s];
        const long uni = gt_total + pred_total - inter;
        if (uni == 0) {
            *fields[k] = 1.0;
            r.empty_classes.push_back(classes[k]);
        } else {
            *fields[k] = static_cast<double>(inter) / static_cast<double>(uni);
        }
    }
    r.overall = (r.iou_id + r.iou_sim + r.iou_diff) / 3.0;
    return r;
}

nlohmann::json to_json(const IoUReport& r) {
    nlohmann::json empty = nlohmann::json::array();
    for (PairLabel l : r.empty_classes) empty.push_back(to_string(l));
    return {{"iou_id", r.iou_id}, {"iou_sim", r.iou_sim}, {"iou_diff", r.iou_diff},
            {"overall", r.overall}, {"n_pairs", r.n_pairs}, {"empty_classes", empty}};
}

PairConfusion confusion(const LabeledPairs& gt, const LabeledPairs& pred) {
    if (gt.size() != pred.size()) fail(ErrorKind::UniverseMismatch, "ground truth and prediction cover different pairs");
    PairConfusion c;
    auto it = pred.begin();
    for (const auto& [key, label] : gt) {
        if (it->first != key)
            fail(ErrorKind::UniverseMismatch, "pair (" + key.a + "," + key.b + ") missing from predictions");
        c.add(label, it->second);
        ++it;
    }
    return c;
}

IoUReport pair_iou(const LabeledPairs& gt, const LabeledPairs& pred) { return iou_from_confusion(confusion(gt, pred)); }

Association associate_instances(const std::vector<std::vector<double>>& overlaps, double threshold, bool optimal) {
    const int n_pred = static_cast<int>(overlaps.size());
    const int n_gt = n_pred == 0 ? 0 : static_cast<int>(overlaps.front().size());
    for (const auto& row : overlaps)
        if (static_cast<int>(row.size()) != n_gt) fail(ErrorKind::Shape, "overlap matrix rows differ in length");

    Association out;
    std::vector<char> pred_used(n_pred, 0), gt_used(n_gt, 0);
    if (!optimal) {
        std::vector<std::tuple<double, int, int>> order;
        for (int p = 0; p < n_pred; ++p)
            for (int g = 0; g < n_gt; ++g)
                if (overlaps[p][g] >= threshold) order.emplace_back(overlaps[p][g], p, g);
        std::stable_sort(order.begin(), order.end(), [](const auto& x, const auto& y) {
            if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
            return std::tie(std::get<1>(x), std::get<2>(x)) < std::tie(std::get<1>(y), std::get<2>(y));
        });
        for (const auto& [value, p, g] : order) {
            if (pred_used[p] || gt_used[g]) continue;
            pred_used[p] = gt_used[g] = 1;
            out.matches.emplace_back(p, g);
        }
    } else if (n_pred > 0 && n_gt > 0) {
        const bool transpose = n_pred > n_gt;
        const int n = transpose ? n_gt : n_pred;
        const int m = transpose ? n_pred : n_gt;
        std::vector<std::vector<double>> cost(n, std::vector<double>(m, 0.0));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) {
                const double o = transpose ? overlaps[j][i] : overlaps[i][j];
                cost[i][j] = o >= threshold ? -o : 0.0;
            }
        const auto assign = hungarian(cost, n, m);
        for (int i = 0; i < n; ++i) {
            if (assign[i] < 0) continue;
            const int p = transpose ? assign[i] : i;
            const int g = transpose ? i : assign[i];
            if (overlaps[p][g] < threshold) continue;
            pred_used[p] = gt_used[g] = 1;
            out.matches.emplace_back(p, g);
        }
        std::sort(out.matches.begin(), out.matches.end());
    }
    for (int g = 0; g < n_gt; ++g)
        if (!gt_used[g]) out.unmatched_gt.push_back(g);
    for (int p = 0; p < n_pred; ++p)
        if (!pred_used[p]) out.unmatched_pred.push_back(p);
    return out;
}

PairConfusion predicted_instance_confusion(const LabeledPairs& gt, const std::vector<std::string>& gt_ids,
                                           const LabeledPairs& pred, const std::vector<std::string>& pred_ids,
                                           const Association& mapping) {
    std::map<std::string, std::string> gt_to_pred;
    for (const auto& [p, g] : mapping.matches) {
        if (p < 0 || p >= static_cast<int>(pred_ids.size()) || g < 0 || g >= static_cast<int>(gt_ids.size()))
            fail(ErrorKind::Shape, "association index out of range");
        gt_to_pred[gt_ids[g]] = pred_ids[p];
    }
    PairConfusion c;
    for (const auto& [key, label] : gt) {
        const auto ia = gt_to_pred.find(key.a);
        const auto ib = gt_to_pred.find(key.b);
        PairLabel predicted = PairLabel::Unknown;
        if (ia != gt_to_pred.end() && ib != gt_to_pred.end()) {
            const auto it = pred.find(PairKey(ia->second, ib->second));
            if (it != pred.end()) predicted = it->second;
        }
        c.add(label, predicted);
    }
    return c;
}

IoUReport evaluate_predicted_instances(const LabeledPairs& gt, const std::vector<std::string>& gt_ids,
                                       const LabeledPairs& pred, const std::vector<std::string>& pred_ids,
                                       const Association& mapping) {
    return iou_from_confusion(predicted_instance_confusion(gt, gt_ids, pred, pred_ids, mapping));
}

LabeledPairs labeled_pairs(const SceneManifest& scene) {
    LabeledPairs out;
    for (const auto& p : scene.pairs) out[PairKey(p.a, p.b)] = p.label;
    return out;
}

LabeledPairs labeled_pairs(const PredictionDocument& doc) {
    LabeledPairs out;
    for (const auto& p : doc.pairs) out[PairKey(p.a, p.b)] = p.label;
    return out;
}

}  // namespace lookalike
