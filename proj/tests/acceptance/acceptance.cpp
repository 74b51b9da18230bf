// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any fails.
// Tolerances and time budgets are fixed here, not read from anywhere.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.h"
#include "lookalike/annotation.h"
#include "lookalike/classifier.h"
#include "lookalike/cosegment.h"
#include "lookalike/encoder.h"
#include "lookalike/errors.h"
#include "lookalike/evaluator.h"
#include "lookalike/log.h"
#include "lookalike/losses.h"
#include "lookalike/predict.h"
#include "lookalike/toy_dataset.h"
#include "lookalike/trainer.h"
#include "oracles.h"
#include "shapes.h"

using namespace lookalike;
using fixture::TempDir;

namespace {

constexpr double kLossTol = 1e-12;
constexpr double kFdStep = 1e-4;
constexpr double kFdRelTol = 1e-3;
constexpr double kKinkGap = 1e-2;
constexpr double kEmbedTol = 1e-5;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    // Records a failed check; keeps the first few messages.
    void check(bool ok, const std::string& what) {
        if (ok) return;
        if (pass || failures < 4) detail << " [" << what << "]";
        pass = false;
        ++failures;
    }
    int failures = 0;
};

struct Criterion {
    std::string name;
    double budget_s;
    std::function<void(Outcome&)> body;
};

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", x);
    return buf;
}

// ---------------------------------------------------------------- metric

// Pair maps whose confusion has the requested cells; ids are synthetic.
void fill(LabeledPairs& gt, LabeledPairs& pred, PairLabel g, PairLabel p, int n) {
    for (int i = 0; i < n; ++i) {
        const PairKey key("o" + std::to_string(gt.size()), "x");
        gt[key] = g;
        pred[key] = p;
    }
}

struct Row {
    int tp_id, tp_sim, tp_diff, id_sim, id_diff, sim_diff;
    double iou_id, iou_sim, iou_diff, overall;
};

void metric_consistency(Outcome& out) {
    const auto Id = PairLabel::Identical, Sim = PairLabel::Similar, Diff = PairLabel::Different;
    const std::vector<Row> rows = {
        {260, 54, 260, 123, 17, 123, 0.65, 0.18, 0.65, 0.49},  // ours, GT instances
        {6, 13, 47, 64, 30, 23, 0.06, 0.13, 0.47, 0.22},        // registration baseline
    };
    for (const auto& r : rows) {
        LabeledPairs gt, pred;
        fill(gt, pred, Id, Id, r.tp_id);
        fill(gt, pred, Sim, Sim, r.tp_sim);
        fill(gt, pred, Diff, Diff, r.tp_diff);
        // Off-diagonal mass split across both directions.
        fill(gt, pred, Id, Sim, r.id_sim / 2);
        fill(gt, pred, Sim, Id, r.id_sim - r.id_sim / 2);
        fill(gt, pred, Id, Diff, r.id_diff / 2);
        fill(gt, pred, Diff, Id, r.id_diff - r.id_diff / 2);
        fill(gt, pred, Sim, Diff, r.sim_diff / 2);
        fill(gt, pred, Diff, Sim, r.sim_diff - r.sim_diff / 2);
        const auto rep = pair_iou(gt, pred);
        out.check(close(rep.iou_id, r.iou_id, 1e-9), "iou_id " + fmt(rep.iou_id));
        out.check(close(rep.iou_sim, r.iou_sim, 1e-9), "iou_sim " + fmt(rep.iou_sim));
        out.check(close(rep.iou_diff, r.iou_diff, 1e-9), "iou_diff " + fmt(rep.iou_diff));
        out.check(close(rep.overall, r.overall, 0.005), "overall " + fmt(rep.overall));
        std::vector<int> g, p;
        for (const auto& [k, v] : gt) {
            g.push_back(static_cast<int>(v));
            p.push_back(static_cast<int>(pred.at(k)));
        }
        out.check(close(oracle::iou(g, p).overall, rep.overall, 1e-12), "oracle disagrees");
        out.detail << " overall=" << fmt(rep.overall);
    }
}

// ---------------------------------------------------------------- losses

AnchorNeighborhood hood(std::vector<double> id, std::vector<double> sim, std::vector<double> diff) {
    return {"a", std::move(id), std::move(sim), std::move(diff)};
}

void loss_fixed_cases(Outcome& out, int& n_cases) {
    const Margins m;
    struct T {
        std::vector<AnchorNeighborhood> batch;
        bool normalize;
        double expected;
    };
    const std::vector<T> triplet = {
        {{hood({0.1}, {0.3}, {0.9})}, true, 0.2},
        {{hood({0.0}, {0.5}, {1.0})}, true, 0.0},
        {{hood({0.3}, {}, {})}, true, 0.0},
        {{hood({0.5}, {0.2}, {0.3})}, true, 2.0},
        {{hood({0.2}, {}, {0.5})}, true, 0.5},
        {{hood({0.2}, {0.1}, {})}, true, 0.5},
        {{hood({0.1, 0.3}, {0.4, 0.6}, {0.7, 0.95})}, true, 1.0},
        {{hood({0.0}, {0.0}, {0.0})}, true, 1.6},
        {{hood({1.0}, {1.0}, {1.0})}, true, 1.6},
        {{hood({0.05}, {0.5}, {0.9})}, true, 0.0},
        {{hood({0.1}, {0.3}, {0.9}), hood({0.5}, {0.2}, {0.3})}, true, 1.1},
        {{hood({0.1}, {0.3}, {0.9}), hood({0.5}, {0.2}, {0.3})}, false, 2.2},
        {{hood({0.6}, {0.7, 0.9}, {0.8})}, true, 1.4},
        {{hood({}, {0.9}, {0.1})}, true, 1.2},  // only the Sim/Diff term is present
        {{hood({0.3, 0.1}, {0.2}, {0.25, 0.9})}, true, 1.7},
    };
    int i = 0;
    for (const auto& c : triplet) {
        const double got = triplet_loss(c.batch, m, c.normalize);
        out.check(close(got, c.expected, kLossTol), "triplet case " + std::to_string(i) + " = " + fmt(got));
        ++i;
    }
    const auto Id = PairLabel::Identical, Sim = PairLabel::Similar, Diff = PairLabel::Different,
               Unk = PairLabel::Unknown;
    struct A {
        std::vector<std::pair<PairLabel, double>> pairs;
        bool hinged;
        double expected;
    };
    const std::vector<A> align = {
        {{{Id, 0.9}}, false, -0.14},
        {{{Diff, 0.2}}, false, 0.07},
        {{{Sim, 0.5}}, false, 0.0},
        {{{Sim, 0.95}}, false, 0.0},
        {{{Unk, 0.4}}, false, 0.0},
        {{{Id, 0.0}}, false, 1.66},
        {{{Diff, 1.0}}, false, 1.67},
        {{{Id, 0.5}}, false, 0.66},
        {{{Diff, 0.5}}, false, 0.67},
        {{{Id, 0.9}, {Diff, 0.2}, {Sim, 0.5}}, false, -0.07},
        {{{Id, 1.0}}, false, -0.34},
        {{{Id, 0.9}}, true, 0.1},
        {{{Diff, 0.2}}, true, 0.2},
        {{}, false, 0.0},
    };
    i = 0;
    for (const auto& c : align) {
        const double got = alignment_loss(c.pairs, 0.33, 0.66, AlignmentOptions{c.hinged});
        out.check(close(got, c.expected, kLossTol), "align case " + std::to_string(i) + " = " + fmt(got));
        ++i;
    }
    out.check(close(total_loss(0.2, -0.14), 0.06, kLossTol), "total (0.2, -0.14)");
    out.check(total_loss(0, 0) == 0.0, "total (0, 0)");
    n_cases = static_cast<int>(triplet.size() + align.size()) + 2;
}

bool fd_close(double analytic, double numeric) {
    return std::abs(analytic - numeric) <= kFdRelTol * std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// True when every hinge argument and every mined extreme is clear of a kink.
bool kink_free(const AnchorNeighborhood& n, const Margins& m) {
    auto separated = [](std::vector<double> v, bool want_max) {
        if (v.size() < 2) return true;
        std::sort(v.begin(), v.end());
        return want_max ? v[v.size() - 1] - v[v.size() - 2] > kKinkGap : v[1] - v[0] > kKinkGap;
    };
    if (!separated(n.d_id, true) || !separated(n.d_diff, false) || !separated(n.d_sim, true) ||
        !separated(n.d_sim, false))
        return false;
    const auto k = oracle::mine(n.d_id, n.d_sim, n.d_diff);
    if (k.id && k.sim_min && std::abs(*k.id - *k.sim_min + m.alpha1) <= kKinkGap) return false;
    if (k.sim_max && k.diff && std::abs(*k.sim_max - *k.diff + m.alpha2) <= kKinkGap) return false;
    if (k.id && k.diff && std::abs(*k.id - *k.diff + m.alpha3) <= kKinkGap) return false;
    return true;
}

std::vector<double> draws(std::mt19937_64& rng, int max_n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(rng() % (max_n + 1));
    for (auto& x : v) x = u(rng);
    return v;
}

void loss_gradients(Outcome& out, int& tested, int& skipped) {
    const Margins m;
    const double t1 = 0.33, t2 = 0.66;
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    tested = skipped = 0;
    while (tested < 100) {
        const int kind = (tested + skipped) % 3;
        if (kind == 0) {
            // Triplet loss over distances.
            std::vector<AnchorNeighborhood> batch;
            const int anchors = 1 + static_cast<int>(rng() % 3);
            bool clean = true;
            for (int a = 0; a < anchors; ++a) {
                batch.push_back(hood(draws(rng, 3), draws(rng, 3), draws(rng, 3)));
                clean = clean && kink_free(batch.back(), m);
            }
            if (!clean) {
                ++skipped;
                continue;
            }
            std::vector<AnchorNeighborhood> grad;
            triplet_loss(batch, m, true, &grad);
            for (size_t a = 0; a < batch.size(); ++a)
                for (auto member : {&AnchorNeighborhood::d_id, &AnchorNeighborhood::d_sim, &AnchorNeighborhood::d_diff})
                    for (size_t j = 0; j < (batch[a].*member).size(); ++j) {
                        auto hi = batch, lo = batch;
                        (hi[a].*member)[j] += kFdStep;
                        (lo[a].*member)[j] -= kFdStep;
                        const double numeric = (triplet_loss(hi, m) - triplet_loss(lo, m)) / (2 * kFdStep);
                        out.check(fd_close((grad[a].*member)[j], numeric), "triplet gradient");
                    }
        } else if (kind == 1) {
            // Alignment loss over scores, signed and hinged.
            std::vector<std::pair<PairLabel, double>> pairs;
            const int n = 1 + static_cast<int>(rng() % 6);
            bool clean = true;
            for (int i = 0; i < n; ++i) {
                const auto label = static_cast<PairLabel>(rng() % 4);
                const double s = u(rng);
                pairs.emplace_back(label, s);
                for (double kink : {0.0, t1, t2, 1.0}) clean = clean && std::abs(s - kink) > kKinkGap;
            }
            if (!clean) {
                ++skipped;
                continue;
            }
            for (bool hinged : {false, true}) {
                std::vector<double> grad;
                alignment_loss(pairs, t1, t2, {hinged}, &grad);
                for (size_t i = 0; i < pairs.size(); ++i) {
                    auto hi = pairs, lo = pairs;
                    hi[i].second += kFdStep;
                    lo[i].second -= kFdStep;
                    const double numeric =
                        (alignment_loss(hi, t1, t2, {hinged}) - alignment_loss(lo, t1, t2, {hinged})) / (2 * kFdStep);
                    out.check(fd_close(grad[i], numeric), "alignment gradient");
                }
            }
        } else {
            // Full batch objective with respect to the scores.
            const std::vector<std::string> ids = {"a", "b", "c", "d", "e"};
            std::vector<PairScore> pairs;
            for (size_t i = 0; i < ids.size(); ++i)
                for (size_t j = i + 1; j < ids.size(); ++j)
                    if (rng() % 3 != 0)
                        pairs.push_back({ids[i], ids[j], static_cast<PairLabel>(rng() % 3), u(rng)});
            bool clean = !pairs.empty();
            for (const auto& n : build_neighborhoods(pairs)) clean = clean && kink_free(n, m);
            if (!clean) {
                ++skipped;
                continue;
            }
            const auto obj = batch_objective(pairs, m, t1, t2);
            for (size_t i = 0; i < pairs.size(); ++i) {
                auto hi = pairs, lo = pairs;
                hi[i].s += kFdStep;
                lo[i].s -= kFdStep;
                const double numeric =
                    (batch_objective(hi, m, t1, t2).total - batch_objective(lo, m, t1, t2).total) / (2 * kFdStep);
                out.check(fd_close(obj.dtotal_ds[i], numeric), "objective gradient");
            }
        }
        ++tested;
    }
}

void loss_oracles(Outcome& out) {
    int n_cases = 0, tested = 0, skipped = 0;
    loss_fixed_cases(out, n_cases);
    out.check(n_cases >= 20, "too few fixed cases");
    loss_gradients(out, tested, skipped);
    out.detail << " fixed_cases=" << n_cases << " fd_inputs=" << tested << " skipped_near_kinks=" << skipped;
}

// ---------------------------------------------------------------- grouping

void grouping_oracle(Outcome& out) {
    const Thresholds t;
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    long total_edges = 0;
    for (int graph = 0; graph < 1000; ++graph) {
        const int n = 1 + static_cast<int>(rng() % 50);
        const double density = u(rng) * 4.0 / n;
        std::vector<std::string> nodes;
        for (int i = 0; i < n; ++i) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "o%02d", i);
            nodes.push_back(buf);
        }
        std::vector<SimilarityResult> results;
        std::vector<std::pair<std::string, std::string>> edges;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const bool edge = u(rng) < density;
                // Scores on both sides of the Id threshold, including exactly t2.
                const double s = edge ? (rng() % 10 == 0 ? t.t2 : t.t2 + u(rng) * (1 - t.t2)) : u(rng) * t.t2 * 0.999;
                results.push_back({s, 1 - s, nodes[i], nodes[j]});
                if (edge) edges.emplace_back(nodes[i], nodes[j]);
            }
        std::shuffle(results.begin(), results.end(), rng);
        total_edges += static_cast<long>(edges.size());
        auto got = group_scene(results, t).identical_groups;
        std::sort(got.begin(), got.end());
        if (got != oracle::components(nodes, edges)) out.check(false, "graph " + std::to_string(graph));
    }
    out.detail << " graphs=1000 id_edges=" << total_edges;
}

// ---------------------------------------------------------------- encoder

constexpr int kRows = 3, kCols = 3, kDim = 12;

PatchFeatureTensor random_view(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0, 1);
    PatchFeatureTensor t;
    t.grid_rows = kRows;
    t.grid_cols = kCols;
    t.patches.resize(kRows * kCols, kDim);
    for (int i = 0; i < t.patches.size(); ++i) t.patches.data()[i] = n(rng);
    return t;
}

std::vector<PatchFeatureTensor> views(std::mt19937_64& rng, int n) {
    std::vector<PatchFeatureTensor> out;
    for (int i = 0; i < n; ++i) out.push_back(random_view(rng));
    return out;
}

double max_diff(const ObjectEmbedding& a, const ObjectEmbedding& b) {
    return (a.features - b.features).cwiseAbs().maxCoeff();
}

EncoderConfig encoder_config() {
    EncoderConfig cfg;
    cfg.embed_dim = 32;
    cfg.n_heads = 4;
    cfg.mlp_ratio = 2;
    return cfg;
}

void encoder_invariants(Outcome& out) {
    std::mt19937_64 rng(5);
    const PairEncoder enc(encoder_config(), kDim, kRows, kCols, 0, 11);

    double worst_norm = 0;
    for (int na = 1; na <= 5; ++na)
        for (int nb = 1; nb <= 5; ++nb) {
            const auto [ea, eb] = enc.encode_pair(views(rng, na), views(rng, nb));
            worst_norm = std::max({worst_norm, std::abs(ea.features.norm() - 1), std::abs(eb.features.norm() - 1)});
        }
    out.check(worst_norm <= kEmbedTol, "norm error " + std::to_string(worst_norm));

    auto cfg = encoder_config();
    cfg.use_frame_embeddings = false;
    const PairEncoder unordered(cfg, kDim, kRows, kCols, 0, 11);
    double worst_perm = 0;
    for (int trial = 0; trial < 10; ++trial) {
        auto va = views(rng, 5), vb = views(rng, 3);
        const auto [ea, eb] = unordered.encode_pair(va, vb);
        std::shuffle(va.begin(), va.end(), rng);
        std::shuffle(vb.begin(), vb.end(), rng);
        const auto [ea2, eb2] = unordered.encode_pair(va, vb);
        worst_perm = std::max({worst_perm, max_diff(ea, ea2), max_diff(eb, eb2)});
    }
    out.check(worst_perm <= kEmbedTol, "permutation error " + std::to_string(worst_perm));

    // Mean over exactly the supplied views: with attention bypassed the output is the
    // normalized mean of the projected tokens, and repeating a view changes nothing.
    const auto& w = enc.params().value(enc.params().index_of("input.weight"));
    const auto& b = enc.params().value(enc.params().index_of("input.bias"));
    double worst_mean = 0;
    for (int n : {1, 3, 5}) {
        const auto va = views(rng, n), vb = views(rng, 6 - n);
        const auto [ea, eb] = enc.encode_pair(va, vb, PairEncoder::Options{true});
        ag::Mat sum = ag::Mat::Zero(kRows * kCols, w.cols());
        for (const auto& v : va) {
            ag::Mat projected = v.patches * w;
            projected.rowwise() += b.row(0);
            sum += projected;
        }
        sum /= n;
        Eigen::RowVectorXd flat = Eigen::Map<const Eigen::RowVectorXd>(sum.data(), sum.size());
        flat /= flat.norm();
        worst_mean = std::max(worst_mean, (ea.features - flat).cwiseAbs().maxCoeff());

        // Both objects repeated, so global attention sees the same token proportions.
        const std::vector<PatchFeatureTensor> ra(static_cast<size_t>(n), va[0]), rb(static_cast<size_t>(n), vb[0]);
        const auto [r1, s1] = unordered.encode_pair({va[0]}, {vb[0]});
        const auto [rn, sn] = unordered.encode_pair(ra, rb);
        worst_mean = std::max({worst_mean, max_diff(r1, rn), max_diff(s1, sn)});
    }
    out.check(worst_mean <= kEmbedTol, "masked mean error " + std::to_string(worst_mean));

    auto grads = enc.params().zeros_like();
    for (int pair = 0; pair < 4; ++pair) {
        const auto va = views(rng, 1 + pair), vb = views(rng, 5 - pair);
        std::vector<const ag::Mat*> pa, pb;
        for (const auto& v : va) pa.push_back(&v.patches);
        for (const auto& v : vb) pb.push_back(&v.patches);
        ag::Tape tape;
        const auto [ea, eb] = enc.forward(tape, pa, pb);
        tape.backward(tape.dot(ea, eb));
        tape.accumulate_param_grads(grads);
    }
    int dead = 0;
    for (size_t i = 0; i < grads.size(); ++i)
        if (!(grads[i].cwiseAbs().maxCoeff() > 0)) {
            ++dead;
            out.check(false, "no gradient: " + enc.params().name(i));
        }
    out.detail << " norm_err=" << worst_norm << " perm_err=" << worst_perm << " mean_err=" << worst_mean
               << " params=" << grads.size() << " without_grad=" << dead;
}

// ---------------------------------------------------------------- toy end to end

IoUReport evaluate(const DatasetManifest& m, const LookalikeModel& model, int views) {
    std::vector<PredictionDocument> docs;
    for (const auto& d : predict_dataset(m, model, {views, 0})) docs.push_back(prediction_from_json(d));
    return evaluate_documents(m, docs).pooled;
}

void toy_end_to_end(Outcome& out) {
    TempDir dir;
    const auto train_set = make_toy_dataset(dir / "train", 8, 1, Split::Train);
    const auto held_out = make_toy_dataset(dir / "val", 8, 2, Split::Val);
    const RunConfig cfg = toy_run_config();
    LookalikeModel model(cfg.backbone, cfg.encoder, cfg.thresholds, 7);
    train(train_set, model, cfg, {dir / "run", false});

    const auto tr = evaluate(train_set, model, 5);
    const auto va5 = evaluate(held_out, model, 5);
    const auto va1 = evaluate(held_out, model, 1);
    out.check(tr.overall >= 0.90, "train overall " + fmt(tr.overall));
    out.check(va5.overall >= 0.70, "held-out overall " + fmt(va5.overall));
    out.check(std::abs(va5.overall - va1.overall) <= 0.25, "view gap " + fmt(va5.overall - va1.overall));
    out.check(va5.iou_sim >= va1.iou_sim, "5-view sim below 1-view sim");
    out.detail << " train=" << fmt(tr.overall) << " held_out=" << fmt(va5.overall)
               << " held_out_1view=" << fmt(va1.overall) << " sim_5view=" << fmt(va5.iou_sim)
               << " sim_1view=" << fmt(va1.iou_sim);
}

// ---------------------------------------------------------------- predicted instances

void predicted_instances(Outcome& out) {
    // GT g0..g3; g1 has no predicted instance above 0.5 overlap.
    const std::vector<std::string> gt_ids = {"g0", "g1", "g2", "g3"};
    const std::vector<std::string> pred_ids = {"p0", "p2", "p3"};
    const LabeledPairs gt = {{PairKey("g0", "g1"), PairLabel::Identical},
                             {PairKey("g0", "g2"), PairLabel::Similar},
                             {PairKey("g2", "g3"), PairLabel::Different}};
    const LabeledPairs pred = {{PairKey("p0", "p2"), PairLabel::Similar}, {PairKey("p2", "p3"), PairLabel::Different}};
    const std::vector<std::vector<double>> overlaps = {{0.9, 0.3, 0, 0}, {0, 0, 0.8, 0}, {0, 0, 0, 0.7}};
    for (bool optimal : {false, true}) {
        const auto mapping = associate_instances(overlaps, 0.5, optimal);
        out.check(mapping.unmatched_gt == std::vector<int>{1}, "g1 should be unmatched");
        const auto rep = evaluate_predicted_instances(gt, gt_ids, pred, pred_ids, mapping);
        out.check(rep.iou_id == 0.0, "iou_id " + fmt(rep.iou_id));
        out.check(rep.iou_sim == 1.0, "iou_sim " + fmt(rep.iou_sim));
        out.check(rep.iou_diff == 1.0, "iou_diff " + fmt(rep.iou_diff));
        out.check(close(rep.overall, 2.0 / 3.0, 1e-15), "overall " + fmt(rep.overall));
        const auto c = predicted_instance_confusion(gt, gt_ids, pred, pred_ids, mapping);
        out.check(c.counts[0][3] == 1 && c.total() == 3, "Id pair should land in Unknown");
        if (!optimal) out.detail << " overall=" << fmt(rep.overall) << " gt_id_to_unknown=" << c.counts[0][3];
    }
}

// ---------------------------------------------------------------- cosegmentation

void cosegmentation(Outcome& out) {
    const auto src = shapes::chair(120, 21);
    const auto truth = shapes::pose(135, 4, {0.4, -0.3, 0.2});
    const auto fit = icp_align(src, shapes::moved(src, truth, 0.0, 0), {8, 60, 1e-12});
    const double rot_err = shapes::rotation_error_deg(fit.transform.rotation, truth.rotation);
    out.check(rot_err <= 1.0, "rotation error " + fmt(rot_err));
    out.check(fit.residual < 1e-4, "residual " + std::to_string(fit.residual));

    // Two parts: back vs everything else; noise at 1% of the 1.4 extent.
    auto two_part = src;
    for (auto& l : two_part.labels) l = l == 1 ? 1 : 0;
    const auto noisy = shapes::moved(two_part, shapes::pose(-60, 0, {1, 2, 0}), 0.014, 3);
    const auto icp = icp_align(two_part, noisy);
    const auto labels = transfer_labels(two_part, noisy, icp.transform, 5);
    int same = 0;
    for (size_t i = 0; i < labels.size(); ++i) same += labels[i] == two_part.labels[i];
    const double acc = static_cast<double>(same) / static_cast<double>(labels.size());
    out.check(acc >= 0.95, "transfer accuracy " + fmt(acc));

    const auto quarter = shapes::moved(src, shapes::pose(90, 0, {0, 0, 0}), 0.0, 0);
    const double r8 = icp_align(src, quarter, {8, 60, 1e-12}).residual;
    const double r1 = icp_align(src, quarter, {1, 60, 1e-12}).residual;
    out.check(r8 <= r1, "bins 8 residual above bins 1");
    out.detail << " rot_err_deg=" << fmt(rot_err) << " residual=" << fit.residual << " transfer_acc=" << fmt(acc)
               << " yaw90_residual_bins8=" << r8 << " bins1=" << r1;
}

// ---------------------------------------------------------------- annotation

void annotation_service(Outcome& out) {
    TempDir dir;
    const auto manifest = fixture::annotation_manifest(10, 4);
    std::map<std::string, std::string> classes;
    std::vector<std::string> ids;
    for (const auto& o : manifest.scenes[0].objects) {
        classes[o.object_id] = o.semantic_class;
        ids.push_back(o.object_id);
    }
    const auto clock = [] { return std::string("2024-01-01T00:00:00Z"); };
    oracle::Annotation reference(classes);
    std::string exported;
    int accepted = 0, mismatched = 0, served_implied = 0, served = 0;
    {
        AnnotationService svc(manifest, dir / "log.jsonl", clock);
        std::mt19937_64 rng(4242);
        for (int i = 0; i < 1000; ++i) {
            const int roll = static_cast<int>(rng() % 10);
            const std::string a = ids[rng() % ids.size()], b = ids[rng() % ids.size()];
            const int label = static_cast<int>(rng() % 3);
            bool ok = true;
            try {
                if (roll == 0)
                    svc.undo();
                else if (roll == 1)
                    svc.merge("s", a, b);
                else
                    svc.submit_label("s", a, b,
                                     label == 0   ? PairLabel::Identical
                                     : label == 1 ? PairLabel::Similar
                                                  : PairLabel::Different,
                                     label == 1 ? std::set<SimilarityType>{SimilarityType::Shape}
                                                : std::set<SimilarityType>{});
            } catch (const Error&) {
                ok = false;
            }
            const bool expected = roll == 0   ? reference.offer(oracle::Annotation::Undo)
                                  : roll == 1 ? reference.offer(oracle::Annotation::Merge, a, b)
                                              : reference.offer(oracle::Annotation::Label, a, b, label);
            accepted += ok;
            if (ok != expected || svc.snapshot().groups("s") != reference.groups()) ++mismatched;
            try {
                const auto next = svc.next_pair("s");
                ++served;
                if (reference.same_group(next["a"]["object_id"], next["b"]["object_id"])) ++served_implied;
            } catch (const Error&) {
            }
        }
        exported = svc.export_json().dump(2);
    }
    out.check(mismatched == 0, std::to_string(mismatched) + " steps disagree with the oracle");
    out.check(served_implied == 0, std::to_string(served_implied) + " implied pairs served");

    AnnotationService reopened(manifest, dir / "log.jsonl", clock);
    const bool reopen_same = reopened.export_json().dump(2) == exported;
    const auto replayed = AnnotationState::replay(manifest, EventLog(dir / "log.jsonl").events());
    const bool replay_same = manifest_to_json(replayed.export_manifest()).dump(2) == exported;
    out.check(reopen_same && replay_same, "replayed export differs");
    out.detail << " events=1000 accepted=" << accepted << " served=" << served << " export_bytes=" << exported.size();
}

}  // namespace

// Optional argument: run only criteria whose name contains it.
int main(int argc, char** argv) {
    const std::string only = argc > 1 ? argv[1] : "";
    set_log_level(LogLevel::Warning);
    const std::vector<Criterion> criteria = {
        {"metric consistency (class IoU rows -> overall)", 1, metric_consistency},
        {"loss oracles and finite-difference gradients", 10, loss_oracles},
        {"grouping equals connected components", 30, grouping_oracle},
        {"encoder invariants", 60, encoder_invariants},
        // The budget is for a 4-core machine; measured single-core time is reported.
        {"toy end-to-end training and evaluation", 600, toy_end_to_end},
        {"predicted-instance unknown-class accounting", 1, predicted_instances},
        {"co-segmentation alignment and label transfer", 60, cosegmentation},
        {"annotation replay, partition and serving", 60, annotation_service},
    };
    int failed = 0, run = 0;
    for (const auto& c : criteria) {
        if (c.name.find(only) == std::string::npos) continue;
        ++run;
        Outcome out;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.body(out);
        } catch (const std::exception& e) {
            out.check(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.check(secs < c.budget_s, "over time budget");
        failed += !out.pass;
        std::printf("%s  %-48s %8.2fs (budget %gs)%s\n", out.pass ? "PASS" : "FAIL", c.name.c_str(), secs, c.budget_s,
                    out.detail.str().c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%d criteria passed\n", run - failed, run);
    return failed == 0 ? 0 : 1;
}
