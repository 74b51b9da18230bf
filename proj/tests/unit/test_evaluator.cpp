#include "doctest.h"

#include <algorithm>
#include <random>

#include "lookalike/errors.h"
#include "lookalike/evaluator.h"
#include "oracles.h"

using namespace lookalike;

namespace {

PairKey key(int i) { return PairKey("p" + std::to_string(1000 + i), "q" + std::to_string(1000 + i)); }

LabeledPairs labeled(const std::vector<PairLabel>& labels) {
    LabeledPairs out;
    for (size_t i = 0; i < labels.size(); ++i) out[key(static_cast<int>(i))] = labels[i];
    return out;
}

constexpr auto Id = PairLabel::Identical;
constexpr auto Sim = PairLabel::Similar;
constexpr auto Diff = PairLabel::Different;

}  // namespace

TEST_CASE("pair_iou worked example") {
    const auto r = pair_iou(labeled({Id, Sim, Diff}), labeled({Id, Diff, Diff}));
    CHECK(r.iou_id == doctest::Approx(1.0));
    CHECK(r.iou_sim == doctest::Approx(0.0));
    CHECK(r.iou_diff == doctest::Approx(0.5));
    CHECK(r.overall == doctest::Approx(0.5));
    CHECK(r.n_pairs == 3);
}

TEST_CASE("perfect predictions score one") {
    const auto gt = labeled({Id, Sim, Diff, Diff});
    const auto r = pair_iou(gt, gt);
    CHECK(r.overall == doctest::Approx(1.0));
}

TEST_CASE("a class absent from both sides counts as one and is flagged") {
    const auto r = pair_iou(labeled({Id, Diff}), labeled({Id, Diff}));
    CHECK(r.iou_sim == 1.0);
    REQUIRE(r.empty_classes.size() == 1);
    CHECK(r.empty_classes[0] == Sim);
}

TEST_CASE("universe mismatch is an error") {
    auto pred = labeled({Id, Sim});
    CHECK_THROWS_AS(pair_iou(labeled({Id, Sim, Diff}), pred), Error);
    pred = labeled({Id, Sim, Diff});
    auto gt = pred;
    gt.erase(key(2));
    gt[PairKey("zz", "zzz")] = Diff;
    try {
        pair_iou(gt, pred);
        FAIL("expected UniverseMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UniverseMismatch);
    }
}

TEST_CASE("pair_iou equals the set oracle on random labelings") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 10000);
        std::vector<int> g(n), p(n);
        std::vector<PairLabel> gl(n), pl(n);
        for (int i = 0; i < n; ++i) {
            g[i] = static_cast<int>(rng() % 3);
            p[i] = static_cast<int>(rng() % 3);
            gl[i] = static_cast<PairLabel>(g[i]);
            pl[i] = static_cast<PairLabel>(p[i]);
        }
        const auto r = pair_iou(labeled(gl), labeled(pl));
        const auto o = oracle::iou(g, p);
        CHECK(r.iou_id == doctest::Approx(o.id).epsilon(1e-12));
        CHECK(r.iou_sim == doctest::Approx(o.sim).epsilon(1e-12));
        CHECK(r.iou_diff == doctest::Approx(o.diff).epsilon(1e-12));
        CHECK(r.overall == doctest::Approx(o.overall).epsilon(1e-12));
    }
}

TEST_CASE("confusion counts sum to the pair count") {
    PairConfusion c;
    c.add(Id, Sim, 3);
    c.add(Diff, Diff, 4);
    CHECK(c.total() == 7);
    PairConfusion d;
    d.add(Sim, Sim);
    d += c;
    CHECK(d.total() == 8);
}

TEST_CASE("greedy association worked examples") {
    auto a = associate_instances({{0.9, 0.1}, {0.2, 0.6}});
    REQUIRE(a.matches.size() == 2);
    CHECK(a.matches[0] == std::make_pair(0, 0));
    CHECK(a.matches[1] == std::make_pair(1, 1));
    CHECK(a.unmatched_gt.empty());

    a = associate_instances({{0.4}});
    CHECK(a.matches.empty());
    CHECK(a.unmatched_gt == std::vector<int>{0});
    CHECK(a.unmatched_pred == std::vector<int>{0});

    a = associate_instances({{0.9, 0.8}, {0.85, 0.1}});
    REQUIRE(a.matches.size() == 1);
    CHECK(a.matches[0] == std::make_pair(0, 0));
    CHECK(a.unmatched_gt == std::vector<int>{1});
}

TEST_CASE("optimal association can beat greedy") {
    // Greedy takes 0.9 and then nothing; optimal takes 0.8 + 0.8.
    const std::vector<std::vector<double>> m{{0.9, 0.8}, {0.8, 0.1}};
    CHECK(associate_instances(m, 0.5, false).matches.size() == 1);
    const auto opt = associate_instances(m, 0.5, true);
    REQUIRE(opt.matches.size() == 2);
    for (auto [p, g] : opt.matches) CHECK(m[p][g] >= 0.5);
}

TEST_CASE("association is one-to-one above threshold on random matrices") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        const int np = 1 + static_cast<int>(rng() % 8), ng = 1 + static_cast<int>(rng() % 8);
        std::vector<std::vector<double>> m(np, std::vector<double>(ng));
        for (auto& row : m)
            for (double& v : row) v = u(rng);
        for (bool optimal : {false, true}) {
            const auto a = associate_instances(m, 0.5, optimal);
            std::vector<int> ps, gs;
            for (auto [p, g] : a.matches) {
                CHECK(m[p][g] >= 0.5);
                ps.push_back(p);
                gs.push_back(g);
            }
            std::sort(ps.begin(), ps.end());
            std::sort(gs.begin(), gs.end());
            CHECK(std::adjacent_find(ps.begin(), ps.end()) == ps.end());
            CHECK(std::adjacent_find(gs.begin(), gs.end()) == gs.end());
            CHECK(a.matches.size() + a.unmatched_gt.size() == static_cast<size_t>(ng));
            CHECK(a.matches.size() + a.unmatched_pred.size() == static_cast<size_t>(np));
        }
    }
}

TEST_CASE("unknown-class accounting for a lost identical member") {
    // GT objects g0..g3: (g0,g1) Id, (g0,g2) Sim, (g2,g3) Diff. g1 has no predicted instance.
    const std::vector<std::string> gt_ids{"g0", "g1", "g2", "g3"};
    const std::vector<std::string> pred_ids{"p0", "p2", "p3"};
    LabeledPairs gt{{PairKey("g0", "g1"), Id}, {PairKey("g0", "g2"), Sim}, {PairKey("g2", "g3"), Diff}};
    LabeledPairs pred{{PairKey("p0", "p2"), Sim}, {PairKey("p2", "p3"), Diff}};
    const auto mapping = associate_instances({{0.9, 0.3, 0.0, 0.0}, {0.0, 0.0, 0.8, 0.0}, {0.0, 0.0, 0.0, 0.7}});
    CHECK(mapping.unmatched_gt == std::vector<int>{1});
    const auto r = evaluate_predicted_instances(gt, gt_ids, pred, pred_ids, mapping);
    CHECK(r.iou_id == 0.0);
    CHECK(r.iou_sim == 1.0);
    CHECK(r.iou_diff == 1.0);
    CHECK(r.overall == doctest::Approx(2.0 / 3.0));
    CHECK(r.n_pairs == 3);
}

TEST_CASE("an empty mapping zeroes every populated class") {
    const std::vector<std::string> gt_ids{"g0", "g1", "g2"};
    LabeledPairs gt{{PairKey("g0", "g1"), Id}, {PairKey("g0", "g2"), Sim}, {PairKey("g1", "g2"), Diff}};
    const auto r = evaluate_predicted_instances(gt, gt_ids, {}, {}, Association{{}, {0, 1, 2}, {}});
    CHECK(r.iou_id == 0.0);
    CHECK(r.iou_sim == 0.0);
    CHECK(r.iou_diff == 0.0);
}

TEST_CASE("pair order never changes the report") {
    std::vector<PairLabel> g{Id, Sim, Diff, Id, Diff, Sim, Diff};
    std::vector<PairLabel> p{Id, Diff, Diff, Sim, Diff, Sim, Id};
    const auto r1 = pair_iou(labeled(g), labeled(p));
    std::mt19937_64 rng(1);
    std::vector<int> perm{0, 1, 2, 3, 4, 5, 6};
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<PairLabel> g2, p2;
    for (int i : perm) {
        g2.push_back(g[i]);
        p2.push_back(p[i]);
    }
    const auto r2 = pair_iou(labeled(g2), labeled(p2));
    CHECK(r1.overall == r2.overall);
    CHECK(r1.iou_sim == r2.iou_sim);
}
