#include "doctest.h"

#include <random>

#include "lookalike/classifier.h"
#include "lookalike/errors.h"
#include "oracles.h"

using namespace lookalike;

namespace {

SimilarityResult result(const std::string& a, const std::string& b, double s) { return {s, 1 - s, a, b}; }

std::string node(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "n%02d", i);
    return buf;
}

}  // namespace

TEST_CASE("classify uses half-open bins") {
    const Thresholds t;
    CHECK(classify(0.66, t) == PairLabel::Identical);
    CHECK(classify(0.33, t) == PairLabel::Similar);
    CHECK(classify(0.3299, t) == PairLabel::Different);
    CHECK(classify(1.0, t) == PairLabel::Identical);
    CHECK(classify(0.0, t) == PairLabel::Different);
    CHECK_THROWS_AS(classify(1.01, t), Error);
    CHECK_THROWS_AS(classify(-0.01, t), Error);
}

TEST_CASE("classify is monotone in the score") {
    const Thresholds t;
    auto rank = [](PairLabel l) { return l == PairLabel::Different ? 0 : l == PairLabel::Similar ? 1 : 2; };
    int previous = 0;
    for (int i = 0; i <= 1000; ++i) {
        const int r = rank(classify(i / 1000.0, t));
        CHECK(r >= previous);
        previous = r;
    }
}

TEST_CASE("thresholds must be ordered inside the unit interval") {
    CHECK_NOTHROW(Thresholds{}.validate());
    CHECK_THROWS(Thresholds{0.7, 0.6}.validate());
    CHECK_THROWS(Thresholds{0.0, 0.6}.validate());
    CHECK_THROWS(Thresholds{0.3, 1.0}.validate());
}

TEST_CASE("group_scene worked examples") {
    const Thresholds t;
    auto g = group_scene({result("A", "B", 0.9), result("B", "C", 0.8), result("C", "D", 0.5)}, t);
    REQUIRE(g.identical_groups.size() == 1);
    CHECK(g.identical_groups[0] == std::vector<std::string>{"A", "B", "C"});
    REQUIRE(g.similar_pairs.size() == 1);
    CHECK(g.similar_pairs[0] == std::make_pair(std::string("C"), std::string("D")));

    g = group_scene({result("A", "B", 0.1), result("C", "D", 0.2)}, t);
    CHECK(g.identical_groups.empty());
    CHECK(g.similar_pairs.empty());

    g = group_scene({result("A", "B", 0.9), result("C", "D", 0.9), result("A", "C", 0.4)}, t);
    REQUIRE(g.identical_groups.size() == 2);
    CHECK(g.identical_groups[0] == std::vector<std::string>{"A", "B"});
    CHECK(g.identical_groups[1] == std::vector<std::string>{"C", "D"});
    REQUIRE(g.similar_pairs.size() == 1);
    CHECK(g.similar_pairs[0] == std::make_pair(std::string("A"), std::string("C")));
}

TEST_CASE("a similar pair inside one identical group is absorbed") {
    const Thresholds t;
    const auto g = group_scene({result("A", "B", 0.9), result("B", "C", 0.9), result("A", "C", 0.5)}, t);
    REQUIRE(g.identical_groups.size() == 1);
    CHECK(g.similar_pairs.empty());
}

TEST_CASE("duplicate pairs are rejected in either order") {
    const Thresholds t;
    CHECK_THROWS_AS(group_scene({result("A", "B", 0.9), result("B", "A", 0.1)}, t), Error);
}

TEST_CASE("group_scene equals brute-force components on random graphs") {
    std::mt19937_64 rng(3);
    const Thresholds t;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 49);
        const double density = std::uniform_real_distribution<double>(0.0, 3.0 / n)(rng);
        std::vector<SimilarityResult> results;
        std::vector<std::pair<int, int>> id_edges;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double r = std::uniform_real_distribution<double>(0, 1)(rng);
                if (r < density) {
                    results.push_back(result(node(i), node(j), 0.9));
                    id_edges.emplace_back(i, j);
                } else if (r < 2 * density) {
                    results.push_back(result(node(i), node(j), 0.1));
                }
            }
        const auto groups = group_scene(results, t).identical_groups;
        const auto expected = oracle::components(n, id_edges);
        REQUIRE(groups.size() == expected.size());
        for (size_t c = 0; c < groups.size(); ++c) {
            std::vector<std::string> names;
            for (int x : expected[c]) names.push_back(node(x));
            CHECK(groups[c] == names);
        }
    }
}

TEST_CASE("disjoint set unions by size and reports joins") {
    DisjointSet ds(4);
    CHECK(ds.unite(0, 1));
    CHECK_FALSE(ds.unite(1, 0));
    CHECK(ds.unite(2, 3));
    CHECK(ds.find(0) != ds.find(2));
    CHECK(ds.unite(1, 3));
    CHECK(ds.find(0) == ds.find(2));
    CHECK(ds.add() == 4);
    CHECK(ds.find(4) == 4);
}

TEST_CASE("prediction documents round-trip") {
    const Thresholds t;
    const auto doc = prediction_document("s", {result("a", "b", 0.9), result("a", "c", 0.5)}, t);
    CHECK(doc["scene_id"] == "s");
    CHECK(doc["pairs"].size() == 2);
    const auto parsed = prediction_from_json(doc);
    REQUIRE(parsed.pairs.size() == 2);
    CHECK(parsed.pairs[0].label == PairLabel::Identical);
    CHECK(parsed.pairs[1].label == PairLabel::Similar);
    CHECK(parsed.grouping.identical_groups.size() == 1);
}
