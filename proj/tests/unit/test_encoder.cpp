#include "doctest.h"

#include <random>

#include "fixtures.h"
#include "lookalike/encoder.h"
#include "lookalike/errors.h"

using namespace lookalike;
using fixture::TempDir;

namespace {

constexpr int kRows = 2, kCols = 2, kDim = 8;

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.embed_dim = 16;
    cfg.n_heads = 2;
    cfg.max_views = 5;
    cfg.mlp_ratio = 2;
    return cfg;
}

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

// Projected, view-averaged, flattened and normalized input tokens, computed by hand.
Eigen::RowVectorXd hand_identity(const PairEncoder& enc, const std::vector<PatchFeatureTensor>& v) {
    const auto& w = enc.params().value(enc.params().index_of("input.weight"));
    const auto& b = enc.params().value(enc.params().index_of("input.bias"));
    ag::Mat sum = ag::Mat::Zero(kRows * kCols, w.cols());
    for (const auto& t : v) {
        ag::Mat projected = t.patches * w;
        projected.rowwise() += b.row(0);
        sum += projected;
    }
    sum /= static_cast<double>(v.size());
    Eigen::RowVectorXd flat = Eigen::Map<const Eigen::RowVectorXd>(sum.data(), sum.size());
    return flat / flat.norm();
}

}  // namespace

TEST_CASE("embeddings have unit norm") {
    std::mt19937_64 rng(1);
    PairEncoder enc(small_config(), kDim, kRows, kCols, 0, 7);
    for (int na = 1; na <= 5; ++na) {
        const auto [ea, eb] = enc.encode_pair(views(rng, na), views(rng, 6 - na));
        CHECK(std::abs(ea.features.norm() - 1.0) < 1e-5);
        CHECK(std::abs(eb.features.norm() - 1.0) < 1e-5);
        CHECK(ea.features.size() == kRows * kCols * 16);
    }
}

TEST_CASE("identity attention reproduces the projected input mean") {
    std::mt19937_64 rng(2);
    PairEncoder enc(small_config(), kDim, kRows, kCols, 0, 7);
    PairEncoder::Options diag{true};
    for (int n : {1, 3, 5}) {
        const auto va = views(rng, n);
        const auto vb = views(rng, 2);
        const auto [ea, eb] = enc.encode_pair(va, vb, diag);
        CHECK((ea.features - hand_identity(enc, va)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((eb.features - hand_identity(enc, vb)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("view order does not matter without frame embeddings") {
    std::mt19937_64 rng(3);
    auto cfg = small_config();
    cfg.use_frame_embeddings = false;
    PairEncoder enc(cfg, kDim, kRows, kCols, 0, 7);
    auto va = views(rng, 4);
    const auto vb = views(rng, 3);
    const auto [ea, eb] = enc.encode_pair(va, vb);
    std::reverse(va.begin(), va.end());
    std::swap(va[0], va[2]);
    const auto [ea2, eb2] = enc.encode_pair(va, vb);
    CHECK(max_diff(ea, ea2) < 1e-5);
    CHECK(max_diff(eb, eb2) < 1e-5);
}

TEST_CASE("a view repeated five times equals the single view") {
    std::mt19937_64 rng(4);
    auto cfg = small_config();
    cfg.use_frame_embeddings = false;
    PairEncoder enc(cfg, kDim, kRows, kCols, 0, 7);
    const auto one = views(rng, 1);
    const auto vb = views(rng, 1);
    const std::vector<PatchFeatureTensor> five(5, one[0]);
    const std::vector<PatchFeatureTensor> five_b(5, vb[0]);
    const auto [e1, f1] = enc.encode_pair(one, vb);
    const auto [e5, f5] = enc.encode_pair(five, five_b);
    CHECK(max_diff(e1, e5) < 1e-5);
    CHECK(max_diff(f1, f5) < 1e-5);
}

TEST_CASE("swapping objects swaps embeddings without object embeddings") {
    std::mt19937_64 rng(5);
    auto cfg = small_config();
    cfg.use_object_embeddings = false;
    PairEncoder enc(cfg, kDim, kRows, kCols, 0, 7);
    const auto va = views(rng, 2), vb = views(rng, 3);
    const auto [ea, eb] = enc.encode_pair(va, vb);
    const auto [eb2, ea2] = enc.encode_pair(vb, va);
    CHECK(std::abs(similarity(ea, eb).score - similarity(ea2, eb2).score) < 1e-5);
    CHECK(max_diff(ea, ea2) < 1e-5);
}

TEST_CASE("attention stages preserve the token matrix shape") {
    std::mt19937_64 rng(6);
    auto cfg = small_config();
    cfg.n_blocks = 2;
    PairEncoder enc(cfg, kDim, kRows, kCols, 0, 7);
    const auto va = views(rng, 3), vb = views(rng, 2);
    std::vector<const ag::Mat*> pa, pb;
    for (const auto& v : va) pa.push_back(&v.patches);
    for (const auto& v : vb) pb.push_back(&v.patches);
    const auto shapes = enc.stage_shapes(pa, pb);
    REQUIRE(shapes.size() == 1 + 2 * 3);
    for (const auto& s : shapes) CHECK(s == std::make_pair(5 * kRows * kCols, 16));
}

TEST_CASE("every parameter receives a gradient") {
    std::mt19937_64 rng(7);
    PairEncoder enc(small_config(), kDim, kRows, kCols, 0, 7);
    auto grads = enc.params().zeros_like();
    for (int pair = 0; pair < 3; ++pair) {
        const auto va = views(rng, 1 + pair), vb = views(rng, 3 - pair);
        std::vector<const ag::Mat*> pa, pb;
        for (const auto& v : va) pa.push_back(&v.patches);
        for (const auto& v : vb) pb.push_back(&v.patches);
        ag::Tape tape;
        const auto [a, b] = enc.forward(tape, pa, pb);
        tape.backward(tape.dot(a, b));
        tape.accumulate_param_grads(grads);
    }
    for (size_t i = 0; i < grads.size(); ++i) {
        INFO(enc.params().name(i));
        CHECK(grads[i].cwiseAbs().maxCoeff() > 0);
    }
}

TEST_CASE("view count and shape errors") {
    std::mt19937_64 rng(8);
    PairEncoder enc(small_config(), kDim, kRows, kCols, 0, 7);
    auto kind = [&](const std::vector<PatchFeatureTensor>& a, const std::vector<PatchFeatureTensor>& b) {
        try {
            enc.encode_pair(a, b);
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::Io;
    };
    CHECK(kind({}, views(rng, 1)) == ErrorKind::ViewCount);
    CHECK(kind(views(rng, 6), views(rng, 1)) == ErrorKind::ViewCount);
    auto wrong = views(rng, 1);
    wrong[0].patches.conservativeResize(Eigen::NoChange, kDim + 1);
    CHECK(kind(wrong, views(rng, 1)) == ErrorKind::Shape);
}

TEST_CASE("similarity clamps the dot product") {
    ObjectEmbedding x{Eigen::RowVectorXd::Unit(3, 0)};
    ObjectEmbedding y{Eigen::RowVectorXd::Unit(3, 1)};
    ObjectEmbedding minus_x{-Eigen::RowVectorXd::Unit(3, 0)};
    auto r = similarity(x, x);
    CHECK(r.score == 1.0);
    CHECK(r.distance == 0.0);
    r = similarity(x, y);
    CHECK(r.score == 0.0);
    CHECK(r.distance == 1.0);
    CHECK(similarity(x, minus_x).score == 0.0);
    ObjectEmbedding short_one{Eigen::RowVectorXd::Unit(2, 0)};
    CHECK_THROWS_AS(similarity(x, short_one), Error);
}

TEST_CASE("cosine positional table splits rows and columns") {
    const auto pe = cosine_positional_embedding(2, 3, 8);
    CHECK(pe.rows() == 6);
    CHECK(pe.cols() == 8);
    // Same row, different column: first half equal.
    CHECK((pe.row(0).head(4) - pe.row(2).head(4)).cwiseAbs().maxCoeff() < 1e-12);
    // Same column, different row: second half equal.
    CHECK((pe.row(1).tail(4) - pe.row(4).tail(4)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("checkpoints reproduce scores bit for bit") {
    TempDir dir;
    const auto m = fixture::small_manifest(dir.path());
    BackboneConfig bb;
    bb.kind = BackboneKind::Toy;
    bb.input_size = 24;
    bb.patch_size = 12;
    bb.output_dim = 8;
    LookalikeModel model(bb, small_config(), Thresholds{}, 3);
    const auto& scene = m.scenes[0];
    const auto s1 = model.score_pair(*scene.find_object("a"), *scene.find_object("b"), 5, dir.path());
    const auto s2 = model.score_pair(*scene.find_object("a"), *scene.find_object("b"), 5, dir.path());
    CHECK(s1.score == s2.score);
    CHECK(s1.distance == 1.0 - s1.score);
    model.save(dir / "m.ckpt");
    const auto loaded = LookalikeModel::load(dir / "m.ckpt");
    const auto s3 = loaded.score_pair(*scene.find_object("a"), *scene.find_object("b"), 5, dir.path());
    CHECK(s3.score == s1.score);
    // Canonical order: argument order does not matter.
    const auto s4 = loaded.score_pair(*scene.find_object("b"), *scene.find_object("a"), 5, dir.path());
    CHECK(s4.score == s1.score);
    fixture::write_file(dir / "bad.ckpt", "garbage");
    CHECK_THROWS_AS(LookalikeModel::load(dir / "bad.ckpt"), Error);
}
