#include "lookalike/encoder.h"

#include <cmath>

#include "lookalike/errors.h"
#include "lookalike/log.h"
#include "lookalike/rng.h"
#include "lookalike/tensor_io.h"

namespace lookalike {

using ag::Mat;
using ag::Var;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointMagic = "LOOKALIKE-CHECKPOINT";

Mat gaussian(int rows, int cols, double stddev, Rng& rng) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
    return m;
}

}  // namespace

void EncoderConfig::validate() const {
    if (n_blocks < 1) fail(ErrorKind::Invariant, "n_blocks must be >= 1");
    if (embed_dim <= 0 || n_heads <= 0 || embed_dim % n_heads != 0)
        fail(ErrorKind::Invariant, "embed_dim must be a positive multiple of n_heads");
    if (max_views < 1) fail(ErrorKind::Invariant, "max_views must be >= 1");
    if (mlp_ratio < 1) fail(ErrorKind::Invariant, "mlp_ratio must be >= 1");
}

json to_json(const EncoderConfig& cfg) {
    return json{{"n_blocks", cfg.n_blocks},
                {"embed_dim", cfg.embed_dim},
                {"n_heads", cfg.n_heads},
                {"max_views", cfg.max_views},
                {"mlp_ratio", cfg.mlp_ratio},
                {"use_frame_embeddings", cfg.use_frame_embeddings},
                {"use_object_embeddings", cfg.use_object_embeddings},
                {"use_positional_embeddings", cfg.use_positional_embeddings},
                {"symmetrize", cfg.symmetrize}};
}

EncoderConfig encoder_config_from_json(const json& doc) {
    EncoderConfig cfg;
    try {
        cfg.n_blocks = doc.value("n_blocks", cfg.n_blocks);
        cfg.embed_dim = doc.value("embed_dim", cfg.embed_dim);
        cfg.n_heads = doc.value("n_heads", cfg.n_heads);
        cfg.max_views = doc.value("max_views", cfg.max_views);
        cfg.mlp_ratio = doc.value("mlp_ratio", cfg.mlp_ratio);
        cfg.use_frame_embeddings = doc.value("use_frame_embeddings", cfg.use_frame_embeddings);
        cfg.use_object_embeddings = doc.value("use_object_embeddings", cfg.use_object_embeddings);
        cfg.use_positional_embeddings = doc.value("use_positional_embeddings", cfg.use_positional_embeddings);
        cfg.symmetrize = doc.value("symmetrize", cfg.symmetrize);
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("encoder config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

Mat cosine_positional_embedding(int grid_rows, int grid_cols, int dim) {
    Mat table = Mat::Zero(grid_rows * grid_cols, dim);
    const int half = dim / 2;
    const int pairs = half / 2;
    for (int r = 0; r < grid_rows; ++r) {
        for (int c = 0; c < grid_cols; ++c) {
            const int row = r * grid_cols + c;
            for (int i = 0; i < pairs; ++i) {
                const double freq = 1.0 / std::pow(10000.0, static_cast<double>(i) / std::max(1, pairs));
                table(row, 2 * i) = std::sin(r * freq);
                table(row, 2 * i + 1) = std::cos(r * freq);
                table(row, half + 2 * i) = std::sin(c * freq);
                table(row, half + 2 * i + 1) = std::cos(c * freq);
            }
        }
    }
    return table;
}

PairEncoder::PairEncoder(EncoderConfig cfg, int feature_dim, int grid_rows, int grid_cols, int projection_in,
                         uint64_t seed)
    : cfg_(std::move(cfg)), feature_dim_(feature_dim), grid_rows_(grid_rows), grid_cols_(grid_cols) {
    cfg_.validate();
    init_parameters(projection_in, seed);
    build_layout();
}

PairEncoder::PairEncoder(EncoderConfig cfg, int feature_dim, int grid_rows, int grid_cols, ag::ParameterSet params)
    : cfg_(std::move(cfg)), feature_dim_(feature_dim), grid_rows_(grid_rows), grid_cols_(grid_cols),
      params_(std::move(params)) {
    cfg_.validate();
    build_layout();
}

void PairEncoder::init_parameters(int projection_in, uint64_t seed) {
    Rng rng(seed);
    const int d = cfg_.embed_dim;
    const int hidden = d * cfg_.mlp_ratio;
    if (projection_in > 0) FeatureProjection::create(params_, projection_in, feature_dim_, rng.next());
    params_.add("input.weight", gaussian(feature_dim_, d, 1.0 / std::sqrt(feature_dim_), rng));
    params_.add("input.bias", Mat::Zero(1, d));
    if (cfg_.use_frame_embeddings) params_.add("frame_embedding", gaussian(cfg_.max_views, d, 0.02, rng));
    if (cfg_.use_object_embeddings) params_.add("object_embedding", gaussian(2, d, 0.02, rng));
    static const char* stages[] = {"frame", "object", "global"};
    for (int b = 0; b < cfg_.n_blocks; ++b) {
        for (const char* stage : stages) {
            const std::string pre = "blocks." + std::to_string(b) + "." + stage + ".";
            params_.add(pre + "ln1.gamma", Mat::Ones(1, d));
            params_.add(pre + "ln1.beta", Mat::Zero(1, d));
            for (const char* w : {"q", "k", "v", "o"}) {
                params_.add(pre + "w" + w, gaussian(d, d, 1.0 / std::sqrt(d), rng));
                params_.add(pre + "b" + w, Mat::Zero(1, d));
            }
            params_.add(pre + "ln2.gamma", Mat::Ones(1, d));
            params_.add(pre + "ln2.beta", Mat::Zero(1, d));
            params_.add(pre + "fc1.weight", gaussian(d, hidden, 1.0 / std::sqrt(d), rng));
            params_.add(pre + "fc1.bias", Mat::Zero(1, hidden));
            params_.add(pre + "fc2.weight", gaussian(hidden, d, 1.0 / std::sqrt(hidden), rng));
            params_.add(pre + "fc2.bias", Mat::Zero(1, d));
        }
    }
}

void PairEncoder::build_layout() {
    auto need = [this](const std::string& name) {
        const int i = params_.index_of(name);
        if (i < 0) fail(ErrorKind::Schema, "encoder parameter '" + name + "' missing");
        return i;
    };
    projection_ = FeatureProjection::bind(params_);
    in_w_ = need("input.weight");
    in_b_ = need("input.bias");
    if (params_.value(in_w_).rows() != feature_dim_ || params_.value(in_w_).cols() != cfg_.embed_dim)
        fail(ErrorKind::Shape, "input projection does not match feature_dim/embed_dim");
    frame_emb_ = cfg_.use_frame_embeddings ? need("frame_embedding") : -1;
    object_emb_ = cfg_.use_object_embeddings ? need("object_embedding") : -1;
    blocks_.clear();
    static const char* stages[] = {"frame", "object", "global"};
    for (int b = 0; b < cfg_.n_blocks; ++b) {
        std::array<Layer, 3> block{};
        for (int s = 0; s < 3; ++s) {
            const std::string pre = "blocks." + std::to_string(b) + "." + stages[s] + ".";
            block[s] = Layer{need(pre + "ln1.gamma"), need(pre + "ln1.beta"), need(pre + "wq"),      need(pre + "bq"),
                             need(pre + "wk"),        need(pre + "bk"),       need(pre + "wv"),      need(pre + "bv"),
                             need(pre + "wo"),        need(pre + "bo"),       need(pre + "ln2.gamma"), need(pre + "ln2.beta"),
                             need(pre + "fc1.weight"), need(pre + "fc1.bias"), need(pre + "fc2.weight"), need(pre + "fc2.bias")};
        }
        blocks_.push_back(block);
    }
    positional_ = cosine_positional_embedding(grid_rows_, grid_cols_, cfg_.embed_dim);
}

void PairEncoder::check_views(const std::vector<const Mat*>& views_a, const std::vector<const Mat*>& views_b) const {
    for (const auto* views : {&views_a, &views_b}) {
        if (views->empty() || static_cast<int>(views->size()) > cfg_.max_views)
            fail(ErrorKind::ViewCount, "each object needs between 1 and " + std::to_string(cfg_.max_views) +
                                           " views, got " + std::to_string(views->size()));
        for (const Mat* v : *views)
            if (v->rows() != grid_rows_ * grid_cols_ || v->cols() != input_dim())
                fail(ErrorKind::Shape, "view features are " + std::to_string(v->rows()) + "x" + std::to_string(v->cols()) +
                                           ", expected " + std::to_string(grid_rows_ * grid_cols_) + "x" +
                                           std::to_string(input_dim()));
    }
}

std::optional<Var> PairEncoder::stage_embeddings(ag::Tape& tape, const std::vector<int>& slots, const std::vector<int>& objects,
                                                 std::optional<Var> positional) const {
    std::optional<Var> out = positional;
    auto accumulate = [&](Var v) { out = out ? tape.add(*out, v) : v; };
    if (frame_emb_ >= 0) accumulate(tape.gather_rows(tape.parameter(params_, frame_emb_), slots));
    if (object_emb_ >= 0) accumulate(tape.gather_rows(tape.parameter(params_, object_emb_), objects));
    return out;
}

Var PairEncoder::run_layer(ag::Tape& tape, Var x, std::optional<Var> embeddings, const Layer& layer,
                           const std::vector<std::pair<int, int>>& groups) const {
    const int d = cfg_.embed_dim;
    const int heads = cfg_.n_heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    auto param = [&](int i) { return tape.parameter(params_, i); };
    auto linear = [&](Var in, int w, int b) { return tape.add_row(tape.matmul(in, param(w)), param(b)); };

    // Embeddings condition the attention input only; the residual stream stays free of them.
    const Var h = tape.layer_norm(embeddings ? tape.add(x, *embeddings) : x, param(layer.ln1_g), param(layer.ln1_b));
    const Var q = linear(h, layer.wq, layer.bq);
    const Var k = linear(h, layer.wk, layer.bk);
    const Var v = linear(h, layer.wv, layer.bv);
    const int total = static_cast<int>(tape.value(x).rows());

    std::vector<Var> group_out;
    group_out.reserve(groups.size());
    for (const auto& [start, len] : groups) {
        const bool whole = start == 0 && len == total;
        const Var qg = whole ? q : tape.rows(q, start, len);
        const Var kg = whole ? k : tape.rows(k, start, len);
        const Var vg = whole ? v : tape.rows(v, start, len);
        std::vector<Var> head_out;
        head_out.reserve(heads);
        for (int hd = 0; hd < heads; ++hd) {
            const Var qh = heads == 1 ? qg : tape.cols(qg, hd * dh, dh);
            const Var kh = heads == 1 ? kg : tape.cols(kg, hd * dh, dh);
            const Var vh = heads == 1 ? vg : tape.cols(vg, hd * dh, dh);
            const Var attn = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), scale));
            head_out.push_back(tape.matmul(attn, vh));
        }
        group_out.push_back(heads == 1 ? head_out.front() : tape.hcat(head_out));
    }
    const Var attended = group_out.size() == 1 ? group_out.front() : tape.vcat(group_out);
    x = tape.add(x, linear(attended, layer.wo, layer.bo));

    const Var h2 = tape.layer_norm(x, param(layer.ln2_g), param(layer.ln2_b));
    const Var mlp = linear(tape.gelu(linear(h2, layer.fc1_w, layer.fc1_b)), layer.fc2_w, layer.fc2_b);
    return tape.add(x, mlp);
}

std::pair<Var, Var> PairEncoder::forward_impl(ag::Tape& tape, const std::vector<const Mat*>& views_a,
                                              const std::vector<const Mat*>& views_b, const Options& options,
                                              std::vector<std::pair<int, int>>* shapes) const {
    check_views(views_a, views_b);
    const int np = grid_rows_ * grid_cols_;
    const int na = static_cast<int>(views_a.size());
    const int nb = static_cast<int>(views_b.size());

    std::vector<Var> tokens;
    std::vector<int> slots;
    std::vector<int> objects;
    std::vector<std::pair<int, int>> frame_groups;
    const Var in_w = tape.parameter(params_, in_w_);
    const Var in_b = tape.parameter(params_, in_b_);
    int offset = 0;
    for (int o = 0; o < 2; ++o) {
        const auto& views = o == 0 ? views_a : views_b;
        for (size_t j = 0; j < views.size(); ++j) {
            Var f = projection_.apply(tape, params_, tape.constant(*views[j]));
            tokens.push_back(tape.add_row(tape.matmul(f, in_w), in_b));
            slots.insert(slots.end(), np, static_cast<int>(j));
            objects.insert(objects.end(), np, o);
            frame_groups.emplace_back(offset, np);
            offset += np;
        }
    }
    Var x = tape.vcat(tokens);
    if (shapes) shapes->emplace_back(static_cast<int>(tape.value(x).rows()), static_cast<int>(tape.value(x).cols()));

    if (!options.identity_attention) {
        const std::vector<std::pair<int, int>> object_groups{{0, na * np}, {na * np, nb * np}};
        const std::vector<std::pair<int, int>> global_group{{0, (na + nb) * np}};
        std::optional<Var> pos;
        if (cfg_.use_positional_embeddings) pos = tape.constant(positional_.replicate(na + nb, 1));
        for (const auto& block : blocks_) {
            for (int s = 0; s < 3; ++s) {
                const auto& groups = s == 0 ? frame_groups : (s == 1 ? object_groups : global_group);
                x = run_layer(tape, x, stage_embeddings(tape, slots, objects, pos), block[s], groups);
                if (shapes) shapes->emplace_back(static_cast<int>(tape.value(x).rows()), static_cast<int>(tape.value(x).cols()));
            }
        }
    }

    auto aggregate = [&](int first_view, int count) {
        std::vector<Var> per_view;
        per_view.reserve(count);
        for (int j = 0; j < count; ++j) per_view.push_back(tape.rows(x, (first_view + j) * np, np));
        return tape.flatten_normalize(count == 1 ? per_view.front() : tape.mean_of(per_view));
    };
    return {aggregate(0, na), aggregate(na, nb)};
}

std::pair<Var, Var> PairEncoder::forward(ag::Tape& tape, const std::vector<const Mat*>& views_a,
                                         const std::vector<const Mat*>& views_b, const Options& options) const {
    return forward_impl(tape, views_a, views_b, options, nullptr);
}

std::vector<std::pair<int, int>> PairEncoder::stage_shapes(const std::vector<const Mat*>& views_a,
                                                           const std::vector<const Mat*>& views_b) const {
    ag::Tape tape;
    std::vector<std::pair<int, int>> shapes;
    forward_impl(tape, views_a, views_b, Options{}, &shapes);
    return shapes;
}

std::pair<ObjectEmbedding, ObjectEmbedding> PairEncoder::encode_pair(const std::vector<PatchFeatureTensor>& views_a,
                                                                     const std::vector<PatchFeatureTensor>& views_b,
                                                                     const Options& options) const {
    std::vector<const Mat*> a;
    std::vector<const Mat*> b;
    for (const auto& v : views_a) a.push_back(&v.patches);
    for (const auto& v : views_b) b.push_back(&v.patches);
    for (const auto* views : {&views_a, &views_b})
        for (const auto& v : *views)
            if (v.grid_rows != grid_rows_ || v.grid_cols != grid_cols_) fail(ErrorKind::Shape, "view grid shape mismatch");
    ag::Tape tape;
    const auto [ea, eb] = forward(tape, a, b, options);
    return {ObjectEmbedding{tape.value(ea).row(0)}, ObjectEmbedding{tape.value(eb).row(0)}};
}

// --- feature cache -------------------------------------------------------------------------

std::shared_ptr<const PatchFeatureTensor> FeatureCache::get(const ViewCrop& view, const std::filesystem::path& root) {
    const std::string key = (root / view.image).string();
    {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto it = entries_.find(key);
        if (it != entries_.end()) return it->second;
    }
    const auto pre = preprocess(view, root, backbone_.config().input_size, backbone_.channel_stats());
    auto features = std::make_shared<const PatchFeatureTensor>(backbone_.extract(pre.image));
    std::lock_guard<std::mutex> lock(mutex_);
    return entries_.emplace(key, std::move(features)).first->second;
}

// --- model -------------------------------------------------------------------------------

LookalikeModel::LookalikeModel(BackboneConfig backbone, EncoderConfig encoder, Thresholds thresholds, uint64_t seed)
    : backbone_(make_backbone(backbone)), thresholds_(thresholds) {
    thresholds_.validate();
    const auto [rows, cols] = backbone_->grid_shape();
    const bool project = backbone_->has_trainable_projection();
    const int feature_dim = project ? backbone_->config().output_dim : backbone_->feature_dim();
    encoder_ = std::make_unique<PairEncoder>(std::move(encoder), feature_dim, rows, cols,
                                             project ? backbone_->feature_dim() : 0, seed);
}

LookalikeModel::LookalikeModel(std::unique_ptr<Backbone> backbone, std::unique_ptr<PairEncoder> encoder, Thresholds thresholds)
    : backbone_(std::move(backbone)), encoder_(std::move(encoder)), thresholds_(thresholds) {}

SimilarityResult LookalikeModel::score_pair(const ObjectInstance& a, const ObjectInstance& b, int k,
                                            const std::filesystem::path& root, FeatureCache* cache) const {
    if (k < 1) fail(ErrorKind::Precondition, "score_pair requires k >= 1");
    if (a.semantic_class != b.semantic_class)
        log_warning("scoring cross-class pair (" + a.object_id + "," + b.object_id + ")");
    const bool swap = b.object_id < a.object_id;
    const ObjectInstance& first = swap ? b : a;
    const ObjectInstance& second = swap ? a : b;
    const int views = std::min(k, encoder_->config().max_views);

    auto features = [&](const ObjectInstance& object) {
        std::vector<std::shared_ptr<const PatchFeatureTensor>> out;
        for (const auto& view : select_top_views(object, views)) {
            if (cache) {
                out.push_back(cache->get(view, root));
            } else {
                const auto pre = preprocess(view, root, backbone_->config().input_size, backbone_->channel_stats());
                out.push_back(std::make_shared<const PatchFeatureTensor>(backbone_->extract(pre.image)));
            }
        }
        return out;
    };
    const auto fa = features(first);
    const auto fb = features(second);
    std::vector<const Mat*> pa;
    std::vector<const Mat*> pb;
    for (const auto& f : fa) pa.push_back(&f->patches);
    for (const auto& f : fb) pb.push_back(&f->patches);

    auto score = [&](const std::vector<const Mat*>& x, const std::vector<const Mat*>& y) {
        ag::Tape tape;
        const auto [ex, ey] = encoder_->forward(tape, x, y);
        return similarity(ObjectEmbedding{tape.value(ex).row(0)}, ObjectEmbedding{tape.value(ey).row(0)});
    };
    SimilarityResult result = score(pa, pb);
    if (encoder_->config().symmetrize) {
        result.score = 0.5 * (result.score + score(pb, pa).score);
        result.distance = 1.0 - result.score;
    }
    result.a = first.object_id;
    result.b = second.object_id;
    return result;
}

void LookalikeModel::save(const std::filesystem::path& path, const TrainSnapshot* snapshot) const {
    TensorContainer c;
    c.meta["format_version"] = kFormatVersion;
    c.meta["backbone"] = to_json(backbone_->config());
    c.meta["encoder"] = to_json(encoder_->config());
    c.meta["thresholds"] = to_json(thresholds_);
    c.meta["feature_dim"] = encoder_->feature_dim();
    c.meta["grid"] = {encoder_->grid_rows(), encoder_->grid_cols()};
    const auto& params = encoder_->params();
    for (size_t i = 0; i < params.size(); ++i) c.tensors.emplace_back(params.name(i), params.value(i));
    if (snapshot) {
        c.meta["train_state"] = snapshot->state;
        for (size_t i = 0; i < snapshot->adam_m.size(); ++i) c.tensors.emplace_back("adam.m/" + params.name(i), snapshot->adam_m[i]);
        for (size_t i = 0; i < snapshot->adam_v.size(); ++i) c.tensors.emplace_back("adam.v/" + params.name(i), snapshot->adam_v[i]);
    }
    write_container(path, kCheckpointMagic, c);
}

LookalikeModel LookalikeModel::load(const std::filesystem::path& path, TrainSnapshot* snapshot) {
    TensorContainer c = read_container(path, kCheckpointMagic);
    if (c.meta.value("format_version", std::string()) != kFormatVersion)
        fail(ErrorKind::Schema, path.string() + ": unsupported checkpoint version");
    BackboneConfig bcfg;
    EncoderConfig ecfg;
    Thresholds thresholds;
    int feature_dim = 0;
    std::array<int, 2> grid{};
    try {
        bcfg = backbone_config_from_json(c.meta.at("backbone"));
        ecfg = encoder_config_from_json(c.meta.at("encoder"));
        thresholds = thresholds_from_json(c.meta.at("thresholds"));
        feature_dim = c.meta.at("feature_dim").get<int>();
        grid = c.meta.at("grid").get<std::array<int, 2>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, path.string() + ": " + e.what());
    }
    auto backbone = make_backbone(bcfg);
    if (backbone->grid_shape() != std::pair<int, int>{grid[0], grid[1]})
        fail(ErrorKind::Shape, path.string() + ": backbone grid does not match checkpoint");

    ag::ParameterSet params;
    std::map<std::string, const Mat*> moments_m;
    std::map<std::string, const Mat*> moments_v;
    for (const auto& [name, m] : c.tensors) {
        if (name.rfind("adam.m/", 0) == 0)
            moments_m[name.substr(7)] = &m;
        else if (name.rfind("adam.v/", 0) == 0)
            moments_v[name.substr(7)] = &m;
        else
            params.add(name, m);
    }
    if (snapshot) {
        snapshot->state = c.meta.value("train_state", json::object());
        snapshot->adam_m.clear();
        snapshot->adam_v.clear();
        if (!moments_m.empty()) {
            for (size_t i = 0; i < params.size(); ++i) {
                const auto im = moments_m.find(params.name(i));
                const auto iv = moments_v.find(params.name(i));
                if (im == moments_m.end() || iv == moments_v.end())
                    fail(ErrorKind::Schema, path.string() + ": optimizer state incomplete");
                snapshot->adam_m.push_back(*im->second);
                snapshot->adam_v.push_back(*iv->second);
            }
        }
    }
    auto encoder = std::make_unique<PairEncoder>(ecfg, feature_dim, grid[0], grid[1], std::move(params));
    return LookalikeModel(std::move(backbone), std::move(encoder), thresholds);
}

}  // namespace lookalike
