#include "lookalike/backbone.h"

#include <cmath>

#include "lookalike/errors.h"
#include "lookalike/rng.h"
#include "lookalike/tensor_io.h"

namespace lookalike {

using ag::Mat;
using nlohmann::json;

namespace {

constexpr const char* kVitMagic = "LOOKALIKE-VIT";

const char* kind_name(BackboneKind kind) { return kind == BackboneKind::Toy ? "toy" : "foundation"; }

BackboneKind parse_kind(const std::string& text) {
    if (text == "toy") return BackboneKind::Toy;
    if (text == "foundation") return BackboneKind::Foundation;
    fail(ErrorKind::Schema, "unknown backbone kind '" + text + "'");
}

Mat gaussian(int rows, int cols, double stddev, Rng& rng) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
    return m;
}

void layer_norm_rows(Mat& x, const Mat& gamma, const Mat& beta, double eps) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        x.row(r) = ((x.row(r).array() - mu) / std::sqrt(var + eps)).matrix();
        x.row(r).array() *= gamma.row(0).array();
        x.row(r) += beta.row(0);
    }
}

}  // namespace

void BackboneConfig::validate() const {
    if (output_dim <= 0) fail(ErrorKind::Invariant, "backbone output_dim must be positive");
    if (input_size <= 0) fail(ErrorKind::Invariant, "backbone input_size must be positive");
    for (size_t i = 1; i < intermediate_layers.size(); ++i)
        if (intermediate_layers[i] <= intermediate_layers[i - 1])
            fail(ErrorKind::Invariant, "intermediate_layers must be strictly increasing");
    for (int layer : intermediate_layers)
        if (layer < 1) fail(ErrorKind::Invariant, "intermediate_layers are 1-based");
    if (kind == BackboneKind::Toy && (patch_size <= 0 || patch_size % 2 != 0 || input_size % patch_size != 0))
        fail(ErrorKind::Invariant, "toy backbone requires an even patch_size dividing input_size");
}

json to_json(const BackboneConfig& cfg) {
    return json{{"kind", kind_name(cfg.kind)},
                {"intermediate_layers", cfg.intermediate_layers},
                {"output_dim", cfg.output_dim},
                {"input_size", cfg.input_size},
                {"patch_size", cfg.patch_size},
                {"seed", cfg.seed},
                {"weights", cfg.weights}};
}

BackboneConfig backbone_config_from_json(const json& doc) {
    BackboneConfig cfg;
    try {
        if (doc.contains("kind")) cfg.kind = parse_kind(doc["kind"].get<std::string>());
        if (doc.contains("intermediate_layers")) cfg.intermediate_layers = doc["intermediate_layers"].get<std::vector<int>>();
        if (doc.contains("output_dim")) cfg.output_dim = doc["output_dim"].get<int>();
        if (doc.contains("input_size")) cfg.input_size = doc["input_size"].get<int>();
        if (doc.contains("patch_size")) cfg.patch_size = doc["patch_size"].get<int>();
        if (doc.contains("seed")) cfg.seed = doc["seed"].get<uint64_t>();
        if (doc.contains("weights")) cfg.weights = doc["weights"].get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("backbone config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

PreprocessedView preprocess(const Image& image, const Image& mask, int input_size, const ChannelStats& stats) {
    if (image.empty()) fail(ErrorKind::Decode, "empty image");
    if (!mask.empty() && !image.same_size(mask)) fail(ErrorKind::Shape, "mask size differs from image size");
    Image rgb = image;
    if (rgb.channels == 1) {
        rgb = Image(image.width, image.height, 3);
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = image.at(x, y, 0);
    }
    Image binary(image.width, image.height, 1, 1.0f);
    if (!mask.empty()) {
        const Image gray = to_grayscale(mask);
        for (size_t i = 0; i < gray.data.size(); ++i) binary.data[i] = gray.data[i] > 0.0f ? 1.0f : 0.0f;
    }

    PreprocessedView out;
    out.image = resize_bilinear(pad_to_square(rgb), input_size, input_size);
    out.mask = resize_nearest(pad_to_square(binary), input_size, input_size);
    for (int y = 0; y < input_size; ++y)
        for (int x = 0; x < input_size; ++x)
            for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = (out.image.at(x, y, c) - stats.mean[c]) / stats.std[c];
    return out;
}

PreprocessedView preprocess(const ViewCrop& crop, const std::filesystem::path& root, int input_size,
                            const ChannelStats& stats) {
    const Image image = read_image(root / crop.image);
    const Image mask = crop.mask.empty() ? Image() : read_image(root / crop.mask);
    return preprocess(image, mask, input_size, stats);
}

void Backbone::check_input(const Image& normalized) const {
    if (normalized.width != config_.input_size || normalized.height != config_.input_size || normalized.channels != 3)
        fail(ErrorKind::Shape, "backbone expects a " + std::to_string(config_.input_size) + "x" +
                                   std::to_string(config_.input_size) + "x3 input, got " + std::to_string(normalized.width) +
                                   "x" + std::to_string(normalized.height) + "x" + std::to_string(normalized.channels));
}

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg) {
    cfg.validate();
    if (cfg.kind == BackboneKind::Toy) return std::make_unique<ToyBackbone>(cfg);
    return std::make_unique<VitBackbone>(cfg);
}

// --- toy ---------------------------------------------------------------------------------

ToyBackbone::ToyBackbone(BackboneConfig cfg) : Backbone(std::move(cfg)) {
    config_.validate();
    Rng rng(config_.seed ^ 0x70790b0e5eedull);
    projection_ = gaussian(kToyStats, config_.output_dim, 1.0 / std::sqrt(double(kToyStats)), rng);
}

std::pair<int, int> ToyBackbone::grid_shape() const {
    const int side = config_.input_size / config_.patch_size;
    return {side, side};
}

Mat ToyBackbone::tile_statistics(const Image& normalized) const {
    check_input(normalized);
    const auto [rows, cols] = grid_shape();
    const int p = config_.patch_size;
    const int h = p / 2;
    Mat stats(rows * cols, kToyStats);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int i = r * cols + c;
            for (int q = 0; q < 4; ++q) {
                const int y0 = r * p + (q / 2) * h;
                const int x0 = c * p + (q % 2) * h;
                double sum[3] = {0, 0, 0};
                for (int y = y0; y < y0 + h; ++y)
                    for (int x = x0; x < x0 + h; ++x)
                        for (int ch = 0; ch < 3; ++ch) sum[ch] += normalized.at(x, y, ch);
                for (int ch = 0; ch < 3; ++ch) stats(i, 3 * q + ch) = sum[ch] / (h * h);
            }
            stats(i, 12) = (r + 0.5) / rows;
            stats(i, 13) = (c + 0.5) / cols;
        }
    }
    return stats;
}

PatchFeatureTensor ToyBackbone::extract(const Image& normalized) const {
    const auto [rows, cols] = grid_shape();
    PatchFeatureTensor out;
    out.grid_rows = rows;
    out.grid_cols = cols;
    out.patches = tile_statistics(normalized) * projection_;
    return out;
}

uint64_t ToyBackbone::weights_checksum() const { return checksum({projection_}); }

// --- ViT ---------------------------------------------------------------------------------

VitBackbone::VitBackbone(BackboneConfig cfg) : Backbone(std::move(cfg)) {
    if (config_.weights.empty()) fail(ErrorKind::MissingFile, "foundation backbone requires a weights file");
    TensorContainer container = read_container(config_.weights, kVitMagic);
    try {
        const json& v = container.meta.at("vit");
        vit_.patch_size = v.at("patch_size").get<int>();
        vit_.embed_dim = v.at("embed_dim").get<int>();
        vit_.depth = v.at("depth").get<int>();
        vit_.num_heads = v.at("num_heads").get<int>();
        vit_.mlp_hidden = v.at("mlp_hidden").get<int>();
        vit_.pos_grid = v.at("pos_grid").get<int>();
        vit_.layerscale = v.value("layerscale", true);
        if (v.contains("mean")) vit_.stats.mean = v["mean"].get<std::array<float, 3>>();
        if (v.contains("std")) vit_.stats.std = v["std"].get<std::array<float, 3>>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("vit weights header: ") + e.what());
    }
    if (config_.input_size % vit_.patch_size != 0)
        fail(ErrorKind::Shape, "input_size must be a multiple of the ViT patch size");
    for (int layer : config_.intermediate_layers)
        if (layer > vit_.depth) fail(ErrorKind::Invariant, "intermediate layer exceeds ViT depth");
    config_.patch_size = vit_.patch_size;
    for (auto& [name, m] : container.tensors) weights_.emplace(name, std::move(m));
    w("patch_embed.proj.weight");
    w("pos_embed");
    w("norm.weight");
}

const Mat& VitBackbone::w(const std::string& name) const {
    const auto it = weights_.find(name);
    if (it == weights_.end()) fail(ErrorKind::Schema, "vit weights lack tensor '" + name + "'");
    return it->second;
}

std::pair<int, int> VitBackbone::grid_shape() const {
    const int side = config_.input_size / vit_.patch_size;
    return {side, side};
}

int VitBackbone::feature_dim() const {
    return vit_.embed_dim * static_cast<int>(config_.intermediate_layers.size() + 1);
}

std::vector<Mat> VitBackbone::run(const Image& normalized, const std::vector<int>& blocks) const {
    check_input(normalized);
    const int p = vit_.patch_size;
    const int d = vit_.embed_dim;
    const auto [rows, cols] = grid_shape();
    const int n = rows * cols;

    Mat patches(n, 3 * p * p);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            for (int ch = 0; ch < 3; ++ch)
                for (int ky = 0; ky < p; ++ky)
                    for (int kx = 0; kx < p; ++kx)
                        patches(r * cols + c, (ch * p + ky) * p + kx) = normalized.at(c * p + kx, r * p + ky, ch);

    Mat x(n + 1, d);
    x.row(0) = w("cls_token").row(0);
    x.bottomRows(n) = patches * w("patch_embed.proj.weight").transpose();
    x.bottomRows(n).rowwise() += w("patch_embed.proj.bias").row(0);

    // Bilinear resampling of the stored positional grid to the current patch grid.
    const Mat& pos = w("pos_embed");
    x.row(0) += pos.row(0);
    const int g = vit_.pos_grid;
    for (int r = 0; r < rows; ++r) {
        const double fy = rows == g ? r : std::clamp((r + 0.5) * g / rows - 0.5, 0.0, g - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, g - 1);
        const double wy = fy - y0;
        for (int c = 0; c < cols; ++c) {
            const double fx = cols == g ? c : std::clamp((c + 0.5) * g / cols - 0.5, 0.0, g - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, g - 1);
            const double wx = fx - x0;
            x.row(1 + r * cols + c) += (1 - wy) * ((1 - wx) * pos.row(1 + y0 * g + x0) + wx * pos.row(1 + y0 * g + x1)) +
                                       wy * ((1 - wx) * pos.row(1 + y1 * g + x0) + wx * pos.row(1 + y1 * g + x1));
        }
    }

    const int heads = vit_.num_heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Mat> collected;
    size_t next = 0;
    for (int b = 1; b <= vit_.depth; ++b) {
        const std::string pre = "blocks." + std::to_string(b - 1) + ".";
        Mat h = x;
        layer_norm_rows(h, w(pre + "norm1.weight"), w(pre + "norm1.bias"), 1e-6);
        Mat qkv = h * w(pre + "attn.qkv.weight").transpose();
        qkv.rowwise() += w(pre + "attn.qkv.bias").row(0);
        Mat attn_out(n + 1, d);
        for (int hd = 0; hd < heads; ++hd) {
            const Mat q = qkv.middleCols(hd * dh, dh);
            const Mat k = qkv.middleCols(d + hd * dh, dh);
            const Mat v = qkv.middleCols(2 * d + hd * dh, dh);
            Mat s = (q * k.transpose()) * scale;
            for (Eigen::Index r = 0; r < s.rows(); ++r) {
                s.row(r).array() = (s.row(r).array() - s.row(r).maxCoeff()).exp();
                s.row(r) /= s.row(r).sum();
            }
            attn_out.middleCols(hd * dh, dh) = s * v;
        }
        Mat proj = attn_out * w(pre + "attn.proj.weight").transpose();
        proj.rowwise() += w(pre + "attn.proj.bias").row(0);
        if (vit_.layerscale) proj.array().rowwise() *= w(pre + "ls1.gamma").row(0).array();
        x += proj;

        Mat h2 = x;
        layer_norm_rows(h2, w(pre + "norm2.weight"), w(pre + "norm2.bias"), 1e-6);
        Mat hidden = h2 * w(pre + "mlp.fc1.weight").transpose();
        hidden.rowwise() += w(pre + "mlp.fc1.bias").row(0);
        hidden = hidden.unaryExpr([](double t) { return 0.5 * t * (1.0 + std::erf(t / std::sqrt(2.0))); });
        Mat mlp = hidden * w(pre + "mlp.fc2.weight").transpose();
        mlp.rowwise() += w(pre + "mlp.fc2.bias").row(0);
        if (vit_.layerscale) mlp.array().rowwise() *= w(pre + "ls2.gamma").row(0).array();
        x += mlp;

        while (next < blocks.size() && blocks[next] == b) {
            Mat out = x.bottomRows(n);
            layer_norm_rows(out, w("norm.weight"), w("norm.bias"), 1e-6);
            collected.push_back(std::move(out));
            ++next;
        }
    }
    return collected;
}

PatchFeatureTensor VitBackbone::extract(const Image& normalized) const {
    std::vector<int> blocks = config_.intermediate_layers;
    blocks.push_back(vit_.depth);
    const std::vector<Mat> layers = run(normalized, blocks);
    const auto [rows, cols] = grid_shape();
    PatchFeatureTensor out;
    out.grid_rows = rows;
    out.grid_cols = cols;
    out.patches.resize(rows * cols, feature_dim());
    for (size_t i = 0; i < layers.size(); ++i)
        out.patches.middleCols(static_cast<Eigen::Index>(i) * vit_.embed_dim, vit_.embed_dim) = layers[i];
    return out;
}

PatchFeatureTensor VitBackbone::extract_last_layer(const Image& normalized) const {
    std::vector<Mat> layers = run(normalized, {vit_.depth});
    const auto [rows, cols] = grid_shape();
    return PatchFeatureTensor{rows, cols, std::move(layers.front())};
}

uint64_t VitBackbone::weights_checksum() const {
    std::vector<Mat> all;
    all.reserve(weights_.size());
    for (const auto& [n, m] : weights_) all.push_back(m);
    return checksum(all);
}

void write_vit_weights(const std::filesystem::path& path, const VitConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    const int d = cfg.embed_dim;
    const int p = cfg.patch_size;
    TensorContainer c;
    c.meta["vit"] = {{"patch_size", p},          {"embed_dim", d},       {"depth", cfg.depth},
                     {"num_heads", cfg.num_heads}, {"mlp_hidden", cfg.mlp_hidden}, {"pos_grid", cfg.pos_grid},
                     {"layerscale", cfg.layerscale}, {"mean", cfg.stats.mean}, {"std", cfg.stats.std}};
    c.tensors.emplace_back("patch_embed.proj.weight", gaussian(d, 3 * p * p, 1.0 / std::sqrt(3.0 * p * p), rng));
    c.tensors.emplace_back("patch_embed.proj.bias", Mat::Zero(1, d));
    c.tensors.emplace_back("cls_token", gaussian(1, d, 0.02, rng));
    c.tensors.emplace_back("pos_embed", gaussian(1 + cfg.pos_grid * cfg.pos_grid, d, 0.02, rng));
    for (int b = 0; b < cfg.depth; ++b) {
        const std::string pre = "blocks." + std::to_string(b) + ".";
        c.tensors.emplace_back(pre + "norm1.weight", Mat::Ones(1, d));
        c.tensors.emplace_back(pre + "norm1.bias", Mat::Zero(1, d));
        c.tensors.emplace_back(pre + "attn.qkv.weight", gaussian(3 * d, d, 1.0 / std::sqrt(d), rng));
        c.tensors.emplace_back(pre + "attn.qkv.bias", Mat::Zero(1, 3 * d));
        c.tensors.emplace_back(pre + "attn.proj.weight", gaussian(d, d, 1.0 / std::sqrt(d), rng));
        c.tensors.emplace_back(pre + "attn.proj.bias", Mat::Zero(1, d));
        c.tensors.emplace_back(pre + "ls1.gamma", Mat::Constant(1, d, 0.1));
        c.tensors.emplace_back(pre + "norm2.weight", Mat::Ones(1, d));
        c.tensors.emplace_back(pre + "norm2.bias", Mat::Zero(1, d));
        c.tensors.emplace_back(pre + "mlp.fc1.weight", gaussian(cfg.mlp_hidden, d, 1.0 / std::sqrt(d), rng));
        c.tensors.emplace_back(pre + "mlp.fc1.bias", Mat::Zero(1, cfg.mlp_hidden));
        c.tensors.emplace_back(pre + "mlp.fc2.weight", gaussian(d, cfg.mlp_hidden, 1.0 / std::sqrt(cfg.mlp_hidden), rng));
        c.tensors.emplace_back(pre + "mlp.fc2.bias", Mat::Zero(1, d));
        c.tensors.emplace_back(pre + "ls2.gamma", Mat::Constant(1, d, 0.1));
    }
    c.tensors.emplace_back("norm.weight", Mat::Ones(1, d));
    c.tensors.emplace_back("norm.bias", Mat::Zero(1, d));
    write_container(path, kVitMagic, c);
}

// --- projection --------------------------------------------------------------------------

FeatureProjection FeatureProjection::create(ag::ParameterSet& params, int in_dim, int out_dim, uint64_t seed) {
    Rng rng(seed ^ 0xbac4b0e5ull);
    FeatureProjection proj;
    proj.weight = params.add("backbone.proj.weight", gaussian(in_dim, out_dim, 1.0 / std::sqrt(in_dim), rng));
    proj.bias = params.add("backbone.proj.bias", Mat::Zero(1, out_dim));
    return proj;
}

FeatureProjection FeatureProjection::bind(const ag::ParameterSet& params) {
    return FeatureProjection{params.index_of("backbone.proj.weight"), params.index_of("backbone.proj.bias")};
}

ag::Var FeatureProjection::apply(ag::Tape& tape, const ag::ParameterSet& params, ag::Var features) const {
    if (!enabled()) return features;
    return tape.add_row(tape.matmul(features, tape.parameter(params, weight)), tape.parameter(params, bias));
}

// --- raw-feature baseline ------------------------------------------------------------------

double raw_feature_similarity(const ObjectInstance& a, const ObjectInstance& b, const Backbone& backbone,
                              const std::filesystem::path& root, int k) {
    auto pooled = [&](const ObjectInstance& object) {
        const auto views = select_top_views(object, k);
        Eigen::RowVectorXd sum;
        for (const auto& view : views) {
            const auto pre = preprocess(view, root, backbone.config().input_size, backbone.channel_stats());
            const Mat f = backbone.extract_last_layer(pre.image).patches;
            const Eigen::RowVectorXd mean = f.colwise().mean();
            if (sum.size() == 0)
                sum = mean;
            else
                sum += mean;
        }
        return Eigen::RowVectorXd(sum / static_cast<double>(views.size()));
    };
    const Eigen::RowVectorXd pa = pooled(a);
    const Eigen::RowVectorXd pb = pooled(b);
    const double denom = pa.norm() * pb.norm();
    if (!(denom > 0.0)) return 0.0;
    return std::clamp(pa.dot(pb) / denom, 0.0, 1.0);
}

}  // namespace lookalike
