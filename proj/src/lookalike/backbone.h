#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lookalike/autograd.h"
#include "lookalike/datamodel.h"
#include "lookalike/image.h"

namespace lookalike {

enum class BackboneKind { Foundation, Toy };

struct BackboneConfig {
    BackboneKind kind = BackboneKind::Foundation;
    std::vector<int> intermediate_layers{1, 3, 5, 8};  // 1-based transformer block indices
    int output_dim = 384;
    int input_size = 224;
    int patch_size = 14;    // toy backbone tile size; the foundation adapter reads it from its weights
    uint64_t seed = 0;      // toy projection seed
    std::string weights;    // foundation weights container

    void validate() const;
};

nlohmann::json to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const nlohmann::json& doc);

// Grid of patch embeddings for one view, one row per patch in row-major grid order.
struct PatchFeatureTensor {
    int grid_rows = 0;
    int grid_cols = 0;
    ag::Mat patches;

    int patch_count() const { return grid_rows * grid_cols; }
    int feature_dim() const { return static_cast<int>(patches.cols()); }
};

struct PreprocessedView {
    Image image;  // input_size x input_size x 3, normalized
    Image mask;   // input_size x input_size x 1
};

struct ChannelStats {
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> std{0.229f, 0.224f, 0.225f};
};

// Pads to square with zeros (image and mask alike), resizes to input_size, normalizes channels.
PreprocessedView preprocess(const Image& image, const Image& mask, int input_size, const ChannelStats& stats);
PreprocessedView preprocess(const ViewCrop& crop, const std::filesystem::path& root, int input_size,
                            const ChannelStats& stats);

class Backbone {
public:
    virtual ~Backbone() = default;

    const BackboneConfig& config() const { return config_; }
    virtual ChannelStats channel_stats() const { return {}; }
    virtual std::pair<int, int> grid_shape() const = 0;
    // Width of extract()'s output before any trainable projection.
    virtual int feature_dim() const = 0;
    virtual bool has_trainable_projection() const = 0;

    // Toy: the final fixed-projected features. Foundation: the concatenated multi-layer tokens.
    virtual PatchFeatureTensor extract(const Image& normalized) const = 0;
    // Final-layer features only, as used by the raw-feature baseline.
    virtual PatchFeatureTensor extract_last_layer(const Image& normalized) const = 0;

    virtual uint64_t weights_checksum() const = 0;

protected:
    explicit Backbone(BackboneConfig config) : config_(std::move(config)) {}
    void check_input(const Image& normalized) const;

    BackboneConfig config_;
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg);

// Deterministic backbone: mean color of each tile quadrant plus two positional channels, then
// a fixed seeded Gaussian projection to output_dim.
class ToyBackbone final : public Backbone {
public:
    explicit ToyBackbone(BackboneConfig cfg);

    std::pair<int, int> grid_shape() const override;
    int feature_dim() const override { return config_.output_dim; }
    bool has_trainable_projection() const override { return false; }
    PatchFeatureTensor extract(const Image& normalized) const override;
    PatchFeatureTensor extract_last_layer(const Image& normalized) const override { return extract(normalized); }
    uint64_t weights_checksum() const override;

    static constexpr int kToyStats = 14;

    // N_p x 14 matrix: mean R, G, B of the top-left, top-right, bottom-left and bottom-right
    // quadrants, then (row + 0.5) / rows and (col + 0.5) / cols.
    ag::Mat tile_statistics(const Image& normalized) const;
    const ag::Mat& projection() const { return projection_; }

private:
    ag::Mat projection_;  // kToyStats x output_dim
};

struct VitConfig {
    int patch_size = 14;
    int embed_dim = 384;
    int depth = 12;
    int num_heads = 6;
    int mlp_hidden = 1536;
    int pos_grid = 37;  // side of the stored positional-embedding grid
    bool layerscale = true;
    ChannelStats stats;
};

// Frozen ViT encoder (DINOv2 layout). Weights come from a container written by
// tools/export_dinov2.py or by write_vit_weights().
class VitBackbone final : public Backbone {
public:
    explicit VitBackbone(BackboneConfig cfg);

    ChannelStats channel_stats() const override { return vit_.stats; }
    std::pair<int, int> grid_shape() const override;
    int feature_dim() const override;
    bool has_trainable_projection() const override { return true; }
    PatchFeatureTensor extract(const Image& normalized) const override;
    PatchFeatureTensor extract_last_layer(const Image& normalized) const override;
    uint64_t weights_checksum() const override;

    const VitConfig& vit_config() const { return vit_; }

private:
    // Normalized patch tokens after each requested 1-based block (and the final block).
    std::vector<ag::Mat> run(const Image& normalized, const std::vector<int>& blocks) const;

    VitConfig vit_;
    std::map<std::string, ag::Mat> weights_;
    const ag::Mat& w(const std::string& name) const;
};

// Random ViT weights for tests and offline smoke runs.
void write_vit_weights(const std::filesystem::path& path, const VitConfig& cfg, uint64_t seed);

// Trainable concat -> output_dim projection placed in front of the encoder when the
// backbone exposes raw multi-layer features. Parameters live in the model's ParameterSet.
struct FeatureProjection {
    int weight = -1;
    int bias = -1;

    static FeatureProjection create(ag::ParameterSet& params, int in_dim, int out_dim, uint64_t seed);
    static FeatureProjection bind(const ag::ParameterSet& params);
    bool enabled() const { return weight >= 0; }
    ag::Var apply(ag::Tape& tape, const ag::ParameterSet& params, ag::Var features) const;
};

// Mean-pooled final-layer features of each object's top-k views, cosine clamped to [0,1].
double raw_feature_similarity(const ObjectInstance& a, const ObjectInstance& b, const Backbone& backbone,
                              const std::filesystem::path& root, int k);

}  // namespace lookalike
