#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lookalike/autograd.h"
#include "lookalike/backbone.h"
#include "lookalike/datamodel.h"
#include "lookalike/similarity.h"

namespace lookalike {

struct EncoderConfig {
    int n_blocks = 1;
    int embed_dim = 256;
    int n_heads = 8;
    int max_views = 5;
    int mlp_ratio = 4;
    bool use_frame_embeddings = true;
    bool use_object_embeddings = true;
    bool use_positional_embeddings = true;
    bool symmetrize = false;  // score both object orders and average

    void validate() const;
};

nlohmann::json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& doc);

// Alternating single-view / multiview / global self-attention over the patch tokens of two
// objects, followed by a per-object mean over views.
class PairEncoder {
public:
    // feature_dim: width of the incoming patch features. When projection_in > 0 a trainable
    // projection projection_in -> feature_dim is prepended (foundation backbones).
    PairEncoder(EncoderConfig cfg, int feature_dim, int grid_rows, int grid_cols, int projection_in, uint64_t seed);
    // Rebinds to an existing parameter set (checkpoint load).
    PairEncoder(EncoderConfig cfg, int feature_dim, int grid_rows, int grid_cols, ag::ParameterSet params);

    const EncoderConfig& config() const { return cfg_; }
    const ag::ParameterSet& params() const { return params_; }
    ag::ParameterSet& params() { return params_; }
    int feature_dim() const { return feature_dim_; }
    int input_dim() const { return projection_.enabled() ? static_cast<int>(params_.value(projection_.weight).rows()) : feature_dim_; }
    int grid_rows() const { return grid_rows_; }
    int grid_cols() const { return grid_cols_; }

    struct Options {
        // Bypasses every attention stage and embedding: the output is the normalized view
        // mean of the projected input tokens.
        bool identity_attention = false;
    };

    // Records the forward pass on `tape` and returns the two unit embeddings (1 x N_p*embed_dim).
    std::pair<ag::Var, ag::Var> forward(ag::Tape& tape, const std::vector<const ag::Mat*>& views_a,
                                        const std::vector<const ag::Mat*>& views_b, const Options& options) const;
    std::pair<ag::Var, ag::Var> forward(ag::Tape& tape, const std::vector<const ag::Mat*>& views_a,
                                        const std::vector<const ag::Mat*>& views_b) const {
        return forward(tape, views_a, views_b, Options{});
    }

    std::pair<ObjectEmbedding, ObjectEmbedding> encode_pair(const std::vector<PatchFeatureTensor>& views_a,
                                                            const std::vector<PatchFeatureTensor>& views_b,
                                                            const Options& options) const;
    std::pair<ObjectEmbedding, ObjectEmbedding> encode_pair(const std::vector<PatchFeatureTensor>& views_a,
                                                            const std::vector<PatchFeatureTensor>& views_b) const {
        return encode_pair(views_a, views_b, Options{});
    }

    // Token matrix after the input projection and after every stage (test hook for the
    // shape-preservation property).
    std::vector<std::pair<int, int>> stage_shapes(const std::vector<const ag::Mat*>& views_a,
                                                  const std::vector<const ag::Mat*>& views_b) const;

    const ag::Mat& positional_embedding() const { return positional_; }

private:
    struct Layer {
        int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
    };

    void build_layout();
    void init_parameters(int projection_in, uint64_t seed);
    void check_views(const std::vector<const ag::Mat*>& views_a, const std::vector<const ag::Mat*>& views_b) const;
    ag::Var run_layer(ag::Tape& tape, ag::Var x, std::optional<ag::Var> embeddings, const Layer& layer,
                      const std::vector<std::pair<int, int>>& groups) const;
    // Sum of positional, frame and object embeddings for every token (nullopt when all are off).
    std::optional<ag::Var> stage_embeddings(ag::Tape& tape, const std::vector<int>& slots, const std::vector<int>& objects,
                                            std::optional<ag::Var> positional) const;
    std::pair<ag::Var, ag::Var> forward_impl(ag::Tape& tape, const std::vector<const ag::Mat*>& views_a,
                                             const std::vector<const ag::Mat*>& views_b, const Options& options,
                                             std::vector<std::pair<int, int>>* shapes) const;

    EncoderConfig cfg_;
    int feature_dim_;
    int grid_rows_;
    int grid_cols_;
    ag::ParameterSet params_;
    FeatureProjection projection_;
    int in_w_ = -1, in_b_ = -1, frame_emb_ = -1, object_emb_ = -1;
    std::vector<std::array<Layer, 3>> blocks_;
    ag::Mat positional_;  // N_p x embed_dim, fixed
};

// Cosine 2D positional table: the first half of the channels encodes the row, the second the column.
ag::Mat cosine_positional_embedding(int grid_rows, int grid_cols, int dim);

// Thread-safe memo of backbone features keyed by image path.
class FeatureCache {
public:
    explicit FeatureCache(const Backbone& backbone) : backbone_(backbone) {}
    std::shared_ptr<const PatchFeatureTensor> get(const ViewCrop& view, const std::filesystem::path& root);

private:
    const Backbone& backbone_;
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<const PatchFeatureTensor>> entries_;
};

// Backbone + encoder + decision thresholds: everything needed to score a pair.
class LookalikeModel {
public:
    LookalikeModel(BackboneConfig backbone, EncoderConfig encoder, Thresholds thresholds, uint64_t seed);

    const BackboneConfig& backbone_config() const { return backbone_->config(); }
    const Backbone& backbone() const { return *backbone_; }
    const PairEncoder& encoder() const { return *encoder_; }
    PairEncoder& encoder() { return *encoder_; }
    const Thresholds& thresholds() const { return thresholds_; }

    // Top-k views per object, backbone, encoder, similarity. Objects are fed in canonical
    // id order. Warns (does not fail) on a cross-class pair.
    SimilarityResult score_pair(const ObjectInstance& a, const ObjectInstance& b, int k, const std::filesystem::path& root,
                                FeatureCache* cache = nullptr) const;

    static constexpr const char* kFormatVersion = "lookalike-checkpoint/1";

    struct TrainSnapshot {
        nlohmann::json state = nlohmann::json::object();
        std::vector<ag::Mat> adam_m;
        std::vector<ag::Mat> adam_v;
    };
    void save(const std::filesystem::path& path, const TrainSnapshot* snapshot = nullptr) const;
    static LookalikeModel load(const std::filesystem::path& path, TrainSnapshot* snapshot = nullptr);

private:
    LookalikeModel(std::unique_ptr<Backbone> backbone, std::unique_ptr<PairEncoder> encoder, Thresholds thresholds);

    std::unique_ptr<Backbone> backbone_;
    std::unique_ptr<PairEncoder> encoder_;
    Thresholds thresholds_;
};

}  // namespace lookalike
