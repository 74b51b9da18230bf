#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lookalike/augment.h"
#include "lookalike/backbone.h"
#include "lookalike/datamodel.h"
#include "lookalike/encoder.h"
#include "lookalike/losses.h"
#include "lookalike/rng.h"

namespace lookalike {

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_pairs_max = 128;
    int epochs = 1;
    int max_steps = 0;  // 0: no step cap
    bool cosine_decay = false;  // anneal the rate to zero over max_steps
    int k_views = 5;
    uint64_t seed = 0;
    AugmentConfig augmentations;
    // Keeps a random 1..k_views of the top views per object (view-count ablations).
    bool view_dropout = false;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int checkpoint_every = 50;  // steps; a final checkpoint is always written
    int workers = 0;            // 0: hardware concurrency
    bool retain_graphs = false; // keep pass-1 graphs for the backward pass instead of recomputing
    ObjectiveOptions objective;

    void validate() const;
    double learning_rate_at(int step) const;  // step is 1-based
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& doc);

// Everything a training run is parameterized by, stored as one JSON document.
struct RunConfig {
    TrainConfig train;
    EncoderConfig encoder;
    BackboneConfig backbone;
    Thresholds thresholds;
    Margins margins;
};

// CPU-sized run on the synthetic dataset: toy backbone, 32-wide encoder, 800 steps.
RunConfig toy_run_config();

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

struct BatchPair {
    int scene = 0;  // index into manifest.scenes
    PairRecord pair;
};

// Epoch = one pass over every Identical pair as anchor, in shuffled order. Each batch takes
// anchors in turn and greedily adds the Similar/Different pairs touching either anchor object.
class BatchSampler {
public:
    BatchSampler(const DatasetManifest& manifest, int batch_pairs_max);

    std::vector<BatchPair> next(Rng& rng);  // reshuffles when the current epoch is exhausted
    int epoch() const { return epoch_; }     // number of epochs started
    bool at_epoch_end() const { return cursor_ >= order_.size(); }
    size_t anchor_count() const { return anchors_.size(); }

    nlohmann::json state() const;
    void restore(const nlohmann::json& state);

private:
    struct Ref {
        int scene;
        int pair;
    };
    const DatasetManifest& manifest_;
    int cap_;
    std::vector<Ref> anchors_;
    std::vector<std::map<std::string, std::vector<int>>> negatives_;  // scene -> object -> Sim/Diff pair idx
    std::vector<size_t> order_;
    size_t cursor_ = 0;
    int epoch_ = 0;
};

// First batch of a freshly shuffled epoch. Throws EmptyDataset without Identical pairs.
std::vector<BatchPair> sample_batch(const DatasetManifest& manifest, const TrainConfig& cfg, Rng& rng);

struct StepLoss {
    int step = 0;
    double triplet = 0.0;
    double align = 0.0;
    double total = 0.0;
};

struct TrainState {
    int step = 0;
    int epoch = 0;
    std::vector<StepLoss> losses;  // steps run in this invocation
};

struct TrainOutputs {
    std::filesystem::path dir;  // checkpoint.ckpt, loss.csv, run_config.json
    bool resume = false;        // continue from dir/checkpoint.ckpt when present
};

// Adam over every encoder parameter; backbone weights are never touched.
class Adam {
public:
    Adam(size_t n_params, double lr, double beta1, double beta2, double eps);
    void step(std::vector<ag::Mat>& params, const std::vector<ag::Mat>& grads);
    std::vector<ag::Mat>& m() { return m_; }
    std::vector<ag::Mat>& v() { return v_; }
    long steps() const { return t_; }
    void set_steps(long t) { t_ = t; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<ag::Mat> m_;
    std::vector<ag::Mat> v_;
};

using StepCallback = std::function<void(const StepLoss&)>;

// Throws Divergence on a non-finite loss or gradient; the last checkpoint on disk stays valid.
TrainState train(const DatasetManifest& manifest, LookalikeModel& model, const RunConfig& cfg,
                 const TrainOutputs& outputs, const StepCallback& on_step = {});

}  // namespace lookalike
