#include "lookalike/trainer.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>

#include "lookalike/errors.h"
#include "lookalike/log.h"
#include "lookalike/parallel.h"

namespace lookalike {

using ag::Mat;
using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail(ErrorKind::Invariant, "learning_rate must be >= 0");
    if (batch_pairs_max < 2) fail(ErrorKind::Invariant, "batch_pairs_max must be >= 2");
    if (epochs < 1) fail(ErrorKind::Invariant, "epochs must be >= 1");
    if (max_steps < 0) fail(ErrorKind::Invariant, "max_steps must be >= 0");
    if (k_views < 1) fail(ErrorKind::Invariant, "k_views must be >= 1");
    if (checkpoint_every < 1) fail(ErrorKind::Invariant, "checkpoint_every must be >= 1");
    if (cosine_decay && max_steps == 0) fail(ErrorKind::Invariant, "cosine_decay requires max_steps");
}

double TrainConfig::learning_rate_at(int step) const {
    if (!cosine_decay) return learning_rate;
    const double t = std::min(1.0, static_cast<double>(step - 1) / max_steps);
    return learning_rate * 0.5 * (1.0 + std::cos(M_PI * t));
}

json to_json(const TrainConfig& cfg) {
    return {{"learning_rate", cfg.learning_rate},
            {"batch_pairs_max", cfg.batch_pairs_max},
            {"epochs", cfg.epochs},
            {"max_steps", cfg.max_steps},
            {"k_views", cfg.k_views},
            {"seed", cfg.seed},
            {"augmentations", to_json(cfg.augmentations)},
            {"view_dropout", cfg.view_dropout},
            {"adam_beta1", cfg.adam_beta1},
            {"adam_beta2", cfg.adam_beta2},
            {"adam_eps", cfg.adam_eps},
            {"checkpoint_every", cfg.checkpoint_every},
            {"workers", cfg.workers},
            {"retain_graphs", cfg.retain_graphs},
            {"cosine_decay", cfg.cosine_decay},
            {"normalize_triplet", cfg.objective.normalize_triplet},
            {"normalize_alignment", cfg.objective.normalize_alignment},
            {"hinged_alignment", cfg.objective.alignment.hinged}};
}

TrainConfig train_config_from_json(const json& doc) {
    TrainConfig cfg;
    try {
        cfg.learning_rate = doc.value("learning_rate", cfg.learning_rate);
        cfg.batch_pairs_max = doc.value("batch_pairs_max", cfg.batch_pairs_max);
        cfg.epochs = doc.value("epochs", cfg.epochs);
        cfg.max_steps = doc.value("max_steps", cfg.max_steps);
        cfg.k_views = doc.value("k_views", cfg.k_views);
        cfg.seed = doc.value("seed", cfg.seed);
        if (doc.contains("augmentations")) cfg.augmentations = augment_config_from_json(doc.at("augmentations"));
        cfg.view_dropout = doc.value("view_dropout", cfg.view_dropout);
        cfg.adam_beta1 = doc.value("adam_beta1", cfg.adam_beta1);
        cfg.adam_beta2 = doc.value("adam_beta2", cfg.adam_beta2);
        cfg.adam_eps = doc.value("adam_eps", cfg.adam_eps);
        cfg.checkpoint_every = doc.value("checkpoint_every", cfg.checkpoint_every);
        cfg.workers = doc.value("workers", cfg.workers);
        cfg.retain_graphs = doc.value("retain_graphs", cfg.retain_graphs);
        cfg.cosine_decay = doc.value("cosine_decay", cfg.cosine_decay);
        cfg.objective.normalize_triplet = doc.value("normalize_triplet", cfg.objective.normalize_triplet);
        cfg.objective.normalize_alignment = doc.value("normalize_alignment", cfg.objective.normalize_alignment);
        cfg.objective.alignment.hinged = doc.value("hinged_alignment", cfg.objective.alignment.hinged);
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("train config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

RunConfig toy_run_config() {
    RunConfig cfg;
    cfg.backbone.kind = BackboneKind::Toy;
    cfg.backbone.output_dim = 32;
    cfg.backbone.input_size = 48;
    cfg.backbone.patch_size = 12;
    cfg.encoder.embed_dim = 32;
    cfg.encoder.n_heads = 4;
    cfg.encoder.mlp_ratio = 2;
    cfg.train.learning_rate = 2e-3;
    cfg.train.batch_pairs_max = 32;
    cfg.train.epochs = 1000;
    cfg.train.max_steps = 800;
    cfg.train.cosine_decay = true;
    cfg.train.retain_graphs = true;
    cfg.train.checkpoint_every = 200;
    // Geometry and color nuisances stay below the differences that define the labels.
    cfg.train.augmentations.max_rotation_deg = 10.0;
    cfg.train.augmentations.crop_min_scale = 0.92;
    cfg.train.augmentations.jitter = 0.08;
    cfg.train.augmentations.channel_shuffle = true;
    return cfg;
}

json to_json(const RunConfig& cfg) {
    return {{"train", to_json(cfg.train)},
            {"encoder", to_json(cfg.encoder)},
            {"backbone", to_json(cfg.backbone)},
            {"thresholds", to_json(cfg.thresholds)},
            {"margins", to_json(cfg.margins)}};
}

RunConfig run_config_from_json(const json& doc) {
    if (!doc.is_object()) fail(ErrorKind::Schema, "run config must be an object");
    RunConfig cfg;
    if (doc.contains("train")) cfg.train = train_config_from_json(doc.at("train"));
    if (doc.contains("encoder")) cfg.encoder = encoder_config_from_json(doc.at("encoder"));
    if (doc.contains("backbone")) cfg.backbone = backbone_config_from_json(doc.at("backbone"));
    if (doc.contains("thresholds")) cfg.thresholds = thresholds_from_json(doc.at("thresholds"));
    if (doc.contains("margins")) cfg.margins = margins_from_json(doc.at("margins"));
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::MissingFile, "cannot open " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, path.string() + ": " + e.what());
    }
    return run_config_from_json(doc);
}

void save_run_config(const RunConfig& cfg, const fs::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << to_json(cfg).dump(2) << "\n";
}

// --- batch sampling ------------------------------------------------------------------------

BatchSampler::BatchSampler(const DatasetManifest& manifest, int batch_pairs_max)
    : manifest_(manifest), cap_(batch_pairs_max) {
    if (cap_ < 2) fail(ErrorKind::Invariant, "batch_pairs_max must be >= 2");
    negatives_.resize(manifest.scenes.size());
    for (size_t s = 0; s < manifest.scenes.size(); ++s) {
        const auto& pairs = manifest.scenes[s].pairs;
        for (size_t i = 0; i < pairs.size(); ++i) {
            const auto& p = pairs[i];
            if (p.label == PairLabel::Identical) {
                anchors_.push_back({static_cast<int>(s), static_cast<int>(i)});
            } else if (p.label == PairLabel::Similar || p.label == PairLabel::Different) {
                negatives_[s][p.a].push_back(static_cast<int>(i));
                negatives_[s][p.b].push_back(static_cast<int>(i));
            }
        }
    }
    if (anchors_.empty()) fail(ErrorKind::EmptyDataset, "no Identical pairs to anchor training batches");
    cursor_ = 0;  // order_ empty: first next() starts epoch 1
}

std::vector<BatchPair> BatchSampler::next(Rng& rng) {
    if (cursor_ >= order_.size()) {
        order_.resize(anchors_.size());
        for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        rng.shuffle(order_);
        cursor_ = 0;
        ++epoch_;
    }
    std::vector<BatchPair> batch;
    std::set<std::pair<int, int>> taken;
    while (cursor_ < order_.size()) {
        const Ref ref = anchors_[order_[cursor_]];
        const auto& scene = manifest_.scenes[ref.scene];
        const PairRecord& anchor = scene.pairs[ref.pair];
        std::vector<int> candidates;
        for (const std::string* id : {&anchor.a, &anchor.b}) {
            const auto it = negatives_[ref.scene].find(*id);
            if (it == negatives_[ref.scene].end()) continue;
            for (int idx : it->second)
                if (!taken.count({ref.scene, idx})) candidates.push_back(idx);
        }
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
        // Room for the anchor plus one fresh negative (when it has any); otherwise close the batch.
        const int needed = candidates.empty() ? 1 : 2;
        const bool anchor_taken = taken.count({ref.scene, ref.pair}) > 0;
        if (!batch.empty() && static_cast<int>(batch.size()) + (anchor_taken ? needed - 1 : needed) > cap_) break;
        ++cursor_;
        if (!anchor_taken) {
            batch.push_back({ref.scene, anchor});
            taken.insert({ref.scene, ref.pair});
        }
        for (int idx : candidates) {
            if (static_cast<int>(batch.size()) >= cap_) break;
            batch.push_back({ref.scene, scene.pairs[idx]});
            taken.insert({ref.scene, idx});
        }
        if (static_cast<int>(batch.size()) >= cap_) break;
    }
    return batch;
}

json BatchSampler::state() const { return {{"order", order_}, {"cursor", cursor_}, {"epoch", epoch_}}; }

void BatchSampler::restore(const json& state) {
    order_ = state.at("order").get<std::vector<size_t>>();
    cursor_ = state.at("cursor").get<size_t>();
    epoch_ = state.at("epoch").get<int>();
    for (size_t i : order_)
        if (i >= anchors_.size()) fail(ErrorKind::Schema, "sampler state does not match the dataset");
}

std::vector<BatchPair> sample_batch(const DatasetManifest& manifest, const TrainConfig& cfg, Rng& rng) {
    BatchSampler sampler(manifest, cfg.batch_pairs_max);
    return sampler.next(rng);
}

// --- optimizer -----------------------------------------------------------------------------

Adam::Adam(size_t n_params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n_params), v_(n_params) {}

void Adam::step(std::vector<Mat>& params, const std::vector<Mat>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        if (m_[i].size() == 0) {
            m_[i] = Mat::Zero(params[i].rows(), params[i].cols());
            v_[i] = Mat::Zero(params[i].rows(), params[i].cols());
        }
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
        if (lr_ == 0.0) continue;
        params[i].array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

// --- training loop -------------------------------------------------------------------------

namespace {

struct ObjectRef {
    int scene;
    const ObjectInstance* object;
};

std::string qualified(const DatasetManifest& m, int scene, const std::string& id) {
    return m.scenes[scene].scene_id + "/" + id;
}

bool all_finite(const std::vector<Mat>& grads) {
    for (const auto& g : grads)
        if (!g.allFinite()) return false;
    return true;
}

void write_csv_header(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << "step,triplet,align,total\n";
}

// Drops rows logged after the checkpoint we resume from.
void truncate_csv(const fs::path& path, int last_step) {
    std::ifstream in(path);
    if (!in) {
        write_csv_header(path);
        return;
    }
    std::vector<std::string> keep;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        if (std::stoi(line.substr(0, line.find(','))) <= last_step) keep.push_back(line);
    }
    in.close();
    write_csv_header(path);
    std::ofstream out(path, std::ios::app);
    for (const auto& l : keep) out << l << "\n";
}

// Decoded crops shared across steps; images are small and reused every epoch.
class ImageStore {
public:
    explicit ImageStore(fs::path root) : root_(std::move(root)) {}
    const Image& get(const std::string& relative) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = images_.find(relative);
        if (it == images_.end()) it = images_.emplace(relative, read_image(root_ / relative)).first;
        return it->second;
    }

private:
    fs::path root_;
    std::mutex mutex_;
    std::map<std::string, Image> images_;
};

}  // namespace

TrainState train(const DatasetManifest& manifest, LookalikeModel& model, const RunConfig& cfg, const TrainOutputs& outputs,
                 const StepCallback& on_step) {
    const TrainConfig& tc = cfg.train;
    tc.validate();
    cfg.margins.validate();
    if (manifest.split != Split::Train) log_warning("training on a manifest whose split is not 'train'");

    CompletionReport completion;
    const DatasetManifest data = complete_negative_pairs(manifest, tc.seed, &completion);
    if (completion.added > 0) log_info("added " + std::to_string(completion.added) + " synthetic Different pairs");

    fs::create_directories(outputs.dir);
    const fs::path ckpt = outputs.dir / "checkpoint.ckpt";
    const fs::path csv = outputs.dir / "loss.csv";

    Rng rng(tc.seed);
    BatchSampler sampler(data, tc.batch_pairs_max);
    TrainState state;
    Adam adam(model.encoder().params().size(), tc.learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);

    if (outputs.resume && fs::exists(ckpt)) {
        LookalikeModel::TrainSnapshot snap;
        model = LookalikeModel::load(ckpt, &snap);
        try {
            state.step = snap.state.at("step").get<int>();
            rng.restore(snap.state.at("rng").get<std::string>());
            sampler.restore(snap.state.at("sampler"));
            adam.set_steps(snap.state.at("adam_steps").get<long>());
        } catch (const json::exception& e) {
            fail(ErrorKind::Schema, ckpt.string() + ": train state incomplete: " + e.what());
        }
        if (!snap.adam_m.empty()) {
            adam.m() = snap.adam_m;
            adam.v() = snap.adam_v;
        }
        truncate_csv(csv, state.step);
        log_info("resuming at step " + std::to_string(state.step));
    } else {
        write_csv_header(csv);
    }
    save_run_config(cfg, outputs.dir / "run_config.json");

    const int workers = tc.workers > 0 ? tc.workers : default_worker_count();
    const Backbone& backbone = model.backbone();
    const PairEncoder& encoder = model.encoder();
    const int max_views = std::min(tc.k_views, encoder.config().max_views);
    const Thresholds thresholds = model.thresholds();
    const uint64_t frozen_checksum = backbone.weights_checksum();
    FeatureCache cache(backbone);
    ImageStore images(data.root);

    auto save = [&]() {
        LookalikeModel::TrainSnapshot snap;
        snap.state = {{"step", state.step},
                      {"epoch", sampler.epoch()},
                      {"rng", rng.state()},
                      {"sampler", sampler.state()},
                      {"adam_steps", adam.steps()}};
        snap.adam_m = adam.m();
        snap.adam_v = adam.v();
        for (size_t i = 0; i < snap.adam_m.size(); ++i)
            if (snap.adam_m[i].size() == 0) {
                const auto& p = model.encoder().params().value(i);
                snap.adam_m[i] = Mat::Zero(p.rows(), p.cols());
                snap.adam_v[i] = Mat::Zero(p.rows(), p.cols());
            }
        model.save(ckpt, &snap);
    };

    std::ofstream loss_log(csv, std::ios::app);
    loss_log << std::setprecision(17);

    while (true) {
        if (tc.max_steps > 0 && state.step >= tc.max_steps) break;
        if (sampler.at_epoch_end() && sampler.epoch() >= tc.epochs) break;
        const std::vector<BatchPair> batch = sampler.next(rng);
        ++state.step;

        // Unique objects in first-seen order, with their per-step randomness drawn up front so
        // the result does not depend on thread scheduling.
        std::map<std::pair<int, std::string>, int> object_index;
        std::vector<ObjectRef> objects;
        std::vector<std::pair<int, int>> pair_objects;
        for (const auto& bp : batch) {
            int ids[2];
            for (int side = 0; side < 2; ++side) {
                const std::string& id = side == 0 ? bp.pair.a : bp.pair.b;
                const auto [it, inserted] = object_index.emplace(std::make_pair(bp.scene, id), static_cast<int>(objects.size()));
                if (inserted) {
                    const ObjectInstance* obj = data.scenes[bp.scene].find_object(id);
                    if (!obj) fail(ErrorKind::Invariant, "pair references unknown object " + id);
                    objects.push_back({bp.scene, obj});
                }
                ids[side] = it->second;
            }
            pair_objects.emplace_back(ids[0], ids[1]);
        }
        std::array<int, 3> channel_order{0, 1, 2};
        if (tc.augmentations.channel_shuffle) rng.shuffle(channel_order);
        std::vector<uint64_t> seeds(objects.size());
        std::vector<int> view_counts(objects.size(), max_views);
        for (size_t i = 0; i < objects.size(); ++i) {
            seeds[i] = rng.next();
            if (tc.view_dropout) view_counts[i] = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(max_views)));
        }

        std::vector<std::vector<std::shared_ptr<const PatchFeatureTensor>>> features(objects.size());
        parallel_for(objects.size(), workers, [&](size_t i) {
            Rng local(seeds[i]);
            for (const auto& view : select_top_views(*objects[i].object, view_counts[i])) {
                if (!tc.augmentations.any()) {
                    features[i].push_back(cache.get(view, data.root));
                    continue;
                }
                const Image img = permute_channels(images.get(view.image), channel_order);
                const Image mask = view.mask.empty() ? Image(img.width, img.height, 1, 1.0f) : images.get(view.mask);
                const auto [aug_img, aug_mask] = augment(img, mask, tc.augmentations, local);
                const auto pre = preprocess(aug_img, aug_mask, backbone.config().input_size, backbone.channel_stats());
                features[i].push_back(std::make_shared<const PatchFeatureTensor>(backbone.extract(pre.image)));
            }
        });
        auto view_ptrs = [&](int object) {
            std::vector<const Mat*> out;
            for (const auto& f : features[object]) out.push_back(&f->patches);
            return out;
        };

        // Pass 1: scores only.
        std::vector<PairScore> scores(batch.size());
        std::vector<std::unique_ptr<ag::Tape>> kept(tc.retain_graphs ? batch.size() : 0);
        std::vector<ag::Var> kept_scores(kept.size());
        parallel_for(batch.size(), workers, [&](size_t k) {
            ag::Tape scratch;
            ag::Tape* tp = &scratch;
            if (tc.retain_graphs) {
                kept[k] = std::make_unique<ag::Tape>();
                tp = kept[k].get();
            }
            ag::Tape& tape = *tp;
            std::pair<ag::Var, ag::Var> embeddings;
            try {
                embeddings = encoder.forward(tape, view_ptrs(pair_objects[k].first), view_ptrs(pair_objects[k].second));
            } catch (const Error& e) {
                // Non-finite activations surface as a degenerate normalization.
                if (e.kind() != ErrorKind::Domain) throw;
                fail(ErrorKind::Divergence, "non-finite activations at step " + std::to_string(state.step));
            }
            const auto [ea, eb] = embeddings;
            const ag::Var s = tape.clamp(tape.dot(ea, eb), 0.0, 1.0);
            if (tc.retain_graphs) kept_scores[k] = s;
            scores[k] = {qualified(data, batch[k].scene, batch[k].pair.a), qualified(data, batch[k].scene, batch[k].pair.b),
                         batch[k].pair.label, tape.value(s)(0, 0)};
        });
        for (const auto& ps : scores)
            if (!std::isfinite(ps.s)) fail(ErrorKind::Divergence, "non-finite score at step " + std::to_string(state.step));
        const BatchObjective objective = batch_objective(scores, cfg.margins, thresholds.t1, thresholds.t2, tc.objective);
        if (!std::isfinite(objective.total))
            fail(ErrorKind::Divergence, "non-finite loss at step " + std::to_string(state.step));

        // Pass 2: re-run each pair with its dL/ds seed. Buffers are summed in pair order so the
        // result is independent of the worker count.
        std::vector<Mat> grads = encoder.params().zeros_like();
        const size_t chunk = static_cast<size_t>(std::max(1, workers));
        for (size_t begin = 0; begin < batch.size(); begin += chunk) {
            const size_t end = std::min(batch.size(), begin + chunk);
            std::vector<std::vector<Mat>> local(end - begin);
            parallel_for(end - begin, workers, [&](size_t j) {
                const size_t k = begin + j;
                if (objective.dtotal_ds[k] == 0.0) return;
                local[j] = encoder.params().zeros_like();
                if (tc.retain_graphs) {
                    kept[k]->backward(kept_scores[k], Mat::Constant(1, 1, objective.dtotal_ds[k]));
                    kept[k]->accumulate_param_grads(local[j]);
                    kept[k].reset();
                    return;
                }
                ag::Tape tape;
                const auto [ea, eb] = encoder.forward(tape, view_ptrs(pair_objects[k].first), view_ptrs(pair_objects[k].second));
                const ag::Var s = tape.clamp(tape.dot(ea, eb), 0.0, 1.0);
                tape.backward(s, Mat::Constant(1, 1, objective.dtotal_ds[k]));
                tape.accumulate_param_grads(local[j]);
            });
            for (auto& g : local)
                if (!g.empty())
                    for (size_t p = 0; p < grads.size(); ++p) grads[p] += g[p];
        }
        if (!all_finite(grads)) fail(ErrorKind::Divergence, "non-finite gradient at step " + std::to_string(state.step));

        adam.set_learning_rate(tc.learning_rate_at(state.step));
        adam.step(model.encoder().params().values(), grads);

        const StepLoss row{state.step, objective.triplet, objective.align, objective.total};
        state.losses.push_back(row);
        loss_log << row.step << ',' << row.triplet << ',' << row.align << ',' << row.total << '\n';
        loss_log.flush();
        if (on_step) on_step(row);
        if (state.step % tc.checkpoint_every == 0) save();
    }
    state.epoch = sampler.epoch();
    if (backbone.weights_checksum() != frozen_checksum) fail(ErrorKind::Invariant, "backbone weights changed during training");
    save();
    return state;
}

}  // namespace lookalike
