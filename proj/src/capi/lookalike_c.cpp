#include "lookalike/lookalike.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include "json.hpp"
#include "lookalike/annotation_server.h"
#include "lookalike/cosegment.h"
#include "lookalike/errors.h"
#include "lookalike/log.h"
#include "lookalike/predict.h"
#include "lookalike/toy_dataset.h"
#include "lookalike/trainer.h"

using json = nlohmann::json;
namespace fs = std::filesystem;
namespace lk = lookalike;

struct lk_dataset {
    lk::DatasetManifest manifest;
};

struct lk_model {
    lk::LookalikeModel model;
    lk::RunConfig config;
};

struct lk_server {
    std::unique_ptr<lk::AnnotationService> service;
    std::unique_ptr<lk::AnnotationServer> server;
};

namespace {

thread_local std::string last_error;

static_assert(static_cast<int>(lk::ErrorKind::NotFound) + 1 == LK_ERR_NOT_FOUND,
              "lk_status must mirror ErrorKind order");

lk_status set_error(lk_status status, const std::string& message) {
    last_error = message;
    return status;
}

lk_status from_kind(lk::ErrorKind kind) { return static_cast<lk_status>(static_cast<int>(kind) + 1); }

// Runs `body`, translating exceptions into status codes.
template <typename F>
lk_status guarded(F&& body) {
    try {
        body();
        return LK_OK;
    } catch (const lk::Error& e) {
        return set_error(from_kind(e.kind()), e.what());
    } catch (const json::exception& e) {
        return set_error(LK_ERR_SCHEMA, e.what());
    } catch (const std::bad_alloc&) {
        return set_error(LK_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return set_error(LK_ERR_INTERNAL, e.what());
    }
}

struct InvalidArgument : std::runtime_error {
    using std::runtime_error::runtime_error;
};

char* duplicate(const std::string& text) {
    char* out = static_cast<char*>(std::malloc(text.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, text.c_str(), text.size() + 1);
    return out;
}

void emit(char** out, const json& doc) {
    if (out) *out = duplicate(doc.dump(2));
}

json parse_json_text(const char* text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        lk::fail(lk::ErrorKind::Schema, std::string(what) + ": " + e.what());
    }
}

#define LK_REQUIRE(cond, message)                                          \
    do {                                                                   \
        if (!(cond)) return set_error(LK_ERR_INVALID_ARGUMENT, message);   \
    } while (0)

}  // namespace

extern "C" {

const char* lk_version(void) { return "0.1.0"; }

const char* lk_status_name(lk_status status) {
    switch (status) {
        case LK_OK: return "ok";
        case LK_ERR_BIND: return "Bind";
        case LK_ERR_INVALID_ARGUMENT: return "InvalidArgument";
        case LK_ERR_INTERNAL: return "Internal";
        default: break;
    }
    if (status > LK_OK && status <= LK_ERR_NOT_FOUND)
        return lk::error_kind_name(static_cast<lk::ErrorKind>(static_cast<int>(status) - 1));
    return "unknown";
}

const char* lk_last_error(void) { return last_error.c_str(); }

void lk_free_string(char* text) { std::free(text); }

lk_status lk_set_log_level(int level) {
    LK_REQUIRE(level >= 0 && level <= 4, "log level must be in 0..4");
    lk::set_log_level(static_cast<lk::LogLevel>(level));
    return LK_OK;
}

lk_status lk_make_toy(const char* out_dir, int n_scenes, uint64_t seed, const char* split) {
    LK_REQUIRE(out_dir, "out_dir is required");
    LK_REQUIRE(!split || std::string(split) == "train" || std::string(split) == "val", "split must be train or val");
    return guarded([&] {
        const lk::Split s = split ? lk::parse_split(split) : lk::Split::Train;
        lk::make_toy_dataset(out_dir, n_scenes, seed, s);
    });
}

lk_status lk_dataset_load(const char* manifest_path, const char* root_override, int check_files, lk_dataset** out) {
    LK_REQUIRE(manifest_path && out, "manifest_path and out are required");
    *out = nullptr;
    return guarded([&] {
        auto ds = std::make_unique<lk_dataset>();
        lk::LoadOptions options;
        options.check_files = check_files != 0;
        if (root_override && *root_override) {
            std::ifstream in(manifest_path);
            if (!in) lk::fail(lk::ErrorKind::MissingFile, std::string("manifest not found: ") + manifest_path);
            json doc;
            try {
                in >> doc;
            } catch (const json::exception& e) {
                lk::fail(lk::ErrorKind::Schema, std::string("malformed manifest: ") + e.what());
            }
            ds->manifest = lk::manifest_from_json(doc, root_override, options);
        } else {
            ds->manifest = lk::load_manifest(manifest_path, options);
        }
        *out = ds.release();
    });
}

void lk_dataset_free(lk_dataset* dataset) { delete dataset; }

size_t lk_dataset_scene_count(const lk_dataset* dataset) { return dataset ? dataset->manifest.scenes.size() : 0; }

lk_status lk_dataset_to_json(const lk_dataset* dataset, char** out_json) {
    LK_REQUIRE(dataset && out_json, "dataset and out_json are required");
    return guarded([&] { emit(out_json, lk::manifest_to_json(dataset->manifest)); });
}

lk_status lk_run_config_preset(const char* preset, char** out_json) {
    LK_REQUIRE(preset && out_json, "preset and out_json are required");
    const std::string name = preset;
    LK_REQUIRE(name == "default" || name == "toy", "preset must be 'default' or 'toy'");
    return guarded([&] { emit(out_json, lk::to_json(name == "toy" ? lk::toy_run_config() : lk::RunConfig{})); });
}

lk_status lk_run_config_normalize(const char* config_json, char** out_json) {
    LK_REQUIRE(config_json && out_json, "config_json and out_json are required");
    return guarded([&] { emit(out_json, lk::to_json(lk::run_config_from_json(parse_json_text(config_json, "run config")))); });
}

lk_status lk_model_create(const char* config_json, uint64_t seed, lk_model** out) {
    LK_REQUIRE(config_json && out, "config_json and out are required");
    *out = nullptr;
    return guarded([&] {
        const lk::RunConfig cfg = lk::run_config_from_json(parse_json_text(config_json, "run config"));
        *out = new lk_model{lk::LookalikeModel(cfg.backbone, cfg.encoder, cfg.thresholds, seed), cfg};
    });
}

lk_status lk_model_load(const char* checkpoint_path, lk_model** out) {
    LK_REQUIRE(checkpoint_path && out, "checkpoint_path and out are required");
    *out = nullptr;
    return guarded([&] {
        lk::LookalikeModel model = lk::LookalikeModel::load(checkpoint_path);
        lk::RunConfig cfg;
        cfg.backbone = model.backbone_config();
        cfg.encoder = model.encoder().config();
        cfg.thresholds = model.thresholds();
        *out = new lk_model{std::move(model), cfg};
    });
}

lk_status lk_model_save(const lk_model* model, const char* checkpoint_path) {
    LK_REQUIRE(model && checkpoint_path, "model and checkpoint_path are required");
    return guarded([&] { model->model.save(checkpoint_path); });
}

void lk_model_free(lk_model* model) { delete model; }

lk_status lk_model_score_pair(const lk_model* model, const lk_dataset* dataset, const char* scene_id,
                              const char* object_a, const char* object_b, int views, double* out_score) {
    LK_REQUIRE(model && dataset && scene_id && object_a && object_b && out_score, "all arguments are required");
    return guarded([&] {
        const lk::SceneManifest* scene = dataset->manifest.find_scene(scene_id);
        if (!scene) lk::fail(lk::ErrorKind::NotFound, std::string("unknown scene ") + scene_id);
        const lk::ObjectInstance* a = scene->find_object(object_a);
        const lk::ObjectInstance* b = scene->find_object(object_b);
        if (!a || !b) lk::fail(lk::ErrorKind::NotFound, "unknown object in scene " + std::string(scene_id));
        *out_score = model->model.score_pair(*a, *b, views, dataset->manifest.root).score;
    });
}

lk_status lk_train(lk_model* model, const lk_dataset* dataset, const char* config_json, const char* out_dir, int resume,
                   lk_step_fn on_step, void* user) {
    LK_REQUIRE(model && dataset && config_json && out_dir, "model, dataset, config_json and out_dir are required");
    return guarded([&] {
        const lk::RunConfig cfg = lk::run_config_from_json(parse_json_text(config_json, "run config"));
        lk::StepCallback callback;
        if (on_step)
            callback = [&](const lk::StepLoss& s) { on_step(s.step, s.triplet, s.align, s.total, user); };
        lk::train(dataset->manifest, model->model, cfg, {out_dir, resume != 0}, callback);
        model->config = cfg;
    });
}

lk_status lk_predict(const lk_model* model, const lk_dataset* dataset, int views, int workers, const char* out_dir,
                     char** out_summary_json) {
    LK_REQUIRE(model && dataset && out_dir, "model, dataset and out_dir are required");
    LK_REQUIRE(views >= 1, "views must be >= 1");
    return guarded([&] {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) lk::fail(lk::ErrorKind::Io, std::string("cannot create ") + out_dir + ": " + ec.message());
        const auto docs = lk::predict_dataset(dataset->manifest, model->model, {views, workers});
        json files = json::array();
        for (const auto& doc : docs) {
            const fs::path path = fs::path(out_dir) / (doc.at("scene_id").get<std::string>() + ".json");
            std::ofstream out(path);
            out << doc.dump(2) << '\n';
            if (!out) lk::fail(lk::ErrorKind::Io, "cannot write " + path.string());
            files.push_back(path.string());
        }
        emit(out_summary_json, {{"views", views}, {"documents", files}});
    });
}

lk_status lk_evaluate(const lk_dataset* ground_truth, const char* pred_dir, const char* overlaps_path, double threshold,
                      int optimal, char** out_report_json) {
    LK_REQUIRE(ground_truth && pred_dir && out_report_json, "ground_truth, pred_dir and out_report_json are required");
    LK_REQUIRE(threshold >= 0.0 && threshold <= 1.0, "threshold must be in [0,1]");
    return guarded([&] {
        if (!fs::is_directory(pred_dir)) lk::fail(lk::ErrorKind::MissingFile, std::string("not a directory: ") + pred_dir);
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(pred_dir))
            if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        std::vector<lk::PredictionDocument> docs;
        for (const auto& path : files) {
            std::ifstream in(path);
            json doc;
            try {
                in >> doc;
            } catch (const json::exception& e) {
                lk::fail(lk::ErrorKind::Schema, path.string() + ": " + e.what());
            }
            docs.push_back(lk::prediction_from_json(doc));
        }
        json report;
        if (overlaps_path) {
            std::ifstream in(overlaps_path);
            if (!in) lk::fail(lk::ErrorKind::MissingFile, std::string("cannot open ") + overlaps_path);
            json doc;
            try {
                in >> doc;
            } catch (const json::exception& e) {
                lk::fail(lk::ErrorKind::Schema, std::string(overlaps_path) + ": " + e.what());
            }
            report = lk::to_json(lk::evaluate_predicted_documents(ground_truth->manifest, docs, lk::overlaps_from_json(doc),
                                                                  threshold, optimal != 0));
            report["protocol"] = "predicted_instances";
        } else {
            report = lk::to_json(lk::evaluate_documents(ground_truth->manifest, docs));
            report["protocol"] = "gt_instances";
        }
        emit(out_report_json, report);
    });
}

lk_status lk_cosegment(const char* source_path, const char* target_path, const char* out_path, int yaw_bins, int k,
                       int max_iters, char** out_report_json) {
    LK_REQUIRE(source_path && target_path && out_path, "source, target and out paths are required");
    LK_REQUIRE(yaw_bins >= 1 && k >= 1 && max_iters >= 1, "yaw_bins, k and max_iters must be >= 1");
    return guarded([&] {
        const lk::LabeledPointCloud source = lk::read_point_cloud(source_path);
        lk::LabeledPointCloud target = lk::read_point_cloud(target_path);
        if (!source.has_labels()) lk::fail(lk::ErrorKind::Precondition, std::string(source_path) + ": source cloud needs labels");
        lk::IcpOptions options;
        options.yaw_bins = yaw_bins;
        options.max_iters = max_iters;
        const lk::IcpResult fit = lk::icp_align(source, target, options);
        target.labels = lk::transfer_labels(source, target, fit.transform, k);
        lk::write_point_cloud(out_path, target);
        json rotation = json::array();
        for (int r = 0; r < 3; ++r)
            rotation.push_back({fit.transform.rotation(r, 0), fit.transform.rotation(r, 1), fit.transform.rotation(r, 2)});
        const auto& t = fit.transform.translation;
        emit(out_report_json, {{"residual", fit.residual},
                               {"best_bin", fit.best_bin},
                               {"yaw_bins", yaw_bins},
                               {"k", k},
                               {"rotation", rotation},
                               {"translation", {t.x(), t.y(), t.z()}},
                               {"points", target.size()},
                               {"output", out_path}});
    });
}

void lk_server_options_init(lk_server_options* options) {
    if (!options) return;
    options->host = "127.0.0.1";
    options->port = 8080;
    options->static_dir = nullptr;
    options->review_dir = nullptr;
    options->t1 = 0.33;
    options->t2 = 0.66;
}

lk_status lk_server_create(const lk_dataset* dataset, const char* log_path, const lk_server_options* options,
                           lk_server** out) {
    LK_REQUIRE(dataset && log_path && out, "dataset, log_path and out are required");
    *out = nullptr;
    lk_server_options defaults;
    lk_server_options_init(&defaults);
    const lk_server_options& o = options ? *options : defaults;
    LK_REQUIRE(o.port >= 0 && o.port <= 65535, "port must be in 0..65535");
    bool bound = false;
    auto handle = std::make_unique<lk_server>();
    const lk_status status = guarded([&] {
        handle->service = std::make_unique<lk::AnnotationService>(dataset->manifest, log_path);
        if (o.review_dir) {
            lk::Thresholds t{o.t1, o.t2};
            t.validate();
            std::vector<lk::PredictionDocument> docs;
            for (const auto& entry : fs::directory_iterator(o.review_dir)) {
                if (entry.path().extension() != ".json") continue;
                std::ifstream in(entry.path());
                json doc;
                in >> doc;
                docs.push_back(lk::prediction_from_json(doc));
            }
            handle->service->enable_review(docs, t);
        }
        lk::ServerOptions so;
        so.host = o.host ? o.host : "127.0.0.1";
        so.port = o.port;
        if (o.static_dir) so.static_dir = o.static_dir;
        handle->server = std::make_unique<lk::AnnotationServer>(*handle->service, dataset->manifest.root, so);
        bound = handle->server->bind();
    });
    if (status != LK_OK) return status;
    if (!bound) return set_error(LK_ERR_BIND, "cannot bind " + std::string(o.host ? o.host : "127.0.0.1") + ":" +
                                                  std::to_string(o.port));
    *out = handle.release();
    return LK_OK;
}

int lk_server_port(const lk_server* server) { return server && server->server ? server->server->port() : -1; }

lk_status lk_server_run(lk_server* server) {
    LK_REQUIRE(server, "server is required");
    return guarded([&] { server->server->run(); });
}

void lk_server_stop(lk_server* server) {
    if (server && server->server) server->server->stop();
}

void lk_server_free(lk_server* server) { delete server; }

}  // extern "C"
