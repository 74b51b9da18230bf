// lookalike: command-line front end over the C interface.
//
// Exit codes: 0 ok, 2 usage, 3 divergence, 4 evaluation universe mismatch, 5 bad input data,
// 6 address unavailable, 1 anything else.

#include <pthread.h>
#include <signal.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "lookalike/lookalike.h"

using json = nlohmann::json;

namespace {

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kDivergence = 3, kMismatch = 4, kBadInput = 5, kBind = 6 };

int exit_code(lk_status status) {
    switch (status) {
        case LK_OK: return kOk;
        case LK_ERR_INVALID_ARGUMENT: return kUsage;
        case LK_ERR_DIVERGENCE: return kDivergence;
        case LK_ERR_UNIVERSE_MISMATCH: return kMismatch;
        case LK_ERR_MISSING_FILE:
        case LK_ERR_SCHEMA:
        case LK_ERR_INVARIANT:
        case LK_ERR_PRECONDITION:
        case LK_ERR_DECODE:
        case LK_ERR_SHAPE:
        case LK_ERR_VIEW_COUNT:
        case LK_ERR_DIM_MISMATCH:
        case LK_ERR_DUPLICATE_PAIR:
        case LK_ERR_DEGENERATE_GEOMETRY:
        case LK_ERR_EMPTY_DATASET:
        case LK_ERR_VALIDATION:
            return kBadInput;
        case LK_ERR_BIND: return kBind;
        default: return kOther;
    }
}

struct Failure {
    int code;
};

// Prints the last error and unwinds to main with the mapped exit code.
void check(lk_status status) {
    if (status == LK_OK) return;
    std::fprintf(stderr, "lookalike: %s\n", lk_last_error());
    throw Failure{exit_code(status)};
}

[[noreturn]] void usage_error(const std::string& message) {
    std::fprintf(stderr, "lookalike: %s\n", message.c_str());
    throw Failure{kUsage};
}

// Takes ownership of a string returned by the library.
std::string take(char* text) {
    std::string out = text ? text : "";
    lk_free_string(text);
    return out;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        std::fprintf(stderr, "lookalike: cannot open %s\n", path.c_str());
        throw Failure{kBadInput};
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        std::fprintf(stderr, "lookalike: %s: %s\n", path.c_str(), e.what());
        throw Failure{kBadInput};
    }
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text << '\n';
    if (!out) {
        std::fprintf(stderr, "lookalike: cannot write %s\n", path.c_str());
        throw Failure{kOther};
    }
}

struct Dataset {
    lk_dataset* handle = nullptr;
    ~Dataset() { lk_dataset_free(handle); }
};

struct Model {
    lk_model* handle = nullptr;
    ~Model() { lk_model_free(handle); }
};

// LOOKALIKE_DATA_ROOT, when set, replaces the directory crop paths resolve against.
void load_dataset(const std::string& manifest, Dataset& out) {
    const char* root = std::getenv("LOOKALIKE_DATA_ROOT");
    check(lk_dataset_load(manifest.c_str(), root, 1, &out.handle));
}

// A directory argument means its manifest.json.
std::string manifest_path(const std::string& data) {
    std::error_code ec;
    if (std::filesystem::is_directory(data, ec)) return (std::filesystem::path(data) / "manifest.json").string();
    return data;
}

// ---- make-toy ----------------------------------------------------------------------------

struct MakeToyArgs {
    std::string out;
    int scenes = 8;
    uint64_t seed = 0;
    std::string split = "train";
};

int cmd_make_toy(const MakeToyArgs& a) {
    check(lk_make_toy(a.out.c_str(), a.scenes, a.seed, a.split.c_str()));
    std::printf("wrote %d scenes to %s\n", a.scenes, a.out.c_str());
    return kOk;
}

// ---- train -------------------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::string preset;
    std::string backbone;
    std::optional<int> steps;
    std::optional<int> epochs;
    std::optional<double> lr;
    std::optional<int> batch;
    std::optional<int> workers;
    uint64_t seed = 0;
    bool seed_given = false;
    bool resume = false;
    int log_every = 50;
};

// Preset, then the config file as a JSON merge patch, then flags. Flags win.
json compose_run_config(const TrainArgs& a) {
    std::string preset = a.preset;
    if (preset.empty()) preset = a.backbone == "toy" ? "toy" : "default";
    char* text = nullptr;
    check(lk_run_config_preset(preset.c_str(), &text));
    json cfg = json::parse(take(text));
    if (!a.config.empty()) cfg.merge_patch(read_json_file(a.config));
    if (!a.backbone.empty()) cfg["backbone"]["kind"] = a.backbone;
    if (a.steps) cfg["train"]["max_steps"] = *a.steps;
    if (a.epochs) cfg["train"]["epochs"] = *a.epochs;
    if (a.lr) cfg["train"]["learning_rate"] = *a.lr;
    if (a.batch) cfg["train"]["batch_pairs_max"] = *a.batch;
    if (a.workers) cfg["train"]["workers"] = *a.workers;
    if (a.seed_given) cfg["train"]["seed"] = a.seed;
    check(lk_run_config_normalize(cfg.dump().c_str(), &text));
    return json::parse(take(text));
}

struct Progress {
    int every;
};

void on_step(int step, double triplet, double align, double total, void* user) {
    const auto* p = static_cast<const Progress*>(user);
    if (p->every > 0 && step % p->every == 0)
        std::printf("step %5d  triplet %.5f  align %.5f  total %.5f\n", step, triplet, align, total);
    std::fflush(stdout);
}

int cmd_train(const TrainArgs& a) {
    const json cfg = compose_run_config(a);
    const std::string cfg_text = cfg.dump();
    Dataset ds;
    load_dataset(manifest_path(a.data), ds);
    Model model;
    check(lk_model_create(cfg_text.c_str(), cfg["train"]["seed"].get<uint64_t>(), &model.handle));
    Progress progress{a.log_every};
    check(lk_train(model.handle, ds.handle, cfg_text.c_str(), a.out.c_str(), a.resume ? 1 : 0, on_step, &progress));
    std::printf("checkpoint %s\n", (std::filesystem::path(a.out) / "checkpoint.ckpt").c_str());
    return kOk;
}

// ---- predict -----------------------------------------------------------------------------

struct PredictArgs {
    std::string ckpt;
    std::string data;
    std::string out;
    int views = 5;
    int workers = 0;
    uint64_t seed = 0;  // inference is deterministic; accepted for uniformity
};

std::string checkpoint_path(const std::string& ckpt) {
    std::error_code ec;
    if (std::filesystem::is_directory(ckpt, ec)) return (std::filesystem::path(ckpt) / "checkpoint.ckpt").string();
    return ckpt;
}

int cmd_predict(const PredictArgs& a) {
    Dataset ds;
    load_dataset(manifest_path(a.data), ds);
    Model model;
    check(lk_model_load(checkpoint_path(a.ckpt).c_str(), &model.handle));
    char* summary = nullptr;
    check(lk_predict(model.handle, ds.handle, a.views, a.workers, a.out.c_str(), &summary));
    const json doc = json::parse(take(summary));
    std::printf("wrote %zu prediction documents to %s (%d views)\n", doc["documents"].size(), a.out.c_str(), a.views);
    return kOk;
}

// ---- eval --------------------------------------------------------------------------------

struct EvalArgs {
    std::string gt;
    std::string pred;
    bool pred_instances = false;
    std::string overlaps;
    double threshold = 0.5;
    bool optimal = false;
    std::string out;
    uint64_t seed = 0;
};

void print_row(const std::string& name, const json& r) {
    std::printf("%-14s %8.4f %8.4f %8.4f %8.4f %8d\n", name.c_str(), r["iou_id"].get<double>(),
                r["iou_sim"].get<double>(), r["iou_diff"].get<double>(), r["overall"].get<double>(),
                r["n_pairs"].get<int>());
}

int cmd_eval(const EvalArgs& a) {
    if (a.pred_instances && a.overlaps.empty()) usage_error("--pred-instances requires --overlaps");
    if (!a.overlaps.empty() && !a.pred_instances) usage_error("--overlaps requires --pred-instances");
    Dataset ds;
    load_dataset(manifest_path(a.gt), ds);
    char* text = nullptr;
    check(lk_evaluate(ds.handle, a.pred.c_str(), a.pred_instances ? a.overlaps.c_str() : nullptr, a.threshold,
                      a.optimal ? 1 : 0, &text));
    const std::string report = take(text);
    const json doc = json::parse(report);
    std::printf("%-14s %8s %8s %8s %8s %8s\n", "scene", "iou_id", "iou_sim", "iou_diff", "overall", "n_pairs");
    for (const auto& row : doc["scenes"]) print_row(row["scene_id"].get<std::string>(), row);
    print_row("pooled", doc["pooled"]);
    if (!a.out.empty()) write_text_file(a.out, report);
    return kOk;
}

// ---- cosegment ---------------------------------------------------------------------------

struct CosegmentArgs {
    std::string source;
    std::string target;
    std::string out;
    int yaw_bins = 8;
    int k = 5;
    int max_iters = 60;
    std::string report;
    uint64_t seed = 0;  // alignment is deterministic; accepted for uniformity
};

int cmd_cosegment(const CosegmentArgs& a) {
    char* text = nullptr;
    check(lk_cosegment(a.source.c_str(), a.target.c_str(), a.out.c_str(), a.yaw_bins, a.k, a.max_iters, &text));
    const std::string report = take(text);
    const json doc = json::parse(report);
    std::printf("residual %.6g  best_bin %d  points %d  -> %s\n", doc["residual"].get<double>(),
                doc["best_bin"].get<int>(), doc["points"].get<int>(), a.out.c_str());
    if (!a.report.empty()) write_text_file(a.report, report);
    return kOk;
}

// ---- serve -------------------------------------------------------------------------------

struct ServeArgs {
    std::string data;
    std::string log;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string static_dir;
    std::string review;
    double t1 = 0.33;
    double t2 = 0.66;
};

struct Server {
    lk_server* handle = nullptr;
    ~Server() { lk_server_free(handle); }
};

int cmd_serve(const ServeArgs& a) {
    // Block the signals before any thread exists so only the waiter below sees them.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    sigaddset(&signals, SIGUSR1);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    Dataset ds;
    load_dataset(manifest_path(a.data), ds);
    lk_server_options options;
    lk_server_options_init(&options);
    options.host = a.host.c_str();
    options.port = a.port;
    options.static_dir = a.static_dir.empty() ? nullptr : a.static_dir.c_str();
    options.review_dir = a.review.empty() ? nullptr : a.review.c_str();
    options.t1 = a.t1;
    options.t2 = a.t2;
    Server server;
    check(lk_server_create(ds.handle, a.log.c_str(), &options, &server.handle));
    std::printf("listening on http://%s:%d\n", a.host.c_str(), lk_server_port(server.handle));
    std::fflush(stdout);

    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        lk_server_stop(server.handle);
    });
    const lk_status status = lk_server_run(server.handle);
    // Wakes the waiter when run() ended without a signal.
    pthread_kill(waiter.native_handle(), SIGUSR1);
    waiter.join();
    check(status);
    std::printf("stopped\n");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lookalike object detection: toy data, training, prediction, evaluation, co-segmentation, annotation"};
    app.require_subcommand(1);
    int verbosity = 2;
    app.add_option("--log-level", verbosity, "0 debug .. 4 off")->check(CLI::Range(0, 4));

    MakeToyArgs toy;
    auto* make_toy = app.add_subcommand("make-toy", "Generate a synthetic dataset");
    make_toy->add_option("--out", toy.out, "Output directory")->required();
    make_toy->add_option("--scenes", toy.scenes, "Number of scenes")->check(CLI::PositiveNumber);
    make_toy->add_option("--seed", toy.seed, "Random seed");
    make_toy->add_option("--split", toy.split, "train or val")->check(CLI::IsMember({"train", "val"}));

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train the pair encoder");
    train_cmd->add_option("--config", train.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    train_cmd->add_option("--data", train.data, "Manifest or dataset directory")->required();
    train_cmd->add_option("--out", train.out, "Output directory")->required();
    train_cmd->add_option("--preset", train.preset, "Base configuration")->check(CLI::IsMember({"default", "toy"}));
    train_cmd->add_option("--backbone", train.backbone, "foundation or toy")->check(CLI::IsMember({"foundation", "toy"}));
    train_cmd->add_option("--steps", train.steps, "Stop after this many optimizer steps");
    train_cmd->add_option("--epochs", train.epochs, "Number of epochs");
    train_cmd->add_option("--lr", train.lr, "Learning rate");
    train_cmd->add_option("--batch", train.batch, "Maximum pairs per batch");
    train_cmd->add_option("--workers", train.workers, "Feature extraction threads (0: all cores)");
    auto* train_seed = train_cmd->add_option("--seed", train.seed, "Random seed");
    train_cmd->add_flag("--resume", train.resume, "Continue from the checkpoint in --out");
    train_cmd->add_option("--log-every", train.log_every, "Print losses every N steps (0: never)");

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "Score all intra-class pairs");
    predict_cmd->add_option("--ckpt", predict.ckpt, "Checkpoint file or training directory")->required();
    predict_cmd->add_option("--data", predict.data, "Manifest or dataset directory")->required();
    predict_cmd->add_option("--out", predict.out, "Directory for per-scene documents")->required();
    predict_cmd->add_option("--views", predict.views, "Views per object")->check(CLI::PositiveNumber);
    predict_cmd->add_option("--workers", predict.workers, "Threads (0: all cores)");
    predict_cmd->add_option("--seed", predict.seed, "Accepted for uniformity; prediction is deterministic");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Pair IoU of predictions against ground truth");
    eval_cmd->add_option("--gt,--data", eval.gt, "Ground-truth manifest or dataset directory")->required();
    eval_cmd->add_option("--pred", eval.pred, "Directory of prediction documents")->required();
    eval_cmd->add_flag("--pred-instances", eval.pred_instances, "Predicted-instance protocol");
    eval_cmd->add_option("--overlaps", eval.overlaps, "Instance overlap matrices (JSON)");
    eval_cmd->add_option("--threshold", eval.threshold, "Association threshold")->check(CLI::Range(0.0, 1.0));
    eval_cmd->add_flag("--optimal", eval.optimal, "Optimal instead of greedy association");
    eval_cmd->add_option("--out", eval.out, "Write the report as JSON");
    eval_cmd->add_option("--seed", eval.seed, "Accepted for uniformity; evaluation is deterministic");

    CosegmentArgs coseg;
    auto* coseg_cmd = app.add_subcommand("cosegment", "Align two point clouds and transfer part labels");
    coseg_cmd->add_option("--source", coseg.source, "Labeled source cloud")->required();
    coseg_cmd->add_option("--target", coseg.target, "Target cloud")->required();
    coseg_cmd->add_option("--out", coseg.out, "Labeled target output")->required();
    coseg_cmd->add_option("--yaw-bins", coseg.yaw_bins, "Initial yaw hypotheses")->check(CLI::PositiveNumber);
    coseg_cmd->add_option("--k", coseg.k, "Neighbours for label voting")->check(CLI::PositiveNumber);
    coseg_cmd->add_option("--max-iters", coseg.max_iters, "ICP iterations per hypothesis")->check(CLI::PositiveNumber);
    coseg_cmd->add_option("--report", coseg.report, "Write transform and residual as JSON");
    coseg_cmd->add_option("--seed", coseg.seed, "Accepted for uniformity; alignment is deterministic");

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the annotation service");
    serve_cmd->add_option("--data", serve.data, "Manifest or dataset directory")->required();
    serve_cmd->add_option("--log", serve.log, "Event log (created when absent)")->required();
    serve_cmd->add_option("--host", serve.host, "Bind address");
    serve_cmd->add_option("--port", serve.port, "Port (0: any free port)")->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--static", serve.static_dir, "UI bundle served at /")->check(CLI::ExistingDirectory);
    serve_cmd->add_option("--review", serve.review, "Prediction documents; serve ambiguous pairs first")
        ->check(CLI::ExistingDirectory);
    serve_cmd->add_option("--t1", serve.t1, "Lower review threshold");
    serve_cmd->add_option("--t2", serve.t2, "Upper review threshold");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        check(lk_set_log_level(verbosity));
        if (*make_toy) return cmd_make_toy(toy);
        if (*train_cmd) {
            train.seed_given = train_seed->count() > 0;
            return cmd_train(train);
        }
        if (*predict_cmd) return cmd_predict(predict);
        if (*eval_cmd) return cmd_eval(eval);
        if (*coseg_cmd) return cmd_cosegment(coseg);
        if (*serve_cmd) return cmd_serve(serve);
    } catch (const Failure& f) {
        return f.code;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "lookalike: %s\n", e.what());
        return kOther;
    }
    return kUsage;
}
