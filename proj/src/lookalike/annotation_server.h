#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "lookalike/annotation.h"
#include "lookalike/errors.h"

namespace lookalike {

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::filesystem::path static_dir;  // optional UI bundle served at /
};

// HTTP front end for AnnotationService:
//   GET  /api/scenes
//   GET  /api/scenes/{id}/pairs/next
//   POST /api/pairs/{a}/{b}/label    body {"label", "similarity_types"[, "scene_id"]}
//   POST /api/scenes/{id}/merge      body {"a", "b"}
//   POST /api/undo
//   GET  /api/progress
//   GET  /api/export
//   GET  /files/...                  crops and masks under the manifest root
class AnnotationServer {
public:
    AnnotationServer(AnnotationService& service, std::filesystem::path data_root, ServerOptions options);
    ~AnnotationServer();

    bool bind();  // false when the address is unavailable
    int port() const;
    void run();   // blocks until stop()
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// HTTP status for a core error kind.
int http_status(ErrorKind kind);

}  // namespace lookalike
