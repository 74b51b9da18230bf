#include "lookalike/annotation_server.h"

#include <sys/socket.h>

#include <atomic>

#include "httplib.h"
#include "lookalike/errors.h"
#include "lookalike/log.h"

namespace lookalike {

using json = nlohmann::json;

int http_status(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Validation:
        case ErrorKind::Schema: return 400;
        case ErrorKind::NotFound:
        case ErrorKind::NoPairsRemaining: return 404;
        case ErrorKind::Conflict:
        case ErrorKind::NothingToUndo: return 409;
        default: return 500;
    }
}

struct AnnotationServer::Impl {
    AnnotationService& service;
    std::filesystem::path root;
    ServerOptions options;
    httplib::Server server;
    int bound_port = -1;
    std::atomic<bool> stop_requested{false};
    std::atomic<bool> listening{false};

    Impl(AnnotationService& s, std::filesystem::path r, ServerOptions o)
        : service(s), root(std::move(r)), options(std::move(o)) {
        // httplib sets SO_REUSEPORT by default, which lets a second server share a busy port.
        server.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
        });
    }

    static void send(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, const Error& e, json extra = json::object()) {
        extra["error"] = error_kind_name(e.kind());
        extra["message"] = e.what();
        send(res, http_status(e.kind()), extra);
    }

    static json parse_body(const httplib::Request& req) {
        if (req.body.empty()) return json::object();
        try {
            json doc = json::parse(req.body);
            if (!doc.is_object()) fail(ErrorKind::Schema, "request body must be an object");
            return doc;
        } catch (const json::exception& e) {
            fail(ErrorKind::Schema, std::string("malformed request body: ") + e.what());
        }
    }

    void label(const httplib::Request& req, httplib::Response& res) {
        const std::string a = req.path_params.at("a");
        const std::string b = req.path_params.at("b");
        std::string scene_id;
        try {
            const json body = parse_body(req);
            if (!body.contains("label") || !body["label"].is_string()) fail(ErrorKind::Validation, "'label' is required");
            const PairLabel label = parse_pair_label(body["label"].get<std::string>());
            std::set<SimilarityType> types;
            if (body.contains("similarity_types")) {
                if (!body["similarity_types"].is_array()) fail(ErrorKind::Validation, "similarity_types must be an array");
                for (const auto& t : body["similarity_types"]) {
                    if (!t.is_string()) fail(ErrorKind::Validation, "similarity type must be a string");
                    types.insert(parse_similarity_type(t.get<std::string>()));
                }
            }
            scene_id = body.contains("scene_id") ? body["scene_id"].get<std::string>() : service.scene_of_pair(a, b);
            const AnnotationEvent event = service.submit_label(scene_id, a, b, label, types);
            send(res, 200, {{"event", to_json(event)}, {"pair", service.pair_state(scene_id, a, b)}});
        } catch (const Error& e) {
            // First write wins: the loser gets the state it lost to.
            json extra = json::object();
            if (e.kind() == ErrorKind::Conflict && !scene_id.empty()) extra["current"] = service.pair_state(scene_id, a, b);
            const ErrorKind kind = e.kind() == ErrorKind::Schema ? ErrorKind::Validation : e.kind();
            send_error(res, Error(kind, e.what()), extra);
        }
    }

    void routes() {
        auto guarded = [](auto handler) {
            return [handler](const httplib::Request& req, httplib::Response& res) {
                try {
                    handler(req, res);
                } catch (const Error& e) {
                    send_error(res, e);
                } catch (const std::exception& e) {
                    send(res, 500, {{"error", "Internal"}, {"message", e.what()}});
                }
            };
        };
        server.Get("/api/scenes", guarded([this](const httplib::Request&, httplib::Response& res) {
                       send(res, 200, service.scenes_json());
                   }));
        server.Get("/api/scenes/:id/pairs/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       send(res, 200, service.next_pair(req.path_params.at("id")));
                   }));
        server.Post("/api/pairs/:a/:b/label",
                    [this](const httplib::Request& req, httplib::Response& res) { label(req, res); });
        server.Post("/api/scenes/:id/merge", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const json body = parse_body(req);
                        if (!body.contains("a") || !body.contains("b")) fail(ErrorKind::Validation, "'a' and 'b' are required");
                        const auto event = service.merge(req.path_params.at("id"), body["a"].get<std::string>(),
                                                         body["b"].get<std::string>());
                        send(res, 200, {{"event", to_json(event)}});
                    }));
        server.Post("/api/undo", guarded([this](const httplib::Request&, httplib::Response& res) {
                        send(res, 200, {{"event", to_json(service.undo())}});
                    }));
        server.Get("/api/progress", guarded([this](const httplib::Request&, httplib::Response& res) {
                       send(res, 200, service.progress_json());
                   }));
        server.Get("/api/export", guarded([this](const httplib::Request&, httplib::Response& res) {
                       send(res, 200, service.export_json());
                   }));
        server.set_mount_point("/files", root.string());
        if (!options.static_dir.empty() && !server.set_mount_point("/", options.static_dir.string()))
            log_warning("static directory not found: " + options.static_dir.string());
    }
};

AnnotationServer::AnnotationServer(AnnotationService& service, std::filesystem::path data_root, ServerOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(data_root), std::move(options))) {
    impl_->routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

bool AnnotationServer::bind() {
    if (impl_->options.port == 0) {
        impl_->bound_port = impl_->server.bind_to_any_port(impl_->options.host);
        return impl_->bound_port > 0;
    }
    if (!impl_->server.bind_to_port(impl_->options.host, impl_->options.port)) return false;
    impl_->bound_port = impl_->options.port;
    return true;
}

int AnnotationServer::port() const { return impl_->bound_port; }

void AnnotationServer::run() {
    impl_->listening = true;
    if (!impl_->stop_requested) impl_->server.listen_after_bind();
    impl_->listening = false;
}

// Safe from any thread, before or during run().
void AnnotationServer::stop() {
    impl_->stop_requested = true;
    if (!impl_->listening) return;
    impl_->server.wait_until_ready();
    impl_->server.stop();
}

}  // namespace lookalike
