#include "personakit/study_http.hpp"

#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "personakit/error.hpp"

namespace personakit::study {

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::SessionNotFound: return 404;
        case ErrorCode::WrongState:
        case ErrorCode::RoundsIncomplete:
        case ErrorCode::DuplicateSubmission: return 409;
        case ErrorCode::RangeViolation:
        case ErrorCode::InsufficientData: return 422;
        case ErrorCode::EndpointFailure: return 502;
        case ErrorCode::EndpointsUnconfigured: return 503;
        case ErrorCode::SchemaError: return 400;
        default: return 500;
    }
}

struct StudyServer::Impl {
    Impl(StudyService& s, ServerOptions o) : service(s), options(std::move(o)) {}

    StudyService& service;
    ServerOptions options;
    httplib::Server server;
    std::thread thread;
    int port = 0;
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
    send_json(res, http_status(code), {{"error", {{"code", to_string(code)}, {"message", message}}}});
}

json body_json(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        auto doc = json::parse(req.body);
        if (!doc.is_object()) throw Error(ErrorCode::SchemaError, "request body must be a JSON object");
        return doc;
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::SchemaError, fmt::format("malformed JSON: {}", e.what()));
    }
}

std::optional<std::string> param(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) return std::nullopt;
    return req.get_param_value(name);
}

using Handler = std::function<json(const httplib::Request&)>;

httplib::Server::Handler wrap(Handler fn, int ok_status = 200) {
    return [fn = std::move(fn), ok_status](const httplib::Request& req, httplib::Response& res) {
        try {
            send_json(res, ok_status, fn(req));
        } catch (const Error& e) {
            send_error(res, e.code(), e.what());
        } catch (const json::exception& e) {
            send_error(res, ErrorCode::SchemaError, e.what());
        }
    };
}

}  // namespace

StudyServer::StudyServer(StudyService& service, ServerOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {
    auto& srv = impl_->server;
    auto& svc = impl_->service;
    const auto origin = impl_->options.cors_origin;

    srv.set_default_headers({{"Access-Control-Allow-Origin", origin},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    srv.Post("/api/sessions", wrap(
                                  [&svc](const httplib::Request& req) {
                                      const auto body = body_json(req);
                                      Participant p;
                                      if (body.contains("field_of_work"))
                                          p.field_of_work = body.at("field_of_work").get<std::string>();
                                      if (body.contains("gender")) p.gender = body.at("gender").get<std::string>();
                                      return svc.create_session(p);
                                  },
                                  201));
    srv.Get(R"(/api/sessions/([0-9a-f]+))",
            wrap([&svc](const httplib::Request& req) { return svc.get_session(req.matches[1]); }));
    srv.Post(R"(/api/sessions/([0-9a-f]+)/messages)", wrap([&svc](const httplib::Request& req) {
                 const auto body = body_json(req);
                 if (!body.contains("text") || !body.at("text").is_string())
                     throw Error(ErrorCode::SchemaError, "body needs a string 'text'");
                 return svc.relay_message(req.matches[1], body.at("text").get<std::string>());
             }));
    srv.Post(R"(/api/sessions/([0-9a-f]+)/switch)",
             wrap([&svc](const httplib::Request& req) { return svc.advance(req.matches[1]); }));
    srv.Post(R"(/api/sessions/([0-9a-f]+)/questionnaire)", wrap([&svc](const httplib::Request& req) {
                 return svc.submit_questionnaire(req.matches[1], questionnaire_from_json(body_json(req)));
             }));
    srv.Post(R"(/api/sessions/([0-9a-f]+)/abandon)",
             wrap([&svc](const httplib::Request& req) { return svc.abandon(req.matches[1]); }));
    srv.Get("/api/report", wrap([&svc](const httplib::Request& req) {
                ReportFilter f;
                f.field_of_work = param(req, "field_of_work");
                f.gender = param(req, "gender");
                f.first_model = param(req, "first_model");
                if (const auto t = param(req, "topic_related")) {
                    if (*t != "true" && *t != "false")
                        throw Error(ErrorCode::SchemaError, "topic_related must be true or false");
                    f.topic_related = *t == "true";
                }
                return svc.report(f);
            }));
    srv.Get("/api/config", wrap([&svc](const httplib::Request&) { return public_config(svc.config()); }));

    if (!impl_->options.static_dir.empty() && !srv.set_mount_point("/", impl_->options.static_dir.string())) {
        throw Error(ErrorCode::ConfigError, fmt::format("static dir {} not found", impl_->options.static_dir.string()));
    }
}

StudyServer::~StudyServer() { stop(); }

int StudyServer::bind() {
    auto& o = impl_->options;
    if (o.port == 0) {
        impl_->port = impl_->server.bind_to_any_port(o.host);
    } else {
        impl_->port = impl_->server.bind_to_port(o.host, o.port) ? o.port : -1;
    }
    if (impl_->port < 0) throw Error(ErrorCode::ConfigError, fmt::format("cannot bind {}:{}", o.host, o.port));
    spdlog::info("study service listening on {}:{}", o.host, impl_->port);
    return impl_->port;
}

void StudyServer::listen() { impl_->server.listen_after_bind(); }

int StudyServer::start() {
    const int port = bind();
    impl_->thread = std::thread([this] { listen(); });
    impl_->server.wait_until_ready();
    return port;
}

void StudyServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace personakit::study
