#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "personakit/error.hpp"
#include "personakit/study.hpp"

namespace personakit::study {

// HTTP status for a service error code.
int http_status(ErrorCode code);

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::string cors_origin = "*";
    std::filesystem::path static_dir;  // optional built UI assets, served at /
};

// JSON API over a StudyService:
//   POST /api/sessions                         {field_of_work?, gender?}
//   GET  /api/sessions/{id}
//   POST /api/sessions/{id}/messages           {text}
//   POST /api/sessions/{id}/switch
//   POST /api/sessions/{id}/questionnaire      QuestionnaireResponse
//   POST /api/sessions/{id}/abandon
//   GET  /api/report?field_of_work=&gender=&topic_related=&first_model=
//   GET  /api/config
// Errors: {"error": {"code", "message"}}.
class StudyServer {
public:
    StudyServer(StudyService& service, ServerOptions options);
    ~StudyServer();
    StudyServer(const StudyServer&) = delete;
    StudyServer& operator=(const StudyServer&) = delete;

    // Binds and returns the bound port; throws ConfigError when binding fails.
    int bind();
    // Blocks until stop().
    void listen();
    // bind() then listen() on a background thread.
    int start();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace personakit::study
