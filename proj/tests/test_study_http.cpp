#include <gtest/gtest.h>

#include <httplib.h>

#include "generators.hpp"
#include "personakit/error.hpp"
#include "personakit/study_http.hpp"
#include "study_fixture.hpp"

using namespace personakit;
using namespace personakit::study;

namespace {

class StudyHttp : public ::testing::Test {
protected:
    void SetUp() override {
        service_ = std::make_unique<StudyService>(studyfx::config(dir_.path()));
        ServerOptions o;
        o.port = 0;
        server_ = std::make_unique<StudyServer>(*service_, o);
        port_ = server_->start();
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    }
    void TearDown() override { server_->stop(); }

    std::pair<int, json> post(const std::string& path, const json& body = json::object()) {
        auto res = client_->Post(path, body.dump(), "application/json");
        EXPECT_TRUE(res);
        return {res->status, res->body.empty() ? json() : json::parse(res->body)};
    }
    std::pair<int, json> get(const std::string& path) {
        auto res = client_->Get(path);
        EXPECT_TRUE(res);
        return {res->status, res->body.empty() ? json() : json::parse(res->body)};
    }
    std::string create() {
        const auto [status, body] = post("/api/sessions", {{"field_of_work", "history"}});
        EXPECT_EQ(status, 201);
        return body.at("session_id").get<std::string>();
    }
    void rounds(const std::string& id, int n) {
        for (int i = 0; i < n; ++i) EXPECT_EQ(post("/api/sessions/" + id + "/messages", {{"text", "hello"}}).first, 200);
    }

    gen::TempDir dir_{"http"};
    gen::Gen g_{5};
    std::unique_ptr<StudyService> service_;
    std::unique_ptr<StudyServer> server_;
    std::unique_ptr<httplib::Client> client_;
    int port_ = 0;
};

}  // namespace

TEST_F(StudyHttp, FullSessionOverHttp) {
    const auto id = create();
    auto [status, view] = get("/api/sessions/" + id);
    EXPECT_EQ(status, 200);
    EXPECT_EQ(view["state"], "chatting_first");
    EXPECT_EQ(view["current_label"], "A");

    rounds(id, 3);
    EXPECT_EQ(post("/api/sessions/" + id + "/switch").first, 409);
    rounds(id, 1);
    std::tie(status, view) = post("/api/sessions/" + id + "/switch");
    EXPECT_EQ(status, 200);
    EXPECT_EQ(view["state"], "chatting_second");
    EXPECT_EQ(view["current_label"], "B");

    auto q = to_json(studyfx::answers(service_->config(), g_));
    rounds(id, 2);
    EXPECT_EQ(post("/api/sessions/" + id + "/questionnaire", q).first, 409);
    rounds(id, 2);
    auto bad = q;
    bad["metric_scores"]["A"]["fluency"] = 0;
    std::tie(status, view) = post("/api/sessions/" + id + "/questionnaire", bad);
    EXPECT_EQ(status, 422);
    EXPECT_EQ(view["error"]["code"], "RangeViolation");
    EXPECT_EQ(post("/api/sessions/" + id + "/questionnaire", q).first, 200);
    std::tie(status, view) = post("/api/sessions/" + id + "/questionnaire", q);
    EXPECT_EQ(status, 409);
    EXPECT_EQ(view["error"]["code"], "DuplicateSubmission");
    EXPECT_TRUE(std::filesystem::exists(dir_.path() / "sessions" / id / "events.jsonl"));
    EXPECT_EQ(get("/api/sessions/" + id).second["state"], "submitted");
}

TEST_F(StudyHttp, ParticipantViewNeverNamesModels) {
    const auto id = create();
    rounds(id, 4);
    post("/api/sessions/" + id + "/switch");
    rounds(id, 4);
    const auto [status, view] = get("/api/sessions/" + id);
    EXPECT_EQ(status, 200);
    const auto text = view.dump();
    EXPECT_EQ(text.find("tuned"), std::string::npos);
    EXPECT_EQ(text.find("prompted"), std::string::npos);
    EXPECT_EQ(text.find("model_order"), std::string::npos);
    EXPECT_EQ(view["transcripts"]["A"].size(), 8u);
}

TEST_F(StudyHttp, ErrorStatuses) {
    EXPECT_EQ(get("/api/sessions/0123abcd").first, 404);
    EXPECT_EQ(get("/api/sessions/0123abcd").second["error"]["code"], "SessionNotFound");
    const auto id = create();
    EXPECT_EQ(post("/api/sessions/" + id + "/messages", {{"body", "x"}}).first, 400);
    auto res = client_->Post("/api/sessions/" + id + "/messages", "{not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(post("/api/sessions/" + id + "/abandon").first, 200);
    EXPECT_EQ(post("/api/sessions/" + id + "/messages", {{"text", "hi"}}).first, 409);
    EXPECT_EQ(get("/api/report").first, 422);
    EXPECT_EQ(get("/api/report?topic_related=maybe").first, 400);
}

TEST_F(StudyHttp, CorsAndConfig) {
    auto res = client_->Options("/api/sessions");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 204);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
    const auto [status, cfg] = get("/api/config");
    EXPECT_EQ(status, 200);
    EXPECT_EQ(cfg["min_rounds"], 4);
    EXPECT_EQ(cfg["metrics"].size(), 10u);
    EXPECT_EQ(cfg.dump().find("tuned"), std::string::npos);
}

TEST_F(StudyHttp, ReportFiltersOverQuery) {
    for (int i = 0; i < 6; ++i) {
        const auto [status, body] =
            post("/api/sessions", {{"field_of_work", i < 4 ? "history" : "art"}, {"gender", "female"}});
        ASSERT_EQ(status, 201);
        const auto id = body["session_id"].get<std::string>();
        rounds(id, 4);
        post("/api/sessions/" + id + "/switch");
        rounds(id, 4);
        auto q = studyfx::answers(service_->config(), g_);
        q.topic_related = i % 2 == 0;
        ASSERT_EQ(post("/api/sessions/" + id + "/questionnaire", to_json(q)).first, 200);
    }
    EXPECT_EQ(get("/api/report").second["n_sessions"], 6);
    EXPECT_EQ(get("/api/report?field_of_work=history").second["n_sessions"], 4);
    EXPECT_EQ(get("/api/report?topic_related=true").second["n_sessions"], 3);
    EXPECT_EQ(get("/api/report?field_of_work=art&gender=male").first, 422);
    EXPECT_EQ(get("/api/report").second.dump(), service_->report({}).dump());
}

TEST(StudyHttpStatus, Mapping) {
    EXPECT_EQ(http_status(ErrorCode::SessionNotFound), 404);
    EXPECT_EQ(http_status(ErrorCode::WrongState), 409);
    EXPECT_EQ(http_status(ErrorCode::RoundsIncomplete), 409);
    EXPECT_EQ(http_status(ErrorCode::DuplicateSubmission), 409);
    EXPECT_EQ(http_status(ErrorCode::RangeViolation), 422);
    EXPECT_EQ(http_status(ErrorCode::EndpointsUnconfigured), 503);
    EXPECT_EQ(http_status(ErrorCode::EndpointFailure), 502);
}

TEST(StudyHttpUnconfigured, CreateReturns503) {
    auto c = studyfx::config();
    c.endpoints.pop_back();
    StudyService svc(c);
    ServerOptions o;
    o.port = 0;
    StudyServer server(svc, o);
    const int port = server.start();
    httplib::Client client("127.0.0.1", port);
    auto res = client.Post("/api/sessions", "{}", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 503);
    server.stop();
}
