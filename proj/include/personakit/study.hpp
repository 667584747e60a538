#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "personakit/providers.hpp"
#include "personakit/util.hpp"

namespace personakit::study {

inline constexpr int kDefaultMinRounds = 4;
inline constexpr int kLikertMin = 1;
inline constexpr int kLikertMax = 5;
inline constexpr int kSatisfactionMin = 0;
inline constexpr int kSatisfactionMax = 100;
inline constexpr double kSignificance = 0.05;
// Participant-facing labels for the first and second model in a session.
inline constexpr const char* kLabelFirst = "A";
inline constexpr const char* kLabelSecond = "B";

struct MetricDef {
    std::string name;
    std::string question;
    bool reconstructed = true;  // wording not quoted from a published questionnaire
};

std::vector<MetricDef> default_metrics(const std::string& persona_name);

struct StudyEndpoint {
    std::string id;
    json provider;       // spec for make_chat_provider
    std::string system;  // optional system prompt, e.g. a persona profile for a prompted baseline
};

struct StudyConfig {
    std::vector<StudyEndpoint> endpoints;
    std::vector<MetricDef> metrics = default_metrics("the character");
    int min_rounds = kDefaultMinRounds;
    std::uint64_t seed = 0;
    std::filesystem::path data_dir;
    std::string persona_name = "the character";
    std::size_t max_message_chars = 4000;
    std::filesystem::path base_dir;

    void validate() const;
};

StudyConfig parse_study_config(const json& doc, const std::filesystem::path& base_dir = {});
// Question text and scales, as served to the UI.
json public_config(const StudyConfig& config);

enum class State { chatting_first, chatting_second, questionnaire, submitted, abandoned };
std::string_view to_string(State state);
State state_from_string(std::string_view s);

struct Participant {
    std::string pseudonym;
    std::optional<std::string> field_of_work;
    std::optional<std::string> gender;
};

struct ChatTurn {
    providers::Role role = providers::Role::user;
    std::string text;
};

struct QuestionnaireResponse {
    std::map<std::string, std::map<std::string, int>> metric_scores;  // label -> metric -> score
    std::map<std::string, int> overall_satisfaction;                  // label -> score
    std::string free_text;
    bool topic_related = false;
};

json to_json(const QuestionnaireResponse& q);
QuestionnaireResponse questionnaire_from_json(const json& doc);

struct StudySession {
    std::string session_id;
    Participant participant;
    std::array<std::string, 2> model_order;
    std::array<std::vector<ChatTurn>, 2> transcripts;
    std::array<int, 2> rounds_completed{0, 0};
    std::optional<QuestionnaireResponse> questionnaire;
    State state = State::chatting_first;

    int current_model() const { return state == State::chatting_first ? 0 : 1; }
};

// Full record, model identities included.
json snapshot_json(const StudySession& s);
// Participant-facing view: model identities hidden behind labels, gating flags included.
json public_view(const StudySession& s, int min_rounds);

// Re-checkable store invariant: a questionnaire implies both models reached min_rounds.
bool questionnaire_invariant_holds(const StudySession& s, int min_rounds);

struct ReportFilter {
    std::optional<std::string> field_of_work;
    std::optional<std::string> gender;
    std::optional<bool> topic_related;
    std::optional<std::string> first_model;

    bool matches(const StudySession& s) const;
};

json to_json(const ReportFilter& f);

// Pure function of the submitted sessions, taken in session_id order. Throws InsufficientData.
json aggregate_report(std::vector<StudySession> sessions, const StudyConfig& config, const ReportFilter& filter);

// Rebuilds submitted sessions by replaying every <data_dir>/sessions/<id>/events.jsonl.
std::vector<StudySession> replay_sessions(const std::filesystem::path& data_dir);
StudySession replay_events(const std::vector<json>& events);

class StudyService {
public:
    // `endpoints` maps endpoint id to its provider; ids must match the config.
    StudyService(StudyConfig config, std::map<std::string, std::shared_ptr<providers::ChatProvider>> endpoints);
    // Builds providers from the config's endpoint specs.
    explicit StudyService(StudyConfig config);

    json create_session(const Participant& participant);
    json get_session(const std::string& id) const;
    json relay_message(const std::string& id, const std::string& text);
    // chatting_first -> chatting_second -> questionnaire, each after min_rounds.
    json advance(const std::string& id);
    json submit_questionnaire(const std::string& id, const QuestionnaireResponse& q);
    // Drops an unsubmitted session; nothing is persisted.
    json abandon(const std::string& id);

    json report(const ReportFilter& filter) const;
    const StudyConfig& config() const { return config_; }
    std::vector<StudySession> submitted() const;

private:
    struct Entry {
        std::mutex mutex;
        StudySession session;
        std::vector<json> events;
    };

    std::shared_ptr<Entry> find(const std::string& id) const;
    std::string new_id();
    void persist(const Entry& entry) const;
    void record(Entry& entry, json event);

    StudyConfig config_;
    std::map<std::string, std::shared_ptr<providers::ChatProvider>> endpoints_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
    std::map<std::string, StudySession> submitted_;
    Rng order_rng_;
    Rng id_rng_;
};

}  // namespace personakit::study
