#include "personakit/study.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "personakit/error.hpp"
#include "personakit/stats.hpp"
#include "personakit/text.hpp"

namespace personakit::study {

namespace fs = std::filesystem;

std::vector<MetricDef> default_metrics(const std::string& persona_name) {
    return {
        {"human_simulation", "To what extent do you think the model behaves like a human?", false},
        {"character_simulation", fmt::format("Do you think this model behaves similarly to {}?", persona_name), false},
        {"trust", "How much would you trust what this model tells you?"},
        {"companionship", "How much did chatting with this model feel like keeping company with someone?"},
        {"fluency", "How fluent and natural was the model's language?"},
        {"consistency", "How consistent were the model's attitudes and style throughout the conversation?"},
        {"effectiveness", "How well did the model respond to what you actually asked or said?"},
        {"pleasure", "How enjoyable was the conversation?"},
        {"empathy", "How well did the model understand and respond to your feelings?"},
        {"knowledge", fmt::format("How well did the model command the knowledge {} would have?", persona_name)},
    };
}

void StudyConfig::validate() const {
    if (min_rounds < 1) throw Error(ErrorCode::ConfigError, "min_rounds must be at least 1");
    if (metrics.empty()) throw Error(ErrorCode::ConfigError, "no questionnaire metrics configured");
    std::set<std::string> names;
    for (const auto& m : metrics) {
        if (m.name.empty() || !names.insert(m.name).second)
            throw Error(ErrorCode::ConfigError, fmt::format("bad or duplicate metric name '{}'", m.name));
    }
    if (endpoints.size() > 2) throw Error(ErrorCode::ConfigError, "a study compares exactly two endpoints");
    if (endpoints.size() == 2 && endpoints[0].id == endpoints[1].id)
        throw Error(ErrorCode::ConfigError, "study endpoints must be distinct");
}

StudyConfig parse_study_config(const json& doc, const fs::path& base_dir) {
    StudyConfig c;
    try {
        c.persona_name = doc.value("persona_name", c.persona_name);
        c.metrics = default_metrics(c.persona_name);
        for (const auto& e : doc.value("endpoints", json::array())) {
            c.endpoints.push_back({e.at("id").get<std::string>(), e.at("provider"), e.value("system", std::string{})});
        }
        if (doc.contains("metrics")) {
            c.metrics.clear();
            for (const auto& m : doc.at("metrics")) {
                c.metrics.push_back({m.at("name").get<std::string>(), m.value("question", std::string{}),
                                     m.value("reconstructed", true)});
            }
        }
        c.min_rounds = doc.value("min_rounds", kDefaultMinRounds);
        c.seed = doc.value("seed", std::uint64_t{0});
        if (doc.contains("data_dir")) c.data_dir = base_dir / doc.at("data_dir").get<std::string>();
        c.max_message_chars = doc.value("max_message_chars", c.max_message_chars);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("study config: {}", e.what()));
    }
    c.base_dir = base_dir;
    c.validate();
    return c;
}

json public_config(const StudyConfig& config) {
    json metrics = json::array();
    for (const auto& m : config.metrics) {
        metrics.push_back({{"name", m.name}, {"question", m.question}, {"reconstructed", m.reconstructed}});
    }
    return {{"metrics", metrics},
            {"likert", {{"min", kLikertMin}, {"max", kLikertMax}}},
            {"overall_satisfaction", {{"min", kSatisfactionMin}, {"max", kSatisfactionMax}}},
            {"min_rounds", config.min_rounds},
            {"labels", {kLabelFirst, kLabelSecond}},
            {"max_message_chars", config.max_message_chars}};
}

std::string_view to_string(State state) {
    switch (state) {
        case State::chatting_first: return "chatting_first";
        case State::chatting_second: return "chatting_second";
        case State::questionnaire: return "questionnaire";
        case State::submitted: return "submitted";
        case State::abandoned: return "abandoned";
    }
    return "unknown";
}

State state_from_string(std::string_view s) {
    for (auto st : {State::chatting_first, State::chatting_second, State::questionnaire, State::submitted,
                    State::abandoned}) {
        if (to_string(st) == s) return st;
    }
    throw Error(ErrorCode::SchemaError, fmt::format("unknown session state '{}'", s));
}

namespace {

const std::array<std::string, 2> kLabels{kLabelFirst, kLabelSecond};

json participant_json(const Participant& p) {
    json out{{"pseudonym", p.pseudonym}};
    if (p.field_of_work) out["field_of_work"] = *p.field_of_work;
    if (p.gender) out["gender"] = *p.gender;
    return out;
}

Participant participant_from_json(const json& doc) {
    Participant p;
    p.pseudonym = doc.value("pseudonym", std::string{});
    if (doc.contains("field_of_work")) p.field_of_work = doc.at("field_of_work").get<std::string>();
    if (doc.contains("gender")) p.gender = doc.at("gender").get<std::string>();
    return p;
}

json turns_json(const std::vector<ChatTurn>& turns) {
    json out = json::array();
    for (const auto& t : turns) out.push_back({{"role", providers::to_string(t.role)}, {"text", t.text}});
    return out;
}

void check_range(int value, int lo, int hi, const std::string& what) {
    if (value < lo || value > hi)
        throw Error(ErrorCode::RangeViolation, fmt::format("{} = {} outside [{}, {}]", what, value, lo, hi));
}

void validate_questionnaire(const QuestionnaireResponse& q, const StudyConfig& config) {
    for (const auto& label : kLabels) {
        const auto scores = q.metric_scores.find(label);
        if (scores == q.metric_scores.end())
            throw Error(ErrorCode::RangeViolation, fmt::format("no scores for model {}", label));
        for (const auto& m : config.metrics) {
            const auto it = scores->second.find(m.name);
            if (it == scores->second.end())
                throw Error(ErrorCode::RangeViolation, fmt::format("metric {} unanswered for model {}", m.name, label));
            check_range(it->second, kLikertMin, kLikertMax, fmt::format("{} for model {}", m.name, label));
        }
        if (scores->second.size() != config.metrics.size())
            throw Error(ErrorCode::RangeViolation, fmt::format("unknown metric in scores for model {}", label));
        const auto sat = q.overall_satisfaction.find(label);
        if (sat == q.overall_satisfaction.end())
            throw Error(ErrorCode::RangeViolation, fmt::format("no overall satisfaction for model {}", label));
        check_range(sat->second, kSatisfactionMin, kSatisfactionMax, fmt::format("overall satisfaction for {}", label));
    }
    if (q.metric_scores.size() != 2 || q.overall_satisfaction.size() != 2)
        throw Error(ErrorCode::RangeViolation, "scores must cover exactly the two session models");
}

void apply_event(StudySession& s, const json& e) {
    const auto type = e.at("type").get<std::string>();
    if (type == "created") {
        s.session_id = e.at("session_id").get<std::string>();
        s.participant = participant_from_json(e.at("participant"));
        s.model_order = e.at("model_order").get<std::array<std::string, 2>>();
        s.state = State::chatting_first;
    } else if (type == "message") {
        const auto m = e.at("model").get<int>();
        if (m != s.current_model()) throw Error(ErrorCode::SchemaError, "message event for the inactive model");
        s.transcripts[m].push_back({providers::Role::user, e.at("user").get<std::string>()});
        s.transcripts[m].push_back({providers::Role::assistant, e.at("reply").get<std::string>()});
        ++s.rounds_completed[m];
    } else if (type == "advance") {
        s.state = state_from_string(e.at("to").get<std::string>());
    } else if (type == "submitted") {
        s.questionnaire = questionnaire_from_json(e.at("questionnaire"));
        s.state = State::submitted;
    } else {
        throw Error(ErrorCode::SchemaError, fmt::format("unknown event type '{}'", type));
    }
}

json summary_json(const stats::Summary& s) { return {{"n", s.n}, {"mean", s.mean}, {"sd", s.sd}}; }

json compare(const std::string& name, const std::array<std::string, 2>& ids, const std::vector<double>& a,
             const std::vector<double>& b) {
    const auto r = stats::welch_t_test(a, b);
    return {{"metric", name},
            {"models", {{ids[0], summary_json(r.a)}, {ids[1], summary_json(r.b)}}},
            {"welch", {{"t", r.t}, {"df", r.df}, {"p", r.p}, {"significant", r.p < kSignificance}}}};
}

}  // namespace

json to_json(const QuestionnaireResponse& q) {
    return {{"metric_scores", q.metric_scores},
            {"overall_satisfaction", q.overall_satisfaction},
            {"free_text", q.free_text},
            {"topic_related", q.topic_related}};
}

QuestionnaireResponse questionnaire_from_json(const json& doc) {
    try {
        QuestionnaireResponse q;
        q.metric_scores = doc.at("metric_scores").get<std::map<std::string, std::map<std::string, int>>>();
        q.overall_satisfaction = doc.at("overall_satisfaction").get<std::map<std::string, int>>();
        q.free_text = doc.value("free_text", std::string{});
        q.topic_related = doc.value("topic_related", false);
        return q;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::RangeViolation, fmt::format("questionnaire: {}", e.what()));
    }
}

json snapshot_json(const StudySession& s) {
    json out{{"session_id", s.session_id},
             {"participant", participant_json(s.participant)},
             {"model_order", s.model_order},
             {"transcripts", {turns_json(s.transcripts[0]), turns_json(s.transcripts[1])}},
             {"rounds_completed", s.rounds_completed},
             {"state", to_string(s.state)}};
    if (s.questionnaire) out["questionnaire"] = to_json(*s.questionnaire);
    return out;
}

json public_view(const StudySession& s, int min_rounds) {
    const bool chatting = s.state == State::chatting_first || s.state == State::chatting_second;
    const bool rounds_met = s.rounds_completed[0] >= min_rounds && s.rounds_completed[1] >= min_rounds;
    return {{"session_id", s.session_id},
            {"pseudonym", s.participant.pseudonym},
            {"state", to_string(s.state)},
            {"current_label", chatting ? json(kLabels[s.current_model()]) : json(nullptr)},
            {"rounds_completed", {{kLabels[0], s.rounds_completed[0]}, {kLabels[1], s.rounds_completed[1]}}},
            {"transcripts", {{kLabels[0], turns_json(s.transcripts[0])}, {kLabels[1], turns_json(s.transcripts[1])}}},
            {"min_rounds", min_rounds},
            {"can_switch", s.state == State::chatting_first && s.rounds_completed[0] >= min_rounds},
            {"can_finish_chat", s.state == State::chatting_second && s.rounds_completed[1] >= min_rounds},
            {"can_submit", rounds_met && (s.state == State::chatting_second || s.state == State::questionnaire)}};
}

bool questionnaire_invariant_holds(const StudySession& s, int min_rounds) {
    return !s.questionnaire || (s.rounds_completed[0] >= min_rounds && s.rounds_completed[1] >= min_rounds);
}

bool ReportFilter::matches(const StudySession& s) const {
    if (field_of_work && s.participant.field_of_work != field_of_work) return false;
    if (gender && s.participant.gender != gender) return false;
    if (topic_related && (!s.questionnaire || s.questionnaire->topic_related != *topic_related)) return false;
    if (first_model && s.model_order[0] != *first_model) return false;
    return true;
}

json to_json(const ReportFilter& f) {
    json out = json::object();
    if (f.field_of_work) out["field_of_work"] = *f.field_of_work;
    if (f.gender) out["gender"] = *f.gender;
    if (f.topic_related) out["topic_related"] = *f.topic_related;
    if (f.first_model) out["first_model"] = *f.first_model;
    return out;
}

json aggregate_report(std::vector<StudySession> sessions, const StudyConfig& config, const ReportFilter& filter) {
    if (config.endpoints.size() != 2) throw Error(ErrorCode::EndpointsUnconfigured, "two study endpoints required");
    const std::array<std::string, 2> ids{config.endpoints[0].id, config.endpoints[1].id};
    std::sort(sessions.begin(), sessions.end(),
              [](const StudySession& a, const StudySession& b) { return a.session_id < b.session_id; });
    std::vector<const StudySession*> used;
    for (const auto& s : sessions) {
        if (s.state == State::submitted && s.questionnaire && filter.matches(s)) used.push_back(&s);
    }
    if (used.size() < 2)
        throw Error(ErrorCode::InsufficientData,
                    fmt::format("{} submitted session(s) match the filter; at least 2 needed", used.size()));

    // label of endpoint k in session s
    auto label_of = [&](const StudySession& s, int k) {
        if (s.model_order[0] == ids[k]) return kLabels[0];
        if (s.model_order[1] == ids[k]) return kLabels[1];
        throw Error(ErrorCode::SchemaError, fmt::format("session {} did not use endpoint {}", s.session_id, ids[k]));
    };

    std::map<std::string, std::size_t> first_counts{{ids[0], 0}, {ids[1], 0}};
    for (const auto* s : used) ++first_counts[s->model_order[0]];

    json metrics = json::array();
    for (const auto& m : config.metrics) {
        std::array<std::vector<double>, 2> values;
        for (const auto* s : used) {
            for (int k = 0; k < 2; ++k) {
                const auto& scores = s->questionnaire->metric_scores.at(label_of(*s, k));
                if (const auto it = scores.find(m.name); it != scores.end()) values[k].push_back(it->second);
            }
        }
        metrics.push_back(compare(m.name, ids, values[0], values[1]));
    }
    std::array<std::vector<double>, 2> satisfaction;
    for (const auto* s : used) {
        for (int k = 0; k < 2; ++k) satisfaction[k].push_back(s->questionnaire->overall_satisfaction.at(label_of(*s, k)));
    }
    return {{"filter", to_json(filter)},
            {"models", ids},
            {"n_sessions", used.size()},
            {"first_model_counts", first_counts},
            {"significance_level", kSignificance},
            {"metrics", metrics},
            {"overall_satisfaction", compare("overall_satisfaction", ids, satisfaction[0], satisfaction[1])}};
}

StudySession replay_events(const std::vector<json>& events) {
    if (events.empty() || events.front().value("type", "") != "created")
        throw Error(ErrorCode::SchemaError, "event log must start with a 'created' event");
    StudySession s;
    try {
        for (const auto& e : events) apply_event(s, e);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, fmt::format("event log: {}", e.what()));
    }
    return s;
}

std::vector<StudySession> replay_sessions(const fs::path& data_dir) {
    std::vector<StudySession> out;
    const auto root = data_dir / "sessions";
    if (!fs::exists(root)) return out;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && fs::exists(entry.path() / "events.jsonl")) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        auto s = replay_events(read_jsonl(dir / "events.jsonl"));
        if (s.state == State::submitted) out.push_back(std::move(s));
    }
    return out;
}

StudyService::StudyService(StudyConfig config,
                           std::map<std::string, std::shared_ptr<providers::ChatProvider>> endpoints)
    : config_(std::move(config)),
      endpoints_(std::move(endpoints)),
      order_rng_(config_.seed),
      id_rng_(std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32)) {
    config_.validate();
    if (!config_.data_dir.empty()) {
        for (auto& s : replay_sessions(config_.data_dir)) {
            const auto id = s.session_id;
            submitted_.emplace(id, std::move(s));
        }
        if (!submitted_.empty()) spdlog::info("study: loaded {} submitted session(s)", submitted_.size());
    }
}

namespace {

std::map<std::string, std::shared_ptr<providers::ChatProvider>> build_endpoints(const StudyConfig& config) {
    std::map<std::string, std::shared_ptr<providers::ChatProvider>> out;
    for (const auto& e : config.endpoints) out[e.id] = providers::make_chat_provider(e.provider, config.base_dir);
    return out;
}

}  // namespace

StudyService::StudyService(StudyConfig config) : StudyService(config, build_endpoints(config)) {}

std::string StudyService::new_id() {
    // caller holds mutex_
    for (;;) {
        auto id = fmt::format("{:016x}", id_rng_.next());
        if (!sessions_.contains(id) && !submitted_.contains(id)) return id;
    }
}

std::shared_ptr<StudyService::Entry> StudyService::find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) {
        if (submitted_.contains(id)) return nullptr;
        throw Error(ErrorCode::SessionNotFound, fmt::format("no session '{}'", id));
    }
    return it->second;
}

void StudyService::record(Entry& entry, json event) {
    event["seq"] = entry.events.size();
    entry.events.push_back(std::move(event));
}

void StudyService::persist(const Entry& entry) const {
    if (config_.data_dir.empty()) return;
    const auto dir = config_.data_dir / "sessions" / entry.session.session_id;
    std::string log;
    for (const auto& e : entry.events) log += e.dump() + "\n";
    write_atomic(dir / "events.jsonl", log);
    write_atomic(dir / "session.json", snapshot_json(entry.session).dump(2) + "\n");
}

json StudyService::create_session(const Participant& participant) {
    if (config_.endpoints.size() != 2)
        throw Error(ErrorCode::EndpointsUnconfigured,
                    fmt::format("{} study endpoint(s) configured, 2 required", config_.endpoints.size()));
    for (const auto& e : config_.endpoints) {
        if (!endpoints_.contains(e.id) || !endpoints_.at(e.id))
            throw Error(ErrorCode::EndpointsUnconfigured, fmt::format("no provider for endpoint '{}'", e.id));
    }
    auto entry = std::make_shared<Entry>();
    auto& s = entry->session;
    {
        std::lock_guard lock(mutex_);
        s.session_id = new_id();
        s.model_order = {config_.endpoints[0].id, config_.endpoints[1].id};
        if (order_rng_.index(2) == 1) std::swap(s.model_order[0], s.model_order[1]);
        sessions_[s.session_id] = entry;
    }
    s.participant = participant;
    s.participant.pseudonym = "p-" + s.session_id.substr(0, 8);
    record(*entry, {{"type", "created"},
                    {"session_id", s.session_id},
                    {"participant", participant_json(s.participant)},
                    {"model_order", s.model_order}});
    return public_view(s, config_.min_rounds);
}

json StudyService::get_session(const std::string& id) const {
    const auto entry = find(id);
    if (!entry) {
        std::lock_guard lock(mutex_);
        return public_view(submitted_.at(id), config_.min_rounds);
    }
    std::lock_guard lock(entry->mutex);
    return public_view(entry->session, config_.min_rounds);
}

json StudyService::relay_message(const std::string& id, const std::string& text) {
    const auto entry = find(id);
    if (!entry) throw Error(ErrorCode::WrongState, "session already submitted");
    std::lock_guard lock(entry->mutex);
    auto& s = entry->session;
    if (s.state != State::chatting_first && s.state != State::chatting_second)
        throw Error(ErrorCode::WrongState, fmt::format("cannot chat in state {}", to_string(s.state)));
    const auto message = std::string(text::trim(text));
    if (message.empty()) throw Error(ErrorCode::SchemaError, "empty message");
    if (message.size() > config_.max_message_chars)
        throw Error(ErrorCode::RangeViolation, fmt::format("message longer than {} bytes", config_.max_message_chars));

    const int m = s.current_model();
    const auto& endpoint_id = s.model_order[m];
    providers::ChatRequest req;
    const auto spec = std::find_if(config_.endpoints.begin(), config_.endpoints.end(),
                                   [&](const StudyEndpoint& e) { return e.id == endpoint_id; });
    if (!spec->system.empty()) req.system = spec->system;
    for (const auto& turn : s.transcripts[m]) req.messages.push_back({turn.role, turn.text});
    req.messages.push_back({providers::Role::user, message});

    std::string reply;
    try {
        reply = std::string(text::trim(endpoints_.at(endpoint_id)->complete(req)));
    } catch (const std::exception& e) {
        throw Error(ErrorCode::EndpointFailure, fmt::format("model {} failed: {}", kLabels[m], e.what()));
    }
    if (reply.empty()) throw Error(ErrorCode::EndpointFailure, fmt::format("model {} returned nothing", kLabels[m]));

    s.transcripts[m].push_back({providers::Role::user, message});
    s.transcripts[m].push_back({providers::Role::assistant, reply});
    ++s.rounds_completed[m];
    record(*entry, {{"type", "message"}, {"model", m}, {"user", message}, {"reply", reply}});
    auto view = public_view(s, config_.min_rounds);
    view["reply"] = reply;
    return view;
}

json StudyService::advance(const std::string& id) {
    const auto entry = find(id);
    if (!entry) throw Error(ErrorCode::WrongState, "session already submitted");
    std::lock_guard lock(entry->mutex);
    auto& s = entry->session;
    State next;
    if (s.state == State::chatting_first) {
        next = State::chatting_second;
    } else if (s.state == State::chatting_second) {
        next = State::questionnaire;
    } else {
        throw Error(ErrorCode::WrongState, fmt::format("cannot switch in state {}", to_string(s.state)));
    }
    const int m = s.current_model();
    if (s.rounds_completed[m] < config_.min_rounds)
        throw Error(ErrorCode::RoundsIncomplete, fmt::format("model {} has {} of {} rounds", kLabels[m],
                                                             s.rounds_completed[m], config_.min_rounds));
    s.state = next;
    record(*entry, {{"type", "advance"}, {"to", to_string(next)}});
    return public_view(s, config_.min_rounds);
}

json StudyService::submit_questionnaire(const std::string& id, const QuestionnaireResponse& q) {
    const auto entry = find(id);
    if (!entry) throw Error(ErrorCode::DuplicateSubmission, fmt::format("session {} already submitted", id));
    std::lock_guard lock(entry->mutex);
    auto& s = entry->session;
    if (s.state == State::submitted)
        throw Error(ErrorCode::DuplicateSubmission, fmt::format("session {} already submitted", id));
    if (s.state == State::abandoned) throw Error(ErrorCode::WrongState, "session abandoned");
    if (s.rounds_completed[0] < config_.min_rounds || s.rounds_completed[1] < config_.min_rounds)
        throw Error(ErrorCode::RoundsIncomplete,
                    fmt::format("rounds ({}, {}) below {}", s.rounds_completed[0], s.rounds_completed[1],
                                config_.min_rounds));
    validate_questionnaire(q, config_);

    const auto before = s.state;
    const auto events_before = entry->events.size();
    if (s.state == State::chatting_second) record(*entry, {{"type", "advance"}, {"to", "questionnaire"}});
    s.questionnaire = q;
    s.state = State::submitted;
    record(*entry, {{"type", "submitted"}, {"questionnaire", to_json(q)}});
    try {
        persist(*entry);
    } catch (...) {
        s.questionnaire.reset();
        s.state = before;
        entry->events.resize(events_before);
        throw;
    }
    {
        std::lock_guard service_lock(mutex_);
        submitted_[id] = s;
        sessions_.erase(id);
    }
    return {{"session_id", id}, {"state", to_string(State::submitted)}};
}

json StudyService::abandon(const std::string& id) {
    const auto entry = find(id);
    if (!entry) throw Error(ErrorCode::WrongState, "session already submitted");
    std::lock_guard lock(entry->mutex);
    auto& s = entry->session;
    if (s.state == State::abandoned) throw Error(ErrorCode::WrongState, "session already abandoned");
    s.state = State::abandoned;
    s.transcripts = {};
    entry->events.clear();
    return public_view(s, config_.min_rounds);
}

std::vector<StudySession> StudyService::submitted() const {
    std::lock_guard lock(mutex_);
    std::vector<StudySession> out;
    for (const auto& [id, s] : submitted_) out.push_back(s);
    return out;
}

json StudyService::report(const ReportFilter& filter) const { return aggregate_report(submitted(), config_, filter); }

}  // namespace personakit::study
