#include "personakit/arena.hpp"

#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "personakit/error.hpp"
#include "personakit/evaluation.hpp"
#include "personakit/text.hpp"

namespace personakit::arena {

namespace {

AgentConfig parse_agent(const json& doc) {
    AgentConfig agent;
    agent.name = doc.at("name").get<std::string>();
    agent.endpoint = doc.value("endpoint", json::object());
    agent.preamble = doc.value("preamble", std::string{});
    return agent;
}

json agent_json(const AgentConfig& agent) {
    return {{"name", agent.name}, {"endpoint", agent.endpoint}, {"preamble", agent.preamble}};
}

}  // namespace

void ScenarioConfig::validate() const {
    auto fail = [&](const std::string& why) {
        throw Error(ErrorCode::ConfigError, fmt::format("scenario '{}': {}", scenario_id, why));
    };
    if (scenario_id.empty()) fail("empty scenario_id");
    if (agent_a.name.empty() || agent_b.name.empty()) fail("agents need names");
    if (agent_a.name == agent_b.name) fail("agents must be distinct");
    if (opening_speaker != agent_a.name && opening_speaker != agent_b.name)
        fail("opening_speaker names neither agent");
    if (text::trim(opening_message).empty()) fail("empty opening_message");
    if (total_turns < 2) fail("total_turns must be at least 2");
    if (max_tokens < 1) fail("max_tokens must be positive");
}

ScenarioConfig parse_scenario(const json& doc, const std::filesystem::path& base_dir) {
    ScenarioConfig c;
    try {
        c.scenario_id = doc.at("scenario_id").get<std::string>();
        c.agent_a = parse_agent(doc.at("agent_a"));
        c.agent_b = parse_agent(doc.at("agent_b"));
        c.opening_speaker = doc.value("opening_speaker", c.agent_a.name);
        c.opening_message = doc.at("opening_message").get<std::string>();
        c.total_turns = doc.value("total_turns", 6);
        c.max_tokens = doc.value("max_tokens", 512);
        c.history_limit = doc.value("history_limit", std::size_t{0});
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("scenario: {}", e.what()));
    }
    c.base_dir = base_dir;
    c.validate();
    return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
    return parse_scenario(read_json(path), path.parent_path());
}

json to_json(const ScenarioConfig& c) {
    return {{"scenario_id", c.scenario_id},
            {"agent_a", agent_json(c.agent_a)},
            {"agent_b", agent_json(c.agent_b)},
            {"opening_speaker", c.opening_speaker},
            {"opening_message", c.opening_message},
            {"total_turns", c.total_turns},
            {"max_tokens", c.max_tokens},
            {"history_limit", c.history_limit}};
}

providers::ChatRequest agent_request(const ScenarioConfig& config, const std::vector<TurnRecord>& turns,
                                     const std::string& speaker) {
    providers::ChatRequest req;
    const auto& agent = speaker == config.agent_a.name ? config.agent_a : config.agent_b;
    if (!agent.preamble.empty()) req.system = agent.preamble;
    req.max_output_tokens = config.max_tokens;
    std::size_t first = 0;
    if (config.history_limit > 0 && turns.size() > config.history_limit) first = turns.size() - config.history_limit;
    for (std::size_t i = first; i < turns.size(); ++i) {
        req.messages.push_back(
            {turns[i].speaker == speaker ? providers::Role::assistant : providers::Role::user, turns[i].text});
    }
    return req;
}

Transcript run_dialogue(const ScenarioConfig& config, providers::ChatProvider& agent_a,
                        providers::ChatProvider& agent_b) {
    config.validate();
    for (const auto* p : {&agent_a, &agent_b}) {
        if (!p->available())
            throw Error(ErrorCode::EndpointUnavailable, fmt::format("endpoint {} is unavailable", p->id()));
    }
    Transcript t;
    t.scenario_id = config.scenario_id;
    t.turns.push_back({config.opening_speaker, config.opening_message, 0});
    while (static_cast<int>(t.turns.size()) < config.total_turns) {
        const auto& previous = t.turns.back().speaker;
        const bool a_next = previous == config.agent_b.name;
        const auto& speaker = a_next ? config.agent_a.name : config.agent_b.name;
        auto& provider = a_next ? agent_a : agent_b;
        const auto index = static_cast<int>(t.turns.size());
        try {
            auto reply = std::string(text::trim(provider.complete(agent_request(config, t.turns, speaker))));
            if (reply.empty()) throw Error(ErrorCode::EndpointFailure, "empty reply");
            t.turns.push_back({speaker, std::move(reply), index});
        } catch (const std::exception& e) {
            t.failures.push_back(fmt::format("turn {} ({}): {}", index, speaker, e.what()));
            spdlog::warn("arena {}: turn {} failed: {}", config.scenario_id, index, e.what());
            return t;
        }
    }
    t.completed = true;
    return t;
}

double ols_slope(const std::vector<double>& y) {
    const auto n = y.size();
    if (n < 2) return 0.0;
    const double x_mean = static_cast<double>(n - 1) / 2.0;
    double y_mean = 0.0;
    for (double v : y) y_mean += v;
    y_mean /= static_cast<double>(n);
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = static_cast<double>(i) - x_mean;
        sxy += dx * (y[i] - y_mean);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

namespace {

std::size_t count_tokens(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > hay.size()) return 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
        if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(i))) ++hits;
    }
    return hits;
}

}  // namespace

std::size_t count_term(const std::string& text, const std::string& term) {
    return count_tokens(evaluation::tokenize(text).tokens, evaluation::tokenize(term).tokens);
}

TranscriptAnalysis analyze_transcript(const Transcript& transcript, providers::Embedder& embedder,
                                      const std::vector<Lexicon>& lexicons) {
    if (transcript.turns.size() < 2)
        throw Error(ErrorCode::TooShort, fmt::format("transcript {} has {} turn(s)", transcript.scenario_id,
                                                     transcript.turns.size()));
    std::vector<std::string> texts;
    for (const auto& turn : transcript.turns) texts.push_back(turn.text);
    const auto vectors = providers::embed_all(embedder, texts);

    TranscriptAnalysis a;
    for (std::size_t i = 0; i + 1 < vectors.size(); ++i) {
        a.cross_agent_similarity.push_back(providers::cosine(vectors[i], vectors[i + 1]));
    }
    a.convergence_slope = ols_slope(a.cross_agent_similarity);

    std::vector<std::vector<std::string>> turn_tokens;
    for (const auto& turn : transcript.turns) turn_tokens.push_back(evaluation::tokenize(turn.text).tokens);
    for (const auto& lexicon : lexicons) {
        std::set<std::vector<std::string>> terms;
        for (const auto& term : lexicon.terms) {
            auto tokens = evaluation::tokenize(term).tokens;
            if (!tokens.empty()) terms.insert(std::move(tokens));
        }
        auto& per_speaker = a.lexicon_hits[lexicon.name];
        for (std::size_t i = 0; i < transcript.turns.size(); ++i) {
            auto& count = per_speaker[transcript.turns[i].speaker];
            for (const auto& term : terms) count += count_tokens(turn_tokens[i], term);
        }
    }
    return a;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
    Lexicon lexicon{path.stem().string(), {}};
    std::istringstream in(read_text(path));
    std::string line;
    while (std::getline(in, line)) {
        const auto term = text::trim(line);
        if (term.empty() || term.front() == '#') continue;
        lexicon.terms.emplace_back(term);
    }
    return lexicon;
}

json to_json(const TranscriptAnalysis& a) {
    return {{"cross_agent_similarity", a.cross_agent_similarity},
            {"convergence_slope", a.convergence_slope},
            {"lexicon_hits", a.lexicon_hits}};
}

json to_json(const Transcript& t) {
    json turns = json::array();
    for (const auto& turn : t.turns) {
        turns.push_back({{"turn_index", turn.turn_index}, {"speaker", turn.speaker}, {"text", turn.text}});
    }
    json doc{{"scenario_id", t.scenario_id}, {"turns", turns}, {"completed", t.completed}};
    if (!t.failures.empty()) doc["failures"] = t.failures;
    if (t.analysis) doc["analysis"] = to_json(*t.analysis);
    return doc;
}

Transcript transcript_from_json(const json& doc) {
    try {
        Transcript t;
        t.scenario_id = doc.at("scenario_id").get<std::string>();
        t.completed = doc.value("completed", false);
        for (const auto& turn : doc.at("turns")) {
            t.turns.push_back({turn.at("speaker").get<std::string>(), turn.at("text").get<std::string>(),
                               turn.at("turn_index").get<int>()});
        }
        for (std::size_t i = 0; i < t.turns.size(); ++i) {
            if (t.turns[i].turn_index != static_cast<int>(i))
                throw Error(ErrorCode::SchemaError, "turn_index must be contiguous from 0");
            if (i > 0 && t.turns[i].speaker == t.turns[i - 1].speaker)
                throw Error(ErrorCode::SchemaError, "speakers must alternate");
        }
        t.failures = doc.value("failures", std::vector<std::string>{});
        if (doc.contains("analysis")) {
            const auto& a = doc.at("analysis");
            TranscriptAnalysis analysis;
            analysis.cross_agent_similarity = a.at("cross_agent_similarity").get<std::vector<double>>();
            analysis.convergence_slope = a.at("convergence_slope").get<double>();
            analysis.lexicon_hits =
                a.at("lexicon_hits").get<std::map<std::string, std::map<std::string, std::size_t>>>();
            t.analysis = std::move(analysis);
        }
        return t;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, fmt::format("transcript: {}", e.what()));
    }
}

std::string pretty_print(const Transcript& t) {
    std::string out = fmt::format("== {} ({} turns{}) ==\n", t.scenario_id, t.turns.size(),
                                  t.completed ? "" : ", incomplete");
    for (const auto& turn : t.turns) out += fmt::format("\n[{}] {}:\n{}\n", turn.turn_index, turn.speaker, turn.text);
    if (t.analysis) {
        out += "\nsimilarity:";
        for (double s : t.analysis->cross_agent_similarity) out += fmt::format(" {:.3f}", s);
        out += fmt::format("\nconvergence slope: {:.6f}\n", t.analysis->convergence_slope);
        for (const auto& [lexicon, speakers] : t.analysis->lexicon_hits) {
            out += fmt::format("lexicon {}:", lexicon);
            for (const auto& [speaker, count] : speakers) out += fmt::format(" {}={}", speaker, count);
            out += "\n";
        }
    }
    for (const auto& f : t.failures) out += fmt::format("failure: {}\n", f);
    return out;
}

}  // namespace personakit::arena
