#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "personakit/providers.hpp"
#include "personakit/util.hpp"

namespace personakit::arena {

struct AgentConfig {
    std::string name;
    json endpoint;         // provider spec understood by make_chat_provider
    std::string preamble;  // system prompt; empty for a tuned endpoint
};

struct ScenarioConfig {
    std::string scenario_id;
    AgentConfig agent_a;
    AgentConfig agent_b;
    std::string opening_speaker;  // name of agent_a or agent_b
    std::string opening_message;
    int total_turns = 6;
    int max_tokens = 512;
    std::size_t history_limit = 0;  // most recent turns passed to an agent; 0 keeps the whole transcript
    std::filesystem::path base_dir;

    // Throws ConfigError.
    void validate() const;
};

ScenarioConfig parse_scenario(const json& doc, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario(const std::filesystem::path& path);
json to_json(const ScenarioConfig& config);

struct TurnRecord {
    std::string speaker;
    std::string text;
    int turn_index = 0;
};

struct Lexicon {
    std::string name;
    std::vector<std::string> terms;
};

struct TranscriptAnalysis {
    std::vector<double> cross_agent_similarity;
    double convergence_slope = 0.0;
    std::map<std::string, std::map<std::string, std::size_t>> lexicon_hits;  // lexicon -> speaker -> count
};

struct Transcript {
    std::string scenario_id;
    std::vector<TurnRecord> turns;
    bool completed = false;
    std::optional<TranscriptAnalysis> analysis;
    std::vector<std::string> failures;
};

// Turn 0 is the opening message; each later turn is produced by the other agent
// from the prior transcript. Stops early, completed=false, when an agent fails.
Transcript run_dialogue(const ScenarioConfig& config, providers::ChatProvider& agent_a,
                        providers::ChatProvider& agent_b);

// Chat request agent `speaker` receives before producing its next turn.
providers::ChatRequest agent_request(const ScenarioConfig& config, const std::vector<TurnRecord>& turns,
                                     const std::string& speaker);

// Least-squares slope of y over x = 0..n-1; 0 for fewer than two points.
double ols_slope(const std::vector<double>& y);

// Occurrences of `term` (one or more tokens) as whole tokens in `text`, case-insensitive.
std::size_t count_term(const std::string& text, const std::string& term);

// Throws TooShort below two turns.
TranscriptAnalysis analyze_transcript(const Transcript& transcript, providers::Embedder& embedder,
                                      const std::vector<Lexicon>& lexicons);

// One term per line; blank lines and lines starting with '#' are skipped. Name = file stem.
Lexicon load_lexicon(const std::filesystem::path& path);

json to_json(const TranscriptAnalysis& analysis);
json to_json(const Transcript& transcript);
Transcript transcript_from_json(const json& doc);
std::string pretty_print(const Transcript& transcript);

}  // namespace personakit::arena
