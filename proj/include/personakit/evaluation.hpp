#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "personakit/providers.hpp"
#include "personakit/templates.hpp"

namespace personakit::evaluation {

enum class ScriptProfile { latin, cjk, mixed };

struct TokenSequence {
    std::vector<std::string> tokens;
    ScriptProfile script_profile = ScriptProfile::latin;
};

// Lowercased maximal letter/digit runs; every CJK character is a token of its own; punctuation dropped.
TokenSequence tokenize(std::string_view text);

// Corpus BLEU with clipped counts summed over the corpus, uniform weights,
// brevity penalty, precisions floored at 1e-9 before the log. Percentage.
inline constexpr double kPrecisionFloor = 1e-9;
double bleu_corpus(std::span<const TokenSequence> candidates, std::span<const TokenSequence> references, int max_n);

// Clipped matched reference n-grams over total reference n-grams.
double rouge_n(const TokenSequence& candidate, const TokenSequence& reference, int n = 2);
// LCS length over reference length.
double rouge_l(const TokenSequence& candidate, const TokenSequence& reference);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

// One row of the exported test set.
struct TestItem {
    std::string item_id;
    std::string persona_id;
    std::string stage_id;
    std::string label_token;
    std::string input;
    std::string user_text;
    std::string golden_response;
};

TestItem test_item_from_json(const json& row);
std::vector<TestItem> load_test_items(const std::filesystem::path& path);

struct Candidate {
    std::string item_id;
    std::string text;
    bool error = false;
    std::string error_message;
};

json to_json(const Candidate& c);
Candidate candidate_from_json(const json& row);
std::vector<Candidate> load_candidates(const std::filesystem::path& path);

// One candidate per item, in input order. Failed calls become flagged empty
// candidates; ProviderUnavailable only when every call fails.
std::vector<Candidate> generate_candidates(std::span<const TestItem> items, providers::ChatProvider& endpoint,
                                           const std::optional<std::string>& preamble, std::size_t jobs = 1,
                                           int max_output_tokens = 512);

struct ItemScore {
    std::string item_id;
    std::string persona_id;
    double rouge2 = 0.0;  // [0, 1]
    double rougeL = 0.0;  // [0, 1]
    bool flagged = false;
};

struct Aggregates {
    double bleu2 = 0.0;  // percentages
    double bleu4 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
    std::optional<double> win_rate;
};

struct EvalReport {
    std::string method_name;
    std::vector<ItemScore> items;
    Aggregates aggregates;
    std::size_t flagged = 0;
};

// Candidates are matched to test items by item_id; missing ones count as empty and flagged.
EvalReport score_method(std::string method_name, std::span<const TestItem> items,
                        std::span<const Candidate> candidates);

// Item-count weighted average of per-persona reports of one method.
Aggregates weighted_average(std::span<const EvalReport> reports);

json to_json(const EvalReport& report);
std::string items_to_jsonl(const EvalReport& report);
// Plain-text table with columns BL-2, BL-4, RG-2, RG-L, LM.
std::string render_table(std::span<const EvalReport> reports);

struct JudgeEntry {
    std::string model_name;
    int rank = 1;
    std::string reason;
};

// Parses a bracketed list of {'model': ..., 'reason': ..., 'rank': ...}
// records. Single or double quotes, any key order, text around the list is
// ignored. Throws UnparseableVerdict.
std::vector<JudgeEntry> parse_verdict(std::string_view completion);

struct JudgeVerdict {
    std::string item_id;
    std::string question;
    std::string reference;
    std::vector<JudgeEntry> entries;  // rank = 1 + number of models that beat it in both orders
    std::vector<std::string> presentation_order;
    std::vector<std::vector<JudgeEntry>> runs;  // raw rankings, forward then reversed order
    // Consensus per unordered pair (first < second by name): -1 first better,
    // +1 second better, 0 tie (including disagreement between the two orders).
    std::map<std::pair<std::string, std::string>, int> pair_outcomes;

    const JudgeEntry* find(std::string_view model) const;
};

// Judges the responses twice, in the given order and reversed. Re-prompts once on a bad completion.
JudgeVerdict judge_rank(const std::string& question, const std::string& reference,
                        const std::vector<std::pair<std::string, std::string>>& responses,
                        providers::ChatProvider& judge, const templates::TemplateSet& templates,
                        const std::string& agent_name);

// (wins + 0.5 * ties) / N * 100, where a win means method outranks anchor.
double win_rate(std::span<const JudgeVerdict> verdicts, std::string_view method, std::string_view anchor);

json to_json(const JudgeVerdict& verdict);
JudgeVerdict verdict_from_json(const json& row);

}  // namespace personakit::evaluation
