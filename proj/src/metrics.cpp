#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <unordered_map>

#include <fmt/format.h>

#include "personakit/error.hpp"
#include "personakit/evaluation.hpp"
#include "personakit/text.hpp"

namespace personakit::evaluation {

namespace {

bool is_letter_or_digit(char32_t cp) {
    if (cp < 0x80) return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || (cp >= '0' && cp <= '9');
    if (cp <= 0xBF || cp == 0xD7 || cp == 0xF7) return false;  // Latin-1 punctuation and symbols
    return !text::is_space(cp) && !text::is_separator_punct(cp) && !text::is_cjk(cp);
}

char32_t fold_case(char32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 32;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
    return cp;
}

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const std::vector<std::string>& tokens, int n) {
    NgramCounts counts;
    const auto len = static_cast<std::size_t>(n);
    if (tokens.size() < len) return counts;
    for (std::size_t i = 0; i + len <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + len))];
    }
    return counts;
}

std::size_t clipped_overlap(const NgramCounts& a, const NgramCounts& b) {
    std::size_t total = 0;
    for (const auto& [gram, count] : a) {
        const auto it = b.find(gram);
        if (it != b.end()) total += std::min(count, it->second);
    }
    return total;
}

}  // namespace

TokenSequence tokenize(std::string_view input) {
    TokenSequence seq;
    std::string current;
    bool saw_cjk = false;
    bool saw_other = false;
    auto flush = [&] {
        if (!current.empty()) {
            seq.tokens.push_back(std::move(current));
            current.clear();
            saw_other = true;
        }
    };
    for (const auto cp : text::decode_utf8(input)) {
        if (text::is_cjk(cp)) {
            flush();
            std::string tok;
            text::append_utf8(tok, cp);
            seq.tokens.push_back(std::move(tok));
            saw_cjk = true;
        } else if (is_letter_or_digit(cp)) {
            text::append_utf8(current, fold_case(cp));
        } else {
            flush();
        }
    }
    flush();
    seq.script_profile = saw_cjk ? (saw_other ? ScriptProfile::mixed : ScriptProfile::cjk) : ScriptProfile::latin;
    return seq;
}

double bleu_corpus(std::span<const TokenSequence> candidates, std::span<const TokenSequence> references, int max_n) {
    if (candidates.size() != references.size())
        throw Error(ErrorCode::LengthMismatch,
                    fmt::format("{} candidates vs {} references", candidates.size(), references.size()));
    if (candidates.empty()) throw Error(ErrorCode::EmptyInput, "BLEU needs at least one pair");
    if (max_n < 1) throw Error(ErrorCode::ConfigError, "max_n must be >= 1");

    std::size_t cand_len = 0;
    std::size_t ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        cand_len += candidates[i].tokens.size();
        ref_len += references[i].tokens.size();
    }
    if (cand_len == 0) return 0.0;

    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        std::size_t matched = 0;
        std::size_t total = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const auto cand = ngrams(candidates[i].tokens, n);
            matched += clipped_overlap(cand, ngrams(references[i].tokens, n));
            for (const auto& [gram, count] : cand) total += count;
        }
        const double p = total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
        log_sum += std::log(std::max(p, kPrecisionFloor)) / max_n;
    }
    const double bp =
        cand_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len)) : 1.0;
    return bp * std::exp(log_sum) * 100.0;
}

double rouge_n(const TokenSequence& candidate, const TokenSequence& reference, int n) {
    if (n < 1) throw Error(ErrorCode::ConfigError, "ROUGE-N needs n >= 1");
    if (reference.tokens.size() < static_cast<std::size_t>(n)) return 0.0;
    const auto ref = ngrams(reference.tokens, n);
    const auto total = reference.tokens.size() - static_cast<std::size_t>(n) + 1;
    return static_cast<double>(clipped_overlap(ref, ngrams(candidate.tokens, n))) / static_cast<double>(total);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(const TokenSequence& candidate, const TokenSequence& reference) {
    if (reference.tokens.empty()) return 0.0;
    return static_cast<double>(lcs_length(candidate.tokens, reference.tokens)) /
           static_cast<double>(reference.tokens.size());
}

TestItem test_item_from_json(const json& row) {
    try {
        TestItem t;
        t.item_id = row.at("item_id").get<std::string>();
        t.persona_id = row.value("persona_id", std::string{});
        t.stage_id = row.value("stage_id", std::string{});
        t.label_token = row.value("label_token", std::string{});
        t.input = row.at("input").get<std::string>();
        t.user_text = row.value("user_text", t.label_token.empty() ? t.input : t.label_token + " " + t.input);
        t.golden_response = row.at("golden_response").get<std::string>();
        return t;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, fmt::format("test item: {}", e.what()));
    }
}

std::vector<TestItem> load_test_items(const std::filesystem::path& path) {
    std::vector<TestItem> out;
    for (const auto& row : read_jsonl(path)) out.push_back(test_item_from_json(row));
    return out;
}

json to_json(const Candidate& c) {
    json row{{"item_id", c.item_id}, {"candidate", c.text}, {"error", c.error}};
    if (c.error) row["error_message"] = c.error_message;
    return row;
}

Candidate candidate_from_json(const json& row) {
    try {
        return {row.at("item_id").get<std::string>(), row.at("candidate").get<std::string>(),
                row.value("error", false), row.value("error_message", std::string{})};
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, fmt::format("candidate: {}", e.what()));
    }
}

std::vector<Candidate> load_candidates(const std::filesystem::path& path) {
    std::vector<Candidate> out;
    for (const auto& row : read_jsonl(path)) out.push_back(candidate_from_json(row));
    return out;
}

std::vector<Candidate> generate_candidates(std::span<const TestItem> items, providers::ChatProvider& endpoint,
                                           const std::optional<std::string>& preamble, std::size_t jobs,
                                           int max_output_tokens) {
    std::vector<Candidate> out(items.size());
    parallel_for(items.size(), jobs, [&](std::size_t i) {
        const auto& item = items[i];
        if (item.label_token.empty())
            throw Error(ErrorCode::MissingStageToken, fmt::format("test item {} has no stage token", item.item_id));
        providers::ChatRequest req;
        req.system = preamble;
        req.messages = {{providers::Role::user, item.label_token + " " + item.input}};
        req.max_output_tokens = max_output_tokens;
        out[i].item_id = item.item_id;
        try {
            out[i].text = endpoint.complete(req);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::SchemaError) throw;
            out[i].error = true;
            out[i].error_message = e.what();
        }
    });
    if (!items.empty() && std::all_of(out.begin(), out.end(), [](const Candidate& c) { return c.error; }))
        throw Error(ErrorCode::ProviderUnavailable, fmt::format("all {} candidate calls failed", items.size()));
    return out;
}

EvalReport score_method(std::string method_name, std::span<const TestItem> items,
                        std::span<const Candidate> candidates) {
    if (items.empty()) throw Error(ErrorCode::EmptyInput, "no test items to score");
    std::unordered_map<std::string, const Candidate*> by_id;
    for (const auto& c : candidates) by_id[c.item_id] = &c;

    EvalReport report;
    report.method_name = std::move(method_name);
    std::vector<TokenSequence> cands;
    std::vector<TokenSequence> refs;
    double r2_sum = 0.0;
    double rl_sum = 0.0;
    for (const auto& item : items) {
        const auto it = by_id.find(item.item_id);
        const bool flagged = it == by_id.end() || it->second->error;
        auto cand = tokenize(flagged ? std::string_view{} : std::string_view(it->second->text));
        auto ref = tokenize(item.golden_response);
        ItemScore s{item.item_id, item.persona_id, rouge_n(cand, ref, 2), rouge_l(cand, ref), flagged};
        r2_sum += s.rouge2;
        rl_sum += s.rougeL;
        report.flagged += flagged ? 1 : 0;
        report.items.push_back(std::move(s));
        cands.push_back(std::move(cand));
        refs.push_back(std::move(ref));
    }
    const auto n = static_cast<double>(items.size());
    report.aggregates.bleu2 = bleu_corpus(cands, refs, 2);
    report.aggregates.bleu4 = bleu_corpus(cands, refs, 4);
    report.aggregates.rouge2 = r2_sum / n * 100.0;
    report.aggregates.rougeL = rl_sum / n * 100.0;
    return report;
}

Aggregates weighted_average(std::span<const EvalReport> reports) {
    Aggregates out;
    double total = 0.0;
    double win_total = 0.0;
    double win_sum = 0.0;
    for (const auto& r : reports) {
        const auto w = static_cast<double>(r.items.size());
        total += w;
        out.bleu2 += w * r.aggregates.bleu2;
        out.bleu4 += w * r.aggregates.bleu4;
        out.rouge2 += w * r.aggregates.rouge2;
        out.rougeL += w * r.aggregates.rougeL;
        if (r.aggregates.win_rate) {
            win_total += w;
            win_sum += w * *r.aggregates.win_rate;
        }
    }
    if (total == 0.0) throw Error(ErrorCode::EmptyInput, "no items to average");
    out.bleu2 /= total;
    out.bleu4 /= total;
    out.rouge2 /= total;
    out.rougeL /= total;
    if (win_total > 0.0) out.win_rate = win_sum / win_total;
    return out;
}

json to_json(const EvalReport& r) {
    json agg{{"BLEU-2", r.aggregates.bleu2},
             {"BLEU-4", r.aggregates.bleu4},
             {"ROUGE-2", r.aggregates.rouge2},
             {"ROUGE-L", r.aggregates.rougeL},
             {"win_rate", r.aggregates.win_rate ? json(*r.aggregates.win_rate) : json(nullptr)}};
    return {{"method", r.method_name}, {"n_items", r.items.size()}, {"flagged", r.flagged}, {"aggregates", agg}};
}

std::string items_to_jsonl(const EvalReport& r) {
    std::vector<json> rows;
    for (const auto& s : r.items) {
        rows.push_back({{"method", r.method_name},
                        {"item_id", s.item_id},
                        {"persona_id", s.persona_id},
                        {"rouge2", s.rouge2},
                        {"rougeL", s.rougeL},
                        {"flagged", s.flagged}});
    }
    return to_jsonl(rows);
}

std::string render_table(std::span<const EvalReport> reports) {
    std::size_t width = 7;
    for (const auto& r : reports) width = std::max(width, r.method_name.size());
    std::string out = fmt::format("{:<{}} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6}\n", "Methods", width, "BL-2", "BL-4",
                                  "RG-2", "RG-L", "LM");
    out += std::string(width, '-') + "-+--------+--------+--------+--------+-------\n";
    for (const auto& r : reports) {
        const auto& a = r.aggregates;
        out += fmt::format("{:<{}} | {:>6.2f} | {:>6.2f} | {:>6.2f} | {:>6.1f} | {:>6}\n", r.method_name, width,
                           a.bleu2, a.bleu4, a.rouge2, a.rougeL,
                           a.win_rate ? fmt::format("{:.1f}", *a.win_rate) : std::string("-"));
    }
    return out;
}

}  // namespace personakit::evaluation
