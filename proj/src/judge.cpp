#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "personakit/error.hpp"
#include "personakit/evaluation.hpp"
#include "personakit/text.hpp"

namespace personakit::evaluation {

namespace {

[[noreturn]] void unparseable(const std::string& why) { throw Error(ErrorCode::UnparseableVerdict, why); }

struct Scalar {
    std::string text;
    bool quoted = false;
};

// Recursive-descent reader for a list of flat dictionaries in Python or JSON spelling.
class VerdictReader {
public:
    explicit VerdictReader(std::string_view s) : s_(s) {}

    std::vector<std::map<std::string, Scalar>> read_list() {
        const auto open = s_.find('[');
        if (open == std::string_view::npos) unparseable("no '[' in judge output");
        pos_ = open + 1;
        std::vector<std::map<std::string, Scalar>> out;
        skip_ws();
        if (peek() == ']') return out;
        for (;;) {
            skip_ws();
            if (peek() == ']') break;  // trailing comma
            out.push_back(read_dict());
            skip_ws();
            const char c = get();
            if (c == ']') break;
            if (c != ',') unparseable(fmt::format("expected ',' or ']' at offset {}", pos_ - 1));
        }
        return out;
    }

private:
    std::map<std::string, Scalar> read_dict() {
        if (get() != '{') unparseable(fmt::format("expected '{{' at offset {}", pos_ - 1));
        std::map<std::string, Scalar> out;
        for (;;) {
            skip_ws();
            if (peek() == '}') {
                ++pos_;
                break;
            }
            const auto key = read_scalar();
            skip_ws();
            if (get() != ':') unparseable(fmt::format("expected ':' at offset {}", pos_ - 1));
            skip_ws();
            out[text::to_lower_ascii(key.text)] = read_scalar();
            skip_ws();
            const char c = get();
            if (c == '}') break;
            if (c != ',') unparseable(fmt::format("expected ',' or '}}' at offset {}", pos_ - 1));
        }
        return out;
    }

    Scalar read_scalar() {
        const char c = peek();
        if (c == '\'' || c == '"') return {read_quoted(c), true};
        const auto begin = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) ||
                                    s_[pos_] == '.' || s_[pos_] == '-' || s_[pos_] == '_' || s_[pos_] == '+')) {
            ++pos_;
        }
        if (pos_ == begin) unparseable(fmt::format("unexpected character at offset {}", pos_));
        return {std::string(s_.substr(begin, pos_ - begin)), false};
    }

    std::string read_quoted(char quote) {
        ++pos_;
        std::string out;
        while (pos_ < s_.size()) {
            const char c = s_[pos_++];
            if (c == quote) return out;
            if (c == '\\' && pos_ < s_.size()) {
                const char e = s_[pos_++];
                switch (e) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case 'r': out += '\r'; break;
                    default: out += e; break;
                }
                continue;
            }
            out += c;
        }
        unparseable("unterminated string");
    }

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
    char get() { return pos_ < s_.size() ? s_[pos_++] : '\0'; }

    std::string_view s_;
    std::size_t pos_ = 0;
};

int parse_rank(const Scalar& value) {
    try {
        std::size_t used = 0;
        const double r = std::stod(value.text, &used);
        if (used != value.text.size() || r != std::floor(r) || r < 1.0 || r > 1e6) throw std::invalid_argument("rank");
        return static_cast<int>(r);
    } catch (const std::exception&) {
        unparseable(fmt::format("rank '{}' is not a positive integer", value.text));
    }
}

// Checks every expected model is ranked once and renumbers ranks densely from 1.
std::vector<JudgeEntry> normalize(std::vector<JudgeEntry> entries, const std::vector<std::string>& expected) {
    std::vector<JudgeEntry> out;
    for (const auto& name : expected) {
        const auto it = std::find_if(entries.begin(), entries.end(),
                                     [&](const JudgeEntry& e) { return e.model_name == name; });
        if (it == entries.end()) throw Error(ErrorCode::MissingModelEntry, fmt::format("no rank for '{}'", name));
        out.push_back(*it);
    }
    std::set<int> distinct;
    for (const auto& e : out) distinct.insert(e.rank);
    for (auto& e : out) e.rank = static_cast<int>(std::distance(distinct.begin(), distinct.find(e.rank))) + 1;
    return out;
}

std::vector<JudgeEntry> run_judge(const std::string& question, const std::string& reference,
                                  const std::vector<std::pair<std::string, std::string>>& order,
                                  providers::ChatProvider& judge, const templates::TemplateSet& templates,
                                  const std::string& agent_name) {
    std::string listing;
    std::vector<std::string> names;
    for (const auto& [name, response] : order) {
        listing += fmt::format("\n[{}]: {}", name, response);
        names.push_back(name);
    }
    providers::ChatRequest req;
    req.messages = {{providers::Role::user,
                     std::string(text::trim(templates.render(templates::kJudge, {{"agent_name", agent_name},
                                                                                 {"question", question},
                                                                                 {"reference", reference},
                                                                                 {"responses", listing}})))}};
    req.temperature = providers::kJudgeTemperature;

    auto attempt = [&] { return normalize(parse_verdict(judge.complete(req)), names); };
    const auto first = judge.complete(req);
    try {
        return normalize(parse_verdict(first), names);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::UnparseableVerdict && e.code() != ErrorCode::MissingModelEntry) throw;
        const auto trimmed = std::string(text::trim(first));
        req.messages.push_back({providers::Role::assistant, trimmed.empty() ? std::string("(empty)") : trimmed});
        req.messages.push_back(
            {providers::Role::user, std::string(text::trim(templates.get(templates::kJudgeReminder)))});
    }
    return attempt();
}

int relation(const std::vector<JudgeEntry>& run, const std::string& a, const std::string& b) {
    int ra = 0;
    int rb = 0;
    for (const auto& e : run) {
        if (e.model_name == a) ra = e.rank;
        if (e.model_name == b) rb = e.rank;
    }
    return ra < rb ? -1 : (ra > rb ? 1 : 0);
}

json entries_to_json(const std::vector<JudgeEntry>& entries) {
    json out = json::array();
    for (const auto& e : entries) out.push_back({{"model", e.model_name}, {"rank", e.rank}, {"reason", e.reason}});
    return out;
}

std::vector<JudgeEntry> entries_from_json(const json& arr) {
    std::vector<JudgeEntry> out;
    for (const auto& e : arr) {
        out.push_back({e.at("model").get<std::string>(), e.at("rank").get<int>(), e.value("reason", std::string{})});
    }
    return out;
}

}  // namespace

std::vector<JudgeEntry> parse_verdict(std::string_view completion) {
    VerdictReader reader(completion);
    std::vector<JudgeEntry> entries;
    std::set<std::string> seen;
    for (const auto& record : reader.read_list()) {
        const auto model = record.find("model");
        const auto rank = record.find("rank");
        if (model == record.end() || rank == record.end()) unparseable("record without 'model' or 'rank'");
        if (!seen.insert(model->second.text).second)
            unparseable(fmt::format("model '{}' ranked twice", model->second.text));
        const auto reason = record.find("reason");
        entries.push_back({model->second.text, parse_rank(rank->second),
                           reason == record.end() ? std::string{} : reason->second.text});
    }
    if (entries.empty()) unparseable("empty ranking list");
    return entries;
}

const JudgeEntry* JudgeVerdict::find(std::string_view model) const {
    for (const auto& e : entries) {
        if (e.model_name == model) return &e;
    }
    return nullptr;
}

JudgeVerdict judge_rank(const std::string& question, const std::string& reference,
                        const std::vector<std::pair<std::string, std::string>>& responses,
                        providers::ChatProvider& judge, const templates::TemplateSet& templates,
                        const std::string& agent_name) {
    if (responses.size() < 2) throw Error(ErrorCode::EmptyInput, "judging needs at least two responses");
    std::set<std::string> names;
    for (const auto& r : responses) {
        if (!names.insert(r.first).second) throw Error(ErrorCode::SchemaError, "duplicate model name " + r.first);
    }

    JudgeVerdict v;
    v.question = question;
    v.reference = reference;
    for (const auto& r : responses) v.presentation_order.push_back(r.first);
    auto reversed = responses;
    std::reverse(reversed.begin(), reversed.end());
    v.runs.push_back(run_judge(question, reference, responses, judge, templates, agent_name));
    v.runs.push_back(run_judge(question, reference, reversed, judge, templates, agent_name));

    const std::vector<std::string> sorted(names.begin(), names.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        for (std::size_t j = i + 1; j < sorted.size(); ++j) {
            const int forward = relation(v.runs[0], sorted[i], sorted[j]);
            const int backward = relation(v.runs[1], sorted[i], sorted[j]);
            v.pair_outcomes[{sorted[i], sorted[j]}] = forward == backward ? forward : 0;
        }
    }
    for (const auto& name : v.presentation_order) {
        int beaten_by = 0;
        for (const auto& [pair, outcome] : v.pair_outcomes) {
            if ((pair.first == name && outcome == 1) || (pair.second == name && outcome == -1)) ++beaten_by;
        }
        const auto& reasons = v.runs[0];
        const auto it = std::find_if(reasons.begin(), reasons.end(),
                                     [&](const JudgeEntry& e) { return e.model_name == name; });
        v.entries.push_back({name, 1 + beaten_by, it->reason});
    }
    return v;
}

double win_rate(std::span<const JudgeVerdict> verdicts, std::string_view method, std::string_view anchor) {
    if (verdicts.empty()) throw Error(ErrorCode::EmptyVerdicts, "no verdicts");
    double score = 0.0;
    for (const auto& v : verdicts) {
        const auto* m = v.find(method);
        const auto* a = v.find(anchor);
        if (m == nullptr || a == nullptr)
            throw Error(ErrorCode::MissingModelEntry,
                        fmt::format("verdict {} lacks '{}' or '{}'", v.item_id, method, anchor));
        if (method == anchor) {
            score += 0.5;
            continue;
        }
        int outcome = 0;  // -1 method better
        const std::string ms(method);
        const std::string as(anchor);
        if (const auto it = v.pair_outcomes.find({std::min(ms, as), std::max(ms, as)}); it != v.pair_outcomes.end()) {
            outcome = ms < as ? it->second : -it->second;
        } else {
            outcome = m->rank < a->rank ? -1 : (m->rank > a->rank ? 1 : 0);
        }
        score += outcome < 0 ? 1.0 : (outcome == 0 ? 0.5 : 0.0);
    }
    return score / static_cast<double>(verdicts.size()) * 100.0;
}

json to_json(const JudgeVerdict& v) {
    json pairs = json::array();
    for (const auto& [pair, outcome] : v.pair_outcomes) {
        pairs.push_back({{"first", pair.first}, {"second", pair.second}, {"outcome", outcome}});
    }
    json runs = json::array();
    for (const auto& r : v.runs) runs.push_back(entries_to_json(r));
    return {{"item_id", v.item_id},       {"question", v.question},
            {"reference", v.reference},   {"entries", entries_to_json(v.entries)},
            {"presentation_order", v.presentation_order},
            {"runs", runs},               {"pair_outcomes", pairs}};
}

JudgeVerdict verdict_from_json(const json& row) {
    try {
        JudgeVerdict v;
        v.item_id = row.value("item_id", std::string{});
        v.question = row.value("question", std::string{});
        v.reference = row.value("reference", std::string{});
        v.entries = entries_from_json(row.at("entries"));
        v.presentation_order = row.value("presentation_order", std::vector<std::string>{});
        for (const auto& r : row.value("runs", json::array())) v.runs.push_back(entries_from_json(r));
        for (const auto& p : row.value("pair_outcomes", json::array())) {
            v.pair_outcomes[{p.at("first").get<std::string>(), p.at("second").get<std::string>()}] =
                p.at("outcome").get<int>();
        }
        return v;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, fmt::format("verdict: {}", e.what()));
    }
}

}  // namespace personakit::evaluation
