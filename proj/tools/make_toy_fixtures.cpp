// Regenerates the mock-provider fixtures under data/toy/fixtures by running a
// synthetic chat model through the same requests the CLI issues and recording
// every (request_hash, response) pair.
//
//   make_toy_fixtures data/toy/pipeline.json

#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>

#include <fmt/format.h>

#include "personakit/annotation.hpp"
#include "personakit/arena.hpp"
#include "personakit/cli.hpp"
#include "personakit/corpus.hpp"
#include "personakit/error.hpp"
#include "personakit/evaluation.hpp"
#include "personakit/providers.hpp"
#include "personakit/templates.hpp"
#include "personakit/text.hpp"

namespace fs = std::filesystem;
using namespace personakit;
using providers::ChatRequest;
using providers::Role;

namespace {

class Recorder final : public providers::ChatProvider {
public:
    Recorder(std::string id, std::function<std::string(const ChatRequest&)> fn) : id_(std::move(id)), fn_(std::move(fn)) {}

    std::string complete(const ChatRequest& req) override {
        auto reply = fn_(req);
        std::lock_guard lock(mutex_);
        table_[providers::request_hash(req)] = reply;
        return reply;
    }
    std::string id() const override { return id_; }

    void merge_into(std::map<std::string, std::string>& out) const {
        std::lock_guard lock(mutex_);
        out.insert(table_.begin(), table_.end());
    }

private:
    std::string id_;
    std::function<std::string(const ChatRequest&)> fn_;
    mutable std::mutex mutex_;
    std::map<std::string, std::string> table_;
};

void write_fixture(const fs::path& path, const std::map<std::string, std::string>& table) {
    std::string out;
    for (const auto& [hash, response] : table) out += json{{"request_hash", hash}, {"response", response}}.dump() + "\n";
    write_atomic(path, out);
    std::cout << fmt::format("{}: {} responses\n", path.string(), table.size());
}

std::uint64_t hash_of(const ChatRequest& req) { return fnv1a64(providers::request_hash(req)); }

bool has_cjk(std::string_view s) {
    for (auto cp : text::decode_utf8(s)) {
        if (text::is_cjk(cp)) return true;
    }
    return false;
}

std::string between(const std::string& s, const std::string& open, const std::string& close) {
    const auto a = s.find(open);
    if (a == std::string::npos) return {};
    const auto start = a + open.size();
    const auto b = close.empty() ? std::string::npos : s.find(close, start);
    return s.substr(start, b == std::string::npos ? std::string::npos : b - start);
}

// Sentences without speaker prefixes or final punctuation.
std::vector<std::string> sentences(const std::string& passage) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        auto t = std::string(text::trim(cur));
        if (const auto colon = t.find(": "); colon != std::string::npos && colon < 20) t = t.substr(colon + 2);
        if (const auto wide = t.find("\xEF\xBC\x9A"); wide != std::string::npos && wide < 20) t = t.substr(wide + 3);
        if (text::count_words(t) >= 2) out.push_back(t);
        cur.clear();
    };
    const auto cps = text::decode_utf8(passage);
    for (auto cp : cps) {
        if (cp == '.' || cp == '!' || cp == '?' || cp == '\n' || cp == 0x3002 || cp == 0xFF01 || cp == 0xFF1F) {
            flush();
        } else {
            text::append_utf8(cur, cp);
        }
    }
    flush();
    if (out.empty()) out.push_back(std::string(text::trim(passage)));
    return out;
}

std::string longest_word(const std::string& s) {
    std::string best;
    for (const auto& w : text::word_spans(s)) {
        auto word = s.substr(w.begin, w.end - w.begin);
        if (word.size() > best.size()) best = word;
    }
    return best;
}

std::string cjk_head(const std::string& s, std::size_t n) {
    std::string out;
    std::size_t k = 0;
    for (auto cp : text::decode_utf8(s)) {
        if (k++ == n) break;
        text::append_utf8(out, cp);
    }
    return out;
}

std::string generate_input(const ChatRequest& req) {
    const auto& system = *req.system;
    const auto& user = req.messages.front().content;
    const auto passage = user.substr(user.find('\n') + 1);
    const auto sents = sentences(passage);
    const auto h = hash_of(req);
    const auto& s = sents[h % sents.size()];
    const bool cjk = has_cjk(passage);
    if (system.find("raise an error question") != std::string::npos) {
        if (cjk) return fmt::format("听说“{}”这件事根本没有发生过，你为什么要编造呢？", s);
        return fmt::format("I read that this never happened: \"{}\". Why would you make that up?", s);
    }
    if (system.find("generate a paragraph") != std::string::npos) {
        if (cjk) return fmt::format("我觉得“{}”一点也不重要，现在的人早就不在乎这些了。", cjk_head(s, 6));
        return fmt::format("Honestly, all this talk about {} is overrated. Nobody today should waste an afternoon on it.",
                           longest_word(s));
    }
    if (cjk) {
        const char* forms[] = {"你曾经说过“{}”，能详细讲讲吗？", "关于“{}”，你当时是怎么想的？", "为什么“{}”对你这么重要？"};
        return fmt::format(fmt::runtime(forms[h / 7 % 3]), s);
    }
    const char* forms[] = {"You once said: \"{}\". What did you mean by that?",
                           "Tell me more about this: {}.", "How do you look back on this now: {}?",
                           "Why does this stay with you: {}?"};
    return fmt::format(fmt::runtime(forms[h / 7 % 4]), s);
}

std::string annotate(const ChatRequest& req) {
    const auto& system = *req.system;
    const auto name = between(system, "You are ", ". Reply");
    const auto golden = between(system, "Source passage:\n", "\n\nBackground:");
    const auto& input = req.messages.front().content;
    const auto sents = sentences(golden);
    const auto h = hash_of(req);
    const auto& s1 = sents[h % sents.size()];
    const auto& s2 = sents[(h / 3 + 1) % sents.size()];
    const bool cjk = has_cjk(golden);
    std::string analysis;
    std::string response;
    const bool induced = input.find("make that up") != std::string::npos || input.find("编造") != std::string::npos;
    const bool opinion = input.rfind("Honestly", 0) == 0 || input.find("不重要") != std::string::npos;
    if (cjk) {
        analysis = induced   ? fmt::format("用户说的与事实不符，{}应当指出错误。", name)
                   : opinion ? fmt::format("用户提出了一个{}未必认同的观点。", name)
                             : fmt::format("用户在询问{}的亲身经历，应当用回忆的口吻回答。", name);
        response = induced ? fmt::format("不对，{}。", s1) : opinion ? fmt::format("我不这么看。{}。", s1)
                                                                  : fmt::format("{}。{}。", s1, s2);
    } else {
        analysis = induced   ? fmt::format("The user asserts something false, so {} should correct it.", name)
                   : opinion ? fmt::format("The user offers an opinion {} may not share.", name)
                             : fmt::format("The user asks about something {} lived through; answer from memory.", name);
        response = induced ? fmt::format("That is not right. {}.", s1)
                   : opinion ? fmt::format("I see it differently. {}.", s1)
                             : (s1 == s2 ? fmt::format("{}.", s1) : fmt::format("{}. {}.", s1, s2));
    }
    // Every so often answer without the markers to exercise the format re-prompt.
    if (req.messages.size() == 1 && h % 23 == 0) return response;
    return annotation::serialize_cot(analysis, response);
}

std::string drop_every(const std::string& s, std::size_t k) {
    std::string out;
    const auto spans = text::word_spans(s);
    std::size_t prev = 0;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        if (i % k == k - 1) {
            out += s.substr(prev, spans[i].begin - prev);
            prev = spans[i].end;
        }
    }
    out += s.substr(prev);
    return std::string(text::trim(out));
}

std::string judge(const ChatRequest& req) {
    const auto& user = req.messages.front().content;
    const auto reference = between(user, "The reference answer to this question is: ",
                                   " The respective answers from the models to this question are: ");
    const auto listing = between(user, " The respective answers from the models to this question are: ", "\nNow, based on");
    std::vector<std::pair<std::string, double>> scored;
    std::size_t pos = 0;
    while ((pos = listing.find("\n[", pos)) != std::string::npos) {
        const auto close = listing.find("]: ", pos);
        const auto next = listing.find("\n[", close);
        const auto name = listing.substr(pos + 2, close - pos - 2);
        const auto body = listing.substr(close + 3, next == std::string::npos ? std::string::npos : next - close - 3);
        scored.emplace_back(name, evaluation::rouge_l(evaluation::tokenize(body), evaluation::tokenize(reference)));
        pos = close;
    }
    std::vector<double> distinct;
    for (const auto& [n, v] : scored) distinct.push_back(v);
    std::sort(distinct.begin(), distinct.end(), std::greater<>());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::string out = "[";
    for (std::size_t i = 0; i < scored.size(); ++i) {
        const auto rank = std::find(distinct.begin(), distinct.end(), scored[i].second) - distinct.begin() + 1;
        out += fmt::format("{}{{'model': '{}', 'reason': 'overlap with the reference is {:.2f}', 'rank': {}}}",
                           i ? ", " : "", scored[i].first, scored[i].second, rank);
    }
    out += "]";
    if (req.messages.size() == 1 && hash_of(req) % 19 == 0) return "Both answers are fine, the first one is a bit better.";
    return out;
}

std::string arena_turn(const ChatRequest& req) {
    const bool architect = req.system->find("architect") != std::string::npos;
    const auto k = static_cast<std::size_t>(std::count_if(req.messages.begin(), req.messages.end(),
                                                          [](const auto& m) { return m.role == Role::assistant; }));
    static const char* ilse[] = {
        "A footbridge is a beam that has to carry people over water. The span and the foundation decide the form, and the facade follows.",
        "I will grant you that proportion matters, but a truss sized by the golden ratio can still fail if the load path is wrong.",
        "Perhaps the geometry can guide the arch once the span is fixed. Show me the proportion you would use for the rise.",
    };
    static const char* dov[] = {
        "Every good structure hides a theorem. The golden ratio is not decoration; it is a proportion that appears in growth and symmetry.",
        "Then let the load fix the span, and let the ratio fix the rise of the arch. The equation has room for both.",
        "With the span fixed, a rise near one over the golden ratio squared gives a pleasing arch, and the proof of its stability is your truss.",
    };
    const auto i = std::min<std::size_t>(k, 2);
    return architect ? ilse[i] : dov[i];
}

}  // namespace

int main(int argc, char** argv) {
    try {
        const fs::path config_path = argc > 1 ? argv[1] : "data/toy/pipeline.json";
        const auto config = cli::load_pipeline_config(config_path);
        const auto fixtures = config.base_dir / "fixtures";
        const auto scratch = fs::temp_directory_path() / "personakit-fixtures";
        fs::remove_all(scratch);

        // annotation: generation + CoT responses
        std::vector<corpus::PersonaConfig> personas;
        std::vector<corpus::CorpusSegment> segments;
        for (const auto& p : config.persona_paths) {
            personas.push_back(corpus::load_persona_config(p));
            auto r = corpus::ingest_corpus(personas.back(), config.thresholds.max_turns);
            segments.insert(segments.end(), r.segments.begin(), r.segments.end());
        }
        Recorder annotator("synthetic", [](const ChatRequest& req) {
            return req.system && req.system->rfind("You are asked", 0) == 0 ? generate_input(req) : annotate(req);
        });
        auto embedder = providers::make_embedder(config.embedding_provider);
        annotation::RunOptions options;
        options.budgets = {config.thresholds.background_budget, config.thresholds.style_budget};
        options.annotate.extra_instructions = config.extra_instructions;
        const auto templates = templates::TemplateSet::builtin();
        annotation::annotate_corpus(personas, segments, annotator, *embedder, templates, options);
        std::map<std::string, std::string> chat;
        annotator.merge_into(chat);
        write_fixture(fixtures / "mock_chat.jsonl", chat);

        const auto cfg = config_path.string();
        if (cli::run_command({"pipeline", "--config", cfg, "--out", scratch.string(), "--log-level", "warn"}) != 0)
            return 1;

        // evaluation candidates
        const auto items = evaluation::load_test_items(scratch / "test_set.jsonl");
        std::map<std::string, std::string> golden_by_prompt;
        for (const auto& it : items) golden_by_prompt[it.label_token + " " + it.input] = it.golden_response;
        std::map<std::string, std::string> eval;
        for (const auto& m : config.eval.at("methods")) {
            const auto name = m.at("name").get<std::string>();
            const auto preamble = m.value("preamble", std::string{});
            Recorder endpoint(name, [&, name](const ChatRequest& req) {
                const auto& golden = golden_by_prompt.at(req.messages.back().content);
                if (!req.system) return drop_every(golden, 6);
                const auto agent = between(*req.system, "You are ", ".");
                if (has_cjk(golden)) return fmt::format("作为{}，我觉得这个问题很有意思。{}", agent, cjk_head(golden, 8));
                const auto words = text::word_spans(golden);
                const auto cut = words.size() > 6 ? words[5].end : golden.size();
                return fmt::format("As {}, I find that an interesting question. {}...", agent, golden.substr(0, cut));
            });
            std::map<std::string, std::vector<evaluation::TestItem>> by_persona;
            for (const auto& it : items) by_persona[it.persona_id].push_back(it);
            for (const auto& [persona_id, subset] : by_persona) {
                std::optional<std::string> system;
                if (!preamble.empty()) {
                    const auto& p = annotation::find_persona(personas, persona_id);
                    system = templates::render(preamble, {{"agent_name", p.display_name}, {"profile", p.profile}});
                }
                evaluation::generate_candidates(subset, endpoint, system);
            }
            endpoint.merge_into(eval);
        }
        write_fixture(fixtures / "mock_eval.jsonl", eval);
        if (cli::run_command({"eval-gen", "--config", cfg, "--out", scratch.string(), "--log-level", "warn"}) != 0)
            return 1;

        // judge
        Recorder judge_model("synthetic-judge", judge);
        std::vector<std::string> methods;
        for (const auto& m : config.eval.at("methods")) methods.push_back(m.at("name").get<std::string>());
        std::map<std::string, std::map<std::string, std::string>> texts;
        for (const auto& name : methods) {
            for (const auto& c : evaluation::load_candidates(scratch / "eval" / "candidates" / (name + ".jsonl")))
                texts[c.item_id][name] = c.text.empty() ? "(no response)" : c.text;
        }
        for (const auto& it : items) {
            std::vector<std::pair<std::string, std::string>> responses;
            for (const auto& name : methods) responses.emplace_back(name, texts[it.item_id][name]);
            evaluation::judge_rank(it.input, it.golden_response, responses, judge_model, templates,
                                   annotation::find_persona(personas, it.persona_id).display_name);
        }
        std::map<std::string, std::string> judged;
        judge_model.merge_into(judged);
        write_fixture(fixtures / "mock_judge.jsonl", judged);

        // arena
        std::map<std::string, std::string> arena_table;
        for (const auto& s : config.arena.at("scenarios")) {
            const auto scenario = arena::load_scenario(config.base_dir / s.get<std::string>());
            Recorder a(scenario.agent_a.name, arena_turn);
            Recorder b(scenario.agent_b.name, arena_turn);
            arena::run_dialogue(scenario, a, b);
            a.merge_into(arena_table);
            b.merge_into(arena_table);
        }
        write_fixture(fixtures / "mock_arena.jsonl", arena_table);
        fs::remove_all(scratch);
    } catch (const std::exception& e) {
        std::cerr << "make_toy_fixtures: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
