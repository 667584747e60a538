#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "generators.hpp"
#include "oracles.hpp"
#include "personakit/annotation.hpp"
#include "personakit/error.hpp"
#include "personakit/text.hpp"

using namespace personakit;
using namespace personakit::annotation;
using personakit::corpus::CorpusSegment;
using personakit::corpus::PersonaConfig;
using personakit::corpus::SegmentKind;
using personakit::providers::ChatRequest;
using personakit::providers::FunctionChatProvider;

namespace {

PersonaConfig persona() {
    PersonaConfig p;
    p.persona_id = "p";
    p.display_name = "Pat";
    p.stages = {{"I", "<TIME-I>", "youth"}, {"II", "<TIME-II>", "old age"}};
    return p;
}

CorpusSegment segment(const std::string& id, SegmentKind kind, const std::string& stage, const std::string& text,
                      const std::string& persona_id = "p") {
    CorpusSegment s;
    s.segment_id = id;
    s.persona_id = persona_id;
    s.kind = kind;
    s.stage_tag = stage;
    s.text = text;
    s.word_count = text::count_words(text);
    return s;
}

std::string words(std::size_t n, const std::string& w = "w") {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) out += (i ? " " : "") + w + std::to_string(i);
    return out;
}

FunctionChatProvider echo_generator() {
    return FunctionChatProvider("gen", [](const ChatRequest& req) {
        return "generated for " + req.system->substr(0, 24) + " " + std::to_string(req.messages.size());
    });
}

}  // namespace

TEST(Generate, OneSegmentGivesThreeTypedInputs) {
    const auto p = persona();
    auto provider = echo_generator();
    const auto r = generate_inputs(segment("s1", SegmentKind::experience, "I", "I sailed."), p, provider,
                                   templates::TemplateSet::builtin());
    ASSERT_EQ(r.inputs.size(), 3u);
    std::set<InputType> types;
    for (const auto& in : r.inputs) {
        types.insert(in.input_type);
        EXPECT_EQ(in.stage_id, "I");
        EXPECT_EQ(in.source_segment_id, "s1");
    }
    EXPECT_EQ(types.size(), 3u);
}

TEST(Generate, PublicSegmentExpandsPerStage) {
    const auto p = persona();
    auto provider = echo_generator();
    const auto r = generate_inputs(segment("pub", SegmentKind::knowledge, "public", "Fact."), p, provider,
                                   templates::TemplateSet::builtin());
    ASSERT_EQ(r.inputs.size(), 6u);
    std::map<std::string, int> per_stage;
    for (const auto& in : r.inputs) per_stage[in.stage_id]++;
    EXPECT_EQ(per_stage["I"], 3);
    EXPECT_EQ(per_stage["II"], 3);
}

TEST(Generate, TwentySegmentsGiveTwentyPerType) {
    const auto p = persona();
    auto provider = echo_generator();
    std::map<InputType, int> per_type;
    for (int i = 0; i < 20; ++i) {
        const auto r = generate_inputs(segment("s" + std::to_string(i), SegmentKind::experience, i % 2 ? "I" : "II",
                                               "Text " + std::to_string(i)),
                                       p, provider, templates::TemplateSet::builtin());
        for (const auto& in : r.inputs) per_type[in.input_type]++;
    }
    for (auto t : kAllInputTypes) EXPECT_EQ(per_type[t], 20);
}

TEST(Generate, BlankGenerationSkipsSegmentWithWarning) {
    const auto p = persona();
    FunctionChatProvider blank("blank", [](const ChatRequest& req) {
        return req.system->find("error") != std::string::npos ? std::string("  ") : std::string("fine");
    });
    const auto r = generate_inputs(segment("s1", SegmentKind::experience, "I", "x"), p, blank,
                                   templates::TemplateSet::builtin());
    EXPECT_TRUE(r.inputs.empty());
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_EQ(r.warnings[0].code, ErrorCode::EmptyGeneration);
}

TEST(PackBudget, SkipsWhatWouldOverflow) {
    const std::vector<RankedCandidate> ranked = {{"a", 900}, {"b", 700}, {"c", 400}};
    const auto chosen = pack_budget(ranked, 1500);
    ASSERT_EQ(chosen.size(), 2u);
    EXPECT_EQ(chosen[0].segment_id, "a");
    EXPECT_EQ(chosen[1].segment_id, "c");
}

TEST(PackBudget, OversizedLeaderIsTruncated) {
    const std::vector<RankedCandidate> ranked = {{"a", 2000}, {"b", 10}};
    const auto chosen = pack_budget(ranked, 1500);
    ASSERT_EQ(chosen.size(), 1u);
    EXPECT_TRUE(chosen[0].truncated);
    EXPECT_EQ(chosen[0].words, 1500u);
}

TEST(PackBudget, MatchesOracleOnRandomRankings) {
    gen::Gen g(21);
    for (int iter = 0; iter < 500; ++iter) {
        std::vector<RankedCandidate> ranked;
        std::vector<std::pair<std::string, std::size_t>> plain;
        for (int i = 0; i < g.uniform(0, 30); ++i) {
            const auto w = static_cast<std::size_t>(g.uniform(1, 900));
            ranked.push_back({"s" + std::to_string(i), w});
            plain.emplace_back("s" + std::to_string(i), w);
        }
        const auto budget = static_cast<std::size_t>(g.uniform(0, 2000));
        const auto got = pack_budget(ranked, budget);
        const auto want = oracle::pack(plain, budget);
        ASSERT_EQ(got.size(), want.size());
        std::size_t total = 0;
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].segment_id, want[i].id);
            EXPECT_EQ(got[i].words, want[i].words);
            EXPECT_EQ(got[i].truncated, want[i].truncated);
            total += got[i].words;
        }
        EXPECT_LE(total, budget);
    }
}

TEST(Context, FiftySyntheticSegmentsMatchBruteForce) {
    gen::Gen g(22);
    std::vector<CorpusSegment> segs;
    for (int i = 0; i < 50; ++i) {
        const auto kind = g.coin(0.4) ? SegmentKind::conversation : SegmentKind::experience;
        const std::string stage = g.pick(std::vector<std::string>{"I", "II", "public"});
        const std::string persona_id = g.coin(0.8) ? "p" : "q";
        std::string text = g.sentence(5, 30, 0.2);
        const int pad = g.uniform(0, 350);
        for (int k = 0; k < pad; ++k) text += " filler";
        segs.push_back(segment("seg" + std::to_string(100 + i), kind, stage, text, persona_id));
    }
    providers::HashingEmbedder embedder;
    const RetrievalIndex index(segs, embedder);
    for (int iter = 0; iter < 40; ++iter) {
        GeneratedInput in;
        in.input_id = "in" + std::to_string(iter);
        in.persona_id = "p";
        in.stage_id = g.coin() ? "I" : "II";
        in.text = g.sentence(4, 15, 0.2);
        const Budgets budgets{static_cast<std::size_t>(g.uniform(100, 1500)), static_cast<std::size_t>(g.uniform(50, 500))};
        const auto ctx = assemble_context(in, embedder.embed_one(in.text), index, budgets);

        const auto q = oracle::hashing_embed(in.text);
        std::vector<std::pair<double, const CorpusSegment*>> scored;
        for (const auto& s : segs) {
            if (s.persona_id != "p") continue;
            if (s.stage_tag != "public" && s.stage_tag != in.stage_id) continue;
            scored.emplace_back(oracle::cosine(q, oracle::hashing_embed(s.text)), &s);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second->segment_id < b.second->segment_id;
        });
        std::vector<std::pair<std::string, std::size_t>> bg, st;
        for (const auto& [c, s] : scored)
            (s->kind == SegmentKind::conversation ? st : bg).emplace_back(s->segment_id, s->word_count);
        const auto want_bg = oracle::pack(bg, budgets.background);
        const auto want_st = oracle::pack(st, budgets.style);
        ASSERT_EQ(ctx.background.size(), want_bg.size());
        ASSERT_EQ(ctx.style.size(), want_st.size());
        for (std::size_t i = 0; i < want_bg.size(); ++i) EXPECT_EQ(ctx.background[i].segment_id, want_bg[i].id);
        for (std::size_t i = 0; i < want_st.size(); ++i) EXPECT_EQ(ctx.style[i].segment_id, want_st[i].id);
        EXPECT_LE(ctx.background_words(), budgets.background);
        EXPECT_LE(ctx.style_words(), budgets.style);
    }
}

TEST(Context, NoEligibleConversationsGivesEmptyStyle) {
    std::vector<CorpusSegment> segs = {segment("a", SegmentKind::experience, "I", "lamp oil and wicks"),
                                       segment("b", SegmentKind::conversation, "II", "A: hi\nB: hello")};
    providers::HashingEmbedder embedder;
    const RetrievalIndex index(segs, embedder);
    GeneratedInput in;
    in.persona_id = "p";
    in.stage_id = "I";
    in.text = "tell me about lamps";
    const auto ctx = assemble_context(in, embedder.embed_one(in.text), index);
    EXPECT_TRUE(ctx.style.empty());
    ASSERT_EQ(ctx.background.size(), 1u);
    EXPECT_EQ(render_entries(ctx.style, index.segments()), "(none)");
}

TEST(Cot, ParsesMarkers) {
    const auto c = parse_cot("[Analysis] The user asks X. [Response] Blimey, ...");
    ASSERT_TRUE(c);
    EXPECT_EQ(c->analysis, "The user asks X.");
    EXPECT_EQ(c->response, "Blimey, ...");
}

TEST(Cot, RejectsMalformed) {
    EXPECT_FALSE(parse_cot("no markers"));
    EXPECT_FALSE(parse_cot("[Response] b [Analysis] a"));
    EXPECT_FALSE(parse_cot("[Analysis]  [Response] b"));
    EXPECT_FALSE(parse_cot("[Analysis] a [Response] "));
    EXPECT_FALSE(parse_cot("[Analysis] a [Analysis] b [Response] c"));
    EXPECT_FALSE(parse_cot("[Analysis] a [Response] b [Response] c"));
}

TEST(Cot, SerializeParseRoundTrip) {
    gen::Gen g(23);
    for (int i = 0; i < 300; ++i) {
        const auto a = std::string(text::trim(g.sentence(1, 15, 0.3)));
        const auto r = std::string(text::trim(g.sentence(1, 15, 0.3)));
        const auto s = serialize_cot(a, r);
        const auto parsed = parse_cot(s);
        ASSERT_TRUE(parsed) << s;
        EXPECT_EQ(serialize_cot(parsed->analysis, parsed->response), s);
    }
}

class AnnotateTest : public ::testing::Test {
protected:
    PersonaConfig p = persona();
    std::vector<CorpusSegment> segs = {segment("g", SegmentKind::experience, "I", "I lit the lamp each night.")};
    corpus::SegmentIndex index{segs};
    GeneratedInput input = [] {
        GeneratedInput in;
        in.input_id = "g:I:ordinary";
        in.persona_id = "p";
        in.stage_id = "I";
        in.text = "What did you do at night?";
        in.source_segment_id = "g";
        return in;
    }();
};

TEST_F(AnnotateTest, ParsesCompletion) {
    FunctionChatProvider ok("ok", [](const ChatRequest&) { return "[Analysis] The user asks X. [Response] Blimey, ..."; });
    const auto item = annotate_response(input, segs[0], {}, p, index, ok, templates::TemplateSet::builtin());
    EXPECT_EQ(item.analysis, "The user asks X.");
    EXPECT_EQ(item.response, "Blimey, ...");
    EXPECT_EQ(item.golden_segment_id, "g");
    EXPECT_EQ(item.assistant_text(), "[Analysis] The user asks X. [Response] Blimey, ...");
}

TEST_F(AnnotateTest, RepromptsOnceThenSucceeds) {
    int calls = 0;
    FunctionChatProvider flaky("flaky", [&](const ChatRequest& req) {
        ++calls;
        return req.messages.size() == 1 ? std::string("plain text") : std::string("[Analysis] a [Response] b");
    });
    const auto item = annotate_response(input, segs[0], {}, p, index, flaky, templates::TemplateSet::builtin());
    EXPECT_EQ(calls, 2);
    EXPECT_EQ(item.response, "b");
}

TEST_F(AnnotateTest, TwoBadCompletionsAreUnparseable) {
    FunctionChatProvider bad("bad", [](const ChatRequest&) { return "no delimiters here"; });
    try {
        annotate_response(input, segs[0], {}, p, index, bad, templates::TemplateSet::builtin());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnparseableAnnotation);
    }
}

TEST_F(AnnotateTest, ExtraInstructionsReachThePrompt) {
    std::string seen;
    FunctionChatProvider spy("spy", [&](const ChatRequest& req) {
        seen = *req.system;
        return std::string("[Analysis] a [Response] b");
    });
    annotate_response(input, segs[0], {}, p, index, spy, templates::TemplateSet::builtin(), {"Keep it short."});
    EXPECT_NE(seen.find("Keep it short."), std::string::npos);
    EXPECT_NE(seen.find("I lit the lamp each night."), std::string::npos);
}

TEST(AnnotateCorpus, BudgetsAndEligibilityHoldOverToyCorpus) {
    std::vector<PersonaConfig> personas;
    std::vector<CorpusSegment> segs;
    for (const auto* name : {"marisol", "tobias", "shen"}) {
        personas.push_back(corpus::load_persona_config(gen::toy_dir() / "personas" / (std::string(name) + ".json")));
        auto r = corpus::ingest_corpus(personas.back());
        segs.insert(segs.end(), r.segments.begin(), r.segments.end());
    }
    auto mock = providers::MockChatProvider::from_fixture(gen::toy_dir() / "fixtures" / "mock_chat.jsonl");
    providers::HashingEmbedder embedder;
    const auto run = annotate_corpus(personas, segs, *mock, embedder, templates::TemplateSet::builtin(), {});
    const corpus::SegmentIndex index(segs);
    std::map<InputType, int> per_type;
    for (const auto& in : run.inputs) per_type[in.input_type]++;
    EXPECT_EQ(per_type[InputType::ordinary], per_type[InputType::induced]);
    EXPECT_EQ(per_type[InputType::ordinary], per_type[InputType::opinion]);
    ASSERT_FALSE(run.items.empty());
    for (const auto& item : run.items) {
        EXPECT_LE(item.context.background_words(), 1500u);
        EXPECT_LE(item.context.style_words(), 500u);
        for (const auto* list : {&item.context.background, &item.context.style}) {
            for (const auto& e : *list) {
                const auto& s = index.at(e.segment_id);
                EXPECT_TRUE(s.stage_tag == "public" || s.stage_tag == item.input.stage_id);
                EXPECT_EQ(s.persona_id, item.input.persona_id);
            }
        }
        EXPECT_EQ(item_from_json(to_json(item)).item_id, item.item_id);
    }
}
