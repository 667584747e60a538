#include <gtest/gtest.h>

#include "generators.hpp"
#include "mock_judge.hpp"
#include "personakit/error.hpp"
#include "personakit/evaluation.hpp"

using namespace personakit;
using namespace personakit::evaluation;
using personakit::providers::ChatRequest;
using personakit::providers::FunctionChatProvider;

namespace {

const auto kTemplates = templates::TemplateSet::builtin();

JudgeVerdict verdict_with(int outcome) {
    JudgeVerdict v;
    v.entries = {{"m", 1, ""}, {"a", 1, ""}};
    v.pair_outcomes[{"a", "m"}] = -outcome;  // outcome: -1 means m better
    return v;
}

}  // namespace

TEST(Verdict, ParsesSingleQuotedList) {
    const auto e = parse_verdict(
        "[{'model': 'A', 'reason': 'r', 'rank': 1}, {'model': 'B', 'reason': 'r', 'rank': 2}]");
    ASSERT_EQ(e.size(), 2u);
    EXPECT_EQ(e[0].model_name, "A");
    EXPECT_LT(e[0].rank, e[1].rank);
}

TEST(Verdict, ToleratesSurroundingTextKeyOrderAndDoubleQuotes) {
    const auto e = parse_verdict(
        "Sure! Here it is:\n[{\"rank\": 2, \"model\": \"B\", \"reason\": \"it's weaker\"},"
        " {'reason': 'has \\'quotes\\'', 'rank': '1', 'model': 'A'},]\nThanks.");
    ASSERT_EQ(e.size(), 2u);
    EXPECT_EQ(e[0].reason, "it's weaker");
    EXPECT_EQ(e[1].reason, "has 'quotes'");
    EXPECT_EQ(e[1].rank, 1);
}

TEST(Verdict, Garbage) {
    for (const auto* bad : {"no list", "[", "[{'model': 'A'}]", "[{'model': 'A', 'rank': 0}]",
                            "[{'model': 'A', 'rank': 1}, {'model': 'A', 'rank': 2}]", "[]"}) {
        try {
            parse_verdict(bad);
            FAIL() << bad;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::UnparseableVerdict) << bad;
        }
    }
}

TEST(JudgeRank, ConsistentOrdersRankAboveBelow) {
    auto judge = mockjudge::by_score([](const std::string& t) { return static_cast<double>(t.size()); });
    const auto v = judge_rank("q", "ref", {{"A", "long answer"}, {"B", "short"}}, judge, kTemplates, "Pat");
    EXPECT_EQ(v.find("A")->rank, 1);
    EXPECT_EQ(v.find("B")->rank, 2);
    EXPECT_EQ(v.runs.size(), 2u);
    EXPECT_EQ(v.pair_outcomes.at({"A", "B"}), -1);
}

TEST(JudgeRank, PositionBiasBecomesTie) {
    // Always prefers whatever is shown first.
    FunctionChatProvider biased("biased", [](const ChatRequest& req) {
        const auto shown = mockjudge::listing(req);
        return "[{'model': '" + shown[0].first + "', 'reason': 'r', 'rank': 1}, {'model': '" + shown[1].first +
               "', 'reason': 'r', 'rank': 2}]";
    });
    const auto v = judge_rank("q", "ref", {{"A", "x"}, {"B", "y"}}, biased, kTemplates, "Pat");
    EXPECT_EQ(v.pair_outcomes.at({"A", "B"}), 0);
    EXPECT_EQ(v.find("A")->rank, 1);
    EXPECT_EQ(v.find("B")->rank, 1);
    const std::vector<JudgeVerdict> vs = {v};
    EXPECT_EQ(win_rate(vs, "A", "B"), 50.0);
}

TEST(JudgeRank, MissingModelAfterRepromptFails) {
    FunctionChatProvider lazy("lazy", [](const ChatRequest&) { return "[{'model': 'A', 'reason': 'r', 'rank': 1}]"; });
    try {
        judge_rank("q", "ref", {{"A", "x"}, {"B", "y"}}, lazy, kTemplates, "Pat");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MissingModelEntry);
    }
}

TEST(JudgeRank, RepromptRecoversFromGarbage) {
    int calls = 0;
    FunctionChatProvider flaky("flaky", [&](const ChatRequest& req) -> std::string {
        ++calls;
        if (req.messages.size() == 1) return "I think A is better.";
        return "[{'model': 'A', 'reason': 'r', 'rank': 1}, {'model': 'B', 'reason': 'r', 'rank': 2}]";
    });
    const auto v = judge_rank("q", "ref", {{"A", "x"}, {"B", "y"}}, flaky, kTemplates, "Pat");
    EXPECT_EQ(calls, 4);
    EXPECT_EQ(v.find("A")->rank, 1);
    EXPECT_EQ(v.runs[0].size(), 2u);
}

TEST(JudgeRank, NeedsTwoDistinctResponses) {
    auto judge = mockjudge::by_score([](const std::string&) { return 0.0; });
    EXPECT_THROW(judge_rank("q", "r", {{"A", "x"}}, judge, kTemplates, "Pat"), Error);
    EXPECT_THROW(judge_rank("q", "r", {{"A", "x"}, {"A", "y"}}, judge, kTemplates, "Pat"), Error);
}

TEST(JudgeRank, ThreeModelsUsePairwiseConsensus) {
    auto judge = mockjudge::by_score([](const std::string& t) { return t == "best" ? 2.0 : (t == "mid" ? 1.0 : 0.0); });
    const auto v = judge_rank("q", "r", {{"C", "worst"}, {"A", "best"}, {"B", "mid"}}, judge, kTemplates, "Pat");
    EXPECT_EQ(v.find("A")->rank, 1);
    EXPECT_EQ(v.find("B")->rank, 2);
    EXPECT_EQ(v.find("C")->rank, 3);
    const std::vector<JudgeVerdict> vs = {v};
    EXPECT_EQ(win_rate(vs, "B", "C"), 100.0);
    EXPECT_EQ(win_rate(vs, "B", "A"), 0.0);
}

TEST(WinRate, SelfIsFifty) {
    gen::Gen g(61);
    for (int iter = 0; iter < 20; ++iter) {
        std::vector<JudgeVerdict> vs;
        for (int i = 0; i < g.uniform(1, 30); ++i) vs.push_back(verdict_with(g.uniform(-1, 1)));
        EXPECT_EQ(win_rate(vs, "m", "m"), 50.0);
        EXPECT_EQ(win_rate(vs, "a", "a"), 50.0);
        EXPECT_NEAR(win_rate(vs, "m", "a") + win_rate(vs, "a", "m"), 100.0, 1e-9);
    }
}

TEST(WinRate, Arithmetic) {
    std::vector<JudgeVerdict> all_wins(10, verdict_with(-1));
    EXPECT_EQ(win_rate(all_wins, "m", "a"), 100.0);
    std::vector<JudgeVerdict> mixed;
    for (int i = 0; i < 3; ++i) mixed.push_back(verdict_with(-1));
    mixed.push_back(verdict_with(0));
    for (int i = 0; i < 6; ++i) mixed.push_back(verdict_with(1));
    EXPECT_EQ(win_rate(mixed, "m", "a"), 35.0);
    EXPECT_THROW(win_rate(std::vector<JudgeVerdict>{}, "m", "a"), Error);
    EXPECT_THROW(win_rate(mixed, "m", "zzz"), Error);
}

TEST(WinRate, VerdictJsonRoundTrip) {
    auto judge = mockjudge::by_score([](const std::string& t) { return static_cast<double>(t.size()); });
    auto v = judge_rank("q", "ref", {{"A", "aaa"}, {"B", "b"}}, judge, kTemplates, "Pat");
    v.item_id = "it1";
    const auto back = verdict_from_json(to_json(v));
    EXPECT_EQ(to_json(back), to_json(v));
    const std::vector<JudgeVerdict> vs = {back};
    EXPECT_EQ(win_rate(vs, "A", "B"), 100.0);
}
