#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "generators.hpp"
#include "oracles.hpp"
#include "personakit/curation.hpp"
#include "personakit/error.hpp"
#include "personakit/text.hpp"

using namespace personakit;
using namespace personakit::curation;
using personakit::annotation::AnnotatedItem;
using personakit::corpus::CorpusSegment;
using personakit::corpus::PersonaConfig;

namespace {

PersonaConfig persona() {
    PersonaConfig p;
    p.persona_id = "p";
    p.display_name = "Pat";
    p.stages = {{"I", "<TIME-I>", ""}, {"II", "<TIME-II>", ""}};
    return p;
}

AnnotatedItem item(const std::string& id, const std::string& text, const std::string& stage = "I") {
    AnnotatedItem it;
    it.item_id = id;
    it.input.input_id = id;
    it.input.persona_id = "p";
    it.input.stage_id = stage;
    it.input.text = text;
    it.analysis = "thinking about " + id;
    it.response = "answer " + id;
    return it;
}

CorpusSegment seg(const std::string& id, const std::string& text, const std::string& stage = "I") {
    CorpusSegment s;
    s.segment_id = id;
    s.persona_id = "p";
    s.stage_tag = stage;
    s.text = text;
    s.word_count = text::count_words(text);
    return s;
}

SftRecord general(int i) {
    SftRecord r;
    r.record_id = "gen:" + std::to_string(i);
    r.user_text = "q" + std::to_string(i);
    r.assistant_text = "a" + std::to_string(i);
    r.origin = Origin::general;
    return r;
}

}  // namespace

TEST(Dedup, IdenticalInputsDropSecond) {
    providers::HashingEmbedder e;
    const std::vector<AnnotatedItem> items = {item("a", "Where is the lamp?"), item("b", "Where is the lamp?")};
    const auto r = dedup_inputs(items, e);
    ASSERT_EQ(r.kept.size(), 1u);
    EXPECT_EQ(r.kept[0].item_id, "a");
    EXPECT_EQ(r.dropped_ids, std::vector<std::string>{"b"});
}

TEST(Dedup, OrthogonalEmbeddingsAllKept) {
    std::vector<providers::EmbeddingVector> vs;
    for (int i = 0; i < 5; ++i) {
        std::vector<double> v(5, 0.0);
        v[i] = 1.0;
        vs.push_back({v, "t"});
    }
    EXPECT_EQ(greedy_dedup(vs, 0.95).size(), 5u);
}

TEST(Dedup, MatchesQuadraticOracle) {
    gen::Gen g(31);
    std::vector<AnnotatedItem> items;
    std::vector<std::string> bases;
    for (int i = 0; i < 200; ++i) {
        std::string text;
        if (!bases.empty() && g.coin(0.3)) {
            text = g.pick(bases);
            if (g.coin(0.5)) text += " " + g.latin_word();
        } else {
            text = g.sentence(3, 14, 0.2);
            bases.push_back(text);
        }
        items.push_back(item("i" + std::to_string(1000 + i), text));
    }
    providers::HashingEmbedder e;
    const auto r = dedup_inputs(items, e);

    std::vector<std::vector<double>> vecs;
    for (const auto& it : items) vecs.push_back(oracle::hashing_embed(it.input.text));
    std::vector<std::size_t> want;
    for (std::size_t i = 0; i < items.size(); ++i) {
        bool dup = false;
        for (const auto k : want)
            if (oracle::cosine(vecs[i], vecs[k]) >= 0.95) dup = true;
        if (!dup) want.push_back(i);
    }
    ASSERT_EQ(r.kept.size(), want.size());
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_EQ(r.kept[k].item_id, items[want[k]].item_id);
    for (std::size_t a = 0; a < want.size(); ++a)
        for (std::size_t b = a + 1; b < want.size(); ++b) EXPECT_LT(oracle::cosine(vecs[want[a]], vecs[want[b]]), 0.95);
    EXPECT_GT(r.dropped_ids.size(), 0u);
}

TEST(Dedup, ThresholdValidated) {
    EXPECT_THROW(greedy_dedup({}, 0.0), Error);
    EXPECT_THROW(greedy_dedup({}, 1.5), Error);
}

TEST(Split, HundredItemsFourToOne) {
    const auto [train, test] = split_indices(100, {}, 7);
    EXPECT_EQ(train.size(), 80u);
    EXPECT_EQ(test.size(), 20u);
    const auto [t5, s5] = split_indices(5, {}, 7);
    EXPECT_EQ(t5.size(), 4u);
    EXPECT_EQ(s5.size(), 1u);
}

TEST(Split, SameSeedSamePartition) {
    EXPECT_EQ(split_indices(57, {}, 99), split_indices(57, {}, 99));
    EXPECT_NE(split_indices(57, {}, 99), split_indices(57, {}, 100));
}

TEST(Split, PartitionIsDisjointAndComplete) {
    gen::Gen g(32);
    for (int iter = 0; iter < 100; ++iter) {
        const auto n = static_cast<std::size_t>(g.uniform(1, 300));
        std::vector<AnnotatedItem> items;
        for (std::size_t i = 0; i < n; ++i)
            items.push_back(item("x" + std::to_string(i), "t", g.coin() ? "I" : "II"));
        const auto mode = g.coin() ? SplitMode::uniform : SplitMode::stratified;
        const auto s = split_dataset(items, {}, g.bits(), mode);
        std::multiset<std::string> all, got;
        for (const auto& it : items) all.insert(it.item_id);
        std::set<std::string> train_ids;
        for (const auto& it : s.train) {
            got.insert(it.item_id);
            train_ids.insert(it.item_id);
        }
        for (const auto& it : s.test) {
            got.insert(it.item_id);
            EXPECT_EQ(train_ids.count(it.item_id), 0u);
        }
        EXPECT_EQ(all, got);
        if (mode == SplitMode::uniform) EXPECT_LE(std::abs(4.0 * s.test.size() - s.train.size()), 5.0);
    }
}

TEST(Split, EmptyInputRejected) {
    EXPECT_THROW(split_dataset(std::vector<AnnotatedItem>{}, {}, 1), Error);
}

TEST(SftRecords, RagRateBoundaries) {
    const std::vector<PersonaConfig> personas = {persona()};
    const std::vector<CorpusSegment> segs = {seg("s", "background text")};
    const corpus::SegmentIndex index(segs);
    std::vector<AnnotatedItem> items;
    for (int i = 0; i < 50; ++i) {
        auto it = item("i" + std::to_string(i), "question " + std::to_string(i), i % 2 ? "I" : "II");
        it.context.background.push_back({"s", 2, false});
        items.push_back(it);
    }
    for (const auto& r : build_sft_records(items, personas, index, 0.0, 1))
        EXPECT_EQ(r.user_text.find(kBackgroundHeading), std::string::npos);
    for (const auto& r : build_sft_records(items, personas, index, 1.0, 1)) {
        EXPECT_NE(r.user_text.find(kBackgroundHeading), std::string::npos);
        EXPECT_NE(r.user_text.find("background text"), std::string::npos);
    }
    EXPECT_THROW(build_sft_records(items, personas, index, 1.5, 1), Error);
}

TEST(SftRecords, StartWithExactlyOneDeclaredToken) {
    const std::vector<PersonaConfig> personas = {persona()};
    const corpus::SegmentIndex index(std::span<const CorpusSegment>{});
    gen::Gen g(33);
    std::vector<AnnotatedItem> items;
    for (int i = 0; i < 200; ++i) items.push_back(item("i" + std::to_string(i), g.sentence(1, 10), g.coin() ? "I" : "II"));
    const auto records = build_sft_records(items, personas, index, 0.0, 3);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const std::string expected = items[i].input.stage_id == "I" ? "<TIME-I>" : "<TIME-II>";
        EXPECT_EQ(r.label_token, expected);
        EXPECT_EQ(r.user_text.rfind(expected + " ", 0), 0u);
        int tokens = 0;
        for (const auto* t : {"<TIME-I>", "<TIME-II>"}) {
            for (auto pos = r.user_text.find(t); pos != std::string::npos; pos = r.user_text.find(t, pos + 1)) ++tokens;
        }
        EXPECT_EQ(tokens, 1);
        EXPECT_EQ(r.assistant_text, annotation::serialize_cot(items[i].analysis, items[i].response));
    }
}

TEST(SftRecords, MissingStageTokenRejected) {
    const std::vector<PersonaConfig> personas = {persona()};
    const corpus::SegmentIndex index(std::span<const CorpusSegment>{});
    const std::vector<AnnotatedItem> items = {item("a", "q", "III")};
    try {
        build_sft_records(items, personas, index, 0.0, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MissingStageToken);
    }
}

TEST(LmRecords, MidpointSplit) {
    const auto halves = split_midpoint("a b c d");
    ASSERT_TRUE(halves);
    EXPECT_EQ(halves->first, "a b");
    EXPECT_EQ(halves->second, "c d");
    EXPECT_EQ(split_midpoint("山水村城书")->first, "山水");
    EXPECT_FALSE(split_midpoint("single"));
}

TEST(LmRecords, FractionAndDegenerateSegments) {
    const std::vector<PersonaConfig> personas = {persona()};
    const std::vector<CorpusSegment> segs = {seg("a", "a b c d"), seg("b", "lonely")};
    EXPECT_TRUE(build_lm_records(segs, personas, 0.0, 1).records.empty());
    const auto r = build_lm_records(segs, personas, 1.0, 1);
    ASSERT_EQ(r.records.size(), 1u);
    EXPECT_EQ(r.records[0].assistant_text, "c d");
    EXPECT_EQ(r.records[0].task, Task::continue_writing);
    EXPECT_EQ(r.records[0].user_text.rfind("<TIME-I> ", 0), 0u);
    EXPECT_TRUE(r.records[0].user_text.ends_with("a b"));
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_EQ(r.warnings[0].code, ErrorCode::SegmentTooShort);
}

TEST(Mix, CountArithmetic) {
    std::vector<SftRecord> pers, gen_records;
    for (int i = 0; i < 10; ++i) {
        SftRecord r;
        r.record_id = "p" + std::to_string(i);
        r.label_token = "<TIME-I>";
        pers.push_back(r);
    }
    for (int i = 0; i < 50; ++i) gen_records.push_back(general(i));
    const auto m = mix_training_manifest(pers, gen_records, 5, 1);
    EXPECT_EQ(m.records.size(), 100u);
    EXPECT_EQ(m.counts.by_origin.at("personified"), 50u);
    EXPECT_EQ(m.counts.by_origin.at("general"), 50u);
    EXPECT_EQ(m.new_tokens, std::vector<std::string>{"<TIME-I>"});
}

TEST(Mix, RepeatOneIsPermutation) {
    std::vector<SftRecord> pers;
    for (int i = 0; i < 30; ++i) pers.push_back(general(i));
    const auto m = mix_training_manifest(pers, {}, 1, 4);
    auto a = m.records;
    auto b = pers;
    auto by_id = [](const SftRecord& x, const SftRecord& y) { return x.record_id < y.record_id; };
    std::sort(a.begin(), a.end(), by_id);
    std::sort(b.begin(), b.end(), by_id);
    EXPECT_EQ(a, b);
}

TEST(Mix, SameSeedByteIdentical) {
    gen::Gen g(34);
    for (int iter = 0; iter < 20; ++iter) {
        std::vector<SftRecord> pers, gen_records;
        for (int i = 0; i < g.uniform(0, 40); ++i) pers.push_back(general(1000 + i));
        for (int i = 0; i < g.uniform(0, 40); ++i) gen_records.push_back(general(i));
        const int repeat = g.uniform(1, 6);
        const auto a = mix_training_manifest(pers, gen_records, repeat, 77);
        const auto b = mix_training_manifest(pers, gen_records, repeat, 77);
        EXPECT_EQ(records_to_jsonl(a.records), records_to_jsonl(b.records));
        EXPECT_EQ(a.records.size(), repeat * pers.size() + gen_records.size());
        EXPECT_EQ(a.counts, recount(a.records));
    }
    EXPECT_THROW(mix_training_manifest({}, {}, 0, 1), Error);
}

TEST(GeneralData, LoadsUserAssistantRows) {
    const auto records = load_general_records(gen::toy_dir() / "general_200.jsonl");
    EXPECT_EQ(records.size(), 200u);
    for (const auto& r : records) {
        EXPECT_EQ(r.origin, Origin::general);
        EXPECT_TRUE(r.label_token.empty());
    }
}

TEST(SftRecords, JsonRoundTrip) {
    SftRecord r = general(3);
    r.label_token = "<X>";
    r.task = Task::continue_writing;
    EXPECT_EQ(sft_from_json(to_json(r)), r);
}
