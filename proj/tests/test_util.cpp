#include <gtest/gtest.h>

#include <atomic>
#include <set>

#include "generators.hpp"
#include "oracles.hpp"
#include "personakit/error.hpp"
#include "personakit/util.hpp"

using namespace personakit;

TEST(Util, Sha256KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Util, FnvMatchesOracle) {
    gen::Gen g(3);
    for (int i = 0; i < 200; ++i) {
        const auto s = g.sentence(0, 8);
        EXPECT_EQ(fnv1a64(s), oracle::fnv1a(s));
    }
}

TEST(Util, RngIsSeedDeterministic) {
    Rng a(42), b(42), c(43);
    std::vector<int> xs(50), ys(50);
    for (int i = 0; i < 50; ++i) xs[i] = ys[i] = i;
    a.shuffle(xs);
    b.shuffle(ys);
    EXPECT_EQ(xs, ys);
    EXPECT_NE(c.next(), Rng(42).next());
}

TEST(Util, RngIndexStaysInRange) {
    Rng r(1);
    std::set<std::size_t> seen;
    for (int i = 0; i < 1000; ++i) {
        const auto k = r.index(7);
        ASSERT_LT(k, 7u);
        seen.insert(k);
    }
    EXPECT_EQ(seen.size(), 7u);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform01();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Util, DeriveSeedSeparatesPurposes) {
    EXPECT_NE(derive_seed(7, "split"), derive_seed(7, "rag"));
    EXPECT_EQ(derive_seed(7, "split"), derive_seed(7, "split"));
}

TEST(Util, JsonlRoundTripAndLineNumbers) {
    gen::TempDir dir("util");
    const auto p = dir.path() / "a.jsonl";
    std::vector<json> rows = {{{"a", 1}}, {{"b", "山"}}};
    write_atomic(p, to_jsonl(rows));
    EXPECT_EQ(read_jsonl(p), rows);

    write_atomic(p, "{\"a\":1}\n\n{bad\n");
    try {
        read_jsonl(p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SchemaError);
        EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
    }
    EXPECT_THROW(read_jsonl(dir.path() / "missing.jsonl"), Error);
}

TEST(Util, ParallelForVisitsEveryIndexOnce) {
    std::vector<std::atomic<int>> hits(500);
    parallel_for(500, 4, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(Util, ParallelForRethrows) {
    EXPECT_THROW(parallel_for(100, 3,
                              [](std::size_t i) {
                                  if (i == 37) throw Error(ErrorCode::EmptyText, "x");
                              }),
                 Error);
}

TEST(Util, ErrorMessageCarriesCode) {
    const Error e(ErrorCode::PoolTooSmall, "only 3");
    EXPECT_EQ(std::string(e.what()), "PoolTooSmall: only 3");
    std::vector<Warning> sink;
    warn(sink, ErrorCode::EmptyRecord, "line 4");
    ASSERT_EQ(sink.size(), 1u);
    EXPECT_EQ(sink[0].code, ErrorCode::EmptyRecord);
}
