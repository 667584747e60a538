#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>

#include "generators.hpp"
#include "personakit/cli.hpp"
#include "personakit/error.hpp"
#include "personakit/study.hpp"
#include "personakit/util.hpp"
#include "study_fixture.hpp"

using namespace personakit;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) { return cli::run_command(args); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> hash_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = sha256_file(e.path());
    return out;
}

class ScopedEnv {
public:
    ScopedEnv(const char* name, const std::string& value) : name_(name) { ::setenv(name, value.c_str(), 1); }
    ~ScopedEnv() { ::unsetenv(name_); }

private:
    const char* name_;
};

fs::path toy_config() { return gen::toy_dir() / "pipeline.json"; }

// One pipeline run shared by the suite.
class CliPipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new gen::TempDir("cli");
        before_ = hash_tree(gen::toy_dir());
        status_ = run({"pipeline", "--config", toy_config().string(), "--out", (dir_->path() / "a").string()});
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path out() { return dir_->path() / "a"; }

    static gen::TempDir* dir_;
    static std::map<std::string, std::string> before_;
    static int status_;
};

gen::TempDir* CliPipeline::dir_ = nullptr;
std::map<std::string, std::string> CliPipeline::before_;
int CliPipeline::status_ = -1;

}  // namespace

TEST(Cli, UnknownCommandFails) { EXPECT_EQ(run({"frobnicate"}), 1); }
TEST(Cli, NoArgumentsFails) { EXPECT_EQ(run({}), 1); }
TEST(Cli, HelpSucceeds) {
    EXPECT_EQ(run({"--help"}), 0);
    EXPECT_EQ(run({"ingest", "--help"}), 0);
}
TEST(Cli, BadFlagFails) { EXPECT_EQ(run({"ingest", "--no-such-flag"}), 1); }
TEST(Cli, MissingConfigFails) { EXPECT_EQ(run({"ingest", "--config", "/nonexistent/pipeline.json"}), 1); }

TEST(Cli, CredentialInConfigIsRejected) {
    gen::TempDir dir("cli-key");
    auto doc = read_json(toy_config());
    doc["providers"]["chat"] = {{"kind", "remote"}, {"url", "http://127.0.0.1:9"}, {"api_key", "sk-secret"}};
    const auto cfg = dir.path() / "pipeline.json";
    std::ofstream(cfg) << doc.dump();
    EXPECT_THROW(cli::parse_pipeline_config(doc, dir.path()), Error);
    EXPECT_EQ(run({"ingest", "--config", cfg.string(), "--out", (dir.path() / "out").string()}), 1);
    EXPECT_FALSE(fs::exists(dir.path() / "out" / "segments.jsonl"));
}

TEST(Cli, ConfigValidation) {
    auto doc = read_json(toy_config());
    doc["thresholds"]["dedup"] = 1.5;
    EXPECT_THROW(cli::parse_pipeline_config(doc, gen::toy_dir()).validate(), Error);
    doc = read_json(toy_config());
    doc["thresholds"]["repeat"] = 0;
    EXPECT_THROW(cli::parse_pipeline_config(doc, gen::toy_dir()).validate(), Error);
}

TEST(Cli, PrecedenceFlagsOverEnvOverConfig) {
    gen::TempDir dir("cli-prec");
    const auto cfg_seed = read_json(toy_config())["seed"].get<std::uint64_t>();
    auto seed_of = [&](const fs::path& out) {
        return read_json(out / "manifests" / "ingest.json")["seeds"]["seed"].get<std::uint64_t>();
    };
    ASSERT_EQ(run({"ingest", "--config", toy_config().string(), "--out", (dir.path() / "c").string()}), 0);
    EXPECT_EQ(seed_of(dir.path() / "c"), cfg_seed);
    {
        ScopedEnv seed("PERSONAKIT_SEED", "11");
        ScopedEnv out("PERSONAKIT_OUT", (dir.path() / "e").string());
        ASSERT_EQ(run({"ingest", "--config", toy_config().string()}), 0);
        EXPECT_EQ(seed_of(dir.path() / "e"), 11u);
        ASSERT_EQ(run({"ingest", "--config", toy_config().string(), "--seed", "12", "--out", (dir.path() / "f").string()}),
                  0);
        EXPECT_EQ(seed_of(dir.path() / "f"), 12u);
    }
    {
        ScopedEnv seed("PERSONAKIT_SEED", "not-a-number");
        EXPECT_EQ(run({"ingest", "--config", toy_config().string(), "--out", (dir.path() / "g").string()}), 1);
    }
}

TEST_F(CliPipeline, PipelineSucceedsAndWritesManifests) {
    ASSERT_EQ(status_, 0);
    for (const auto* name : {"segments.jsonl", "annotated.jsonl", "dedup.jsonl", "train.jsonl", "test.jsonl",
                             "sft_train.jsonl", "manifest.json", "test_set.jsonl", "dpo_pairs.jsonl"})
        EXPECT_TRUE(fs::exists(out() / name)) << name;
    for (const auto* stage : {"ingest", "annotate", "dedup", "split", "export-sft", "mine-dpo", "pipeline"}) {
        const auto m = read_json(out() / "manifests" / (std::string(stage) + ".json"));
        EXPECT_EQ(m["command"], stage);
        EXPECT_TRUE(m.contains("config"));
        EXPECT_TRUE(m.contains("seeds"));
        EXPECT_TRUE(m.contains("counts"));
    }
    const auto export_manifest = read_json(out() / "manifests" / "export-sft.json");
    for (const auto& [path, digest] : export_manifest["inputs"].items()) {
        EXPECT_EQ(digest.get<std::string>().size(), 64u) << path;
    }
    EXPECT_EQ(export_manifest["config"].dump().find("api_key\""), std::string::npos);
}

TEST_F(CliPipeline, InputsAreNotModified) {
    ASSERT_EQ(status_, 0);
    EXPECT_EQ(hash_tree(gen::toy_dir()), before_);
}

TEST_F(CliPipeline, RerunIsByteIdentical) {
    ASSERT_EQ(status_, 0);
    const auto b = dir_->path() / "b";
    ASSERT_EQ(run({"pipeline", "--config", toy_config().string(), "--out", b.string(), "--jobs", "3"}), 0);
    for (const auto* name : {"segments.jsonl", "annotated.jsonl", "dedup.jsonl", "train.jsonl", "test.jsonl",
                             "sft_records.jsonl", "lm_records.jsonl", "sft_train.jsonl", "manifest.json",
                             "test_set.jsonl", "dpo_pairs.jsonl"})
        EXPECT_EQ(slurp(out() / name), slurp(b / name)) << name;
}

TEST_F(CliPipeline, EvaluationCommands) {
    ASSERT_EQ(status_, 0);
    const auto cfg = toy_config().string();
    ASSERT_EQ(run({"eval-gen", "--config", cfg, "--out", out().string()}), 0);
    EXPECT_TRUE(fs::exists(out() / "manifests" / "eval-gen.json"));
    ASSERT_EQ(run({"eval-score", "--config", cfg, "--out", out().string()}), 0);
    EXPECT_TRUE(fs::exists(out() / "eval" / "report.json"));
    EXPECT_FALSE(slurp(out() / "eval" / "table.txt").empty());
    ASSERT_EQ(run({"judge", "--config", cfg, "--out", out().string()}), 0);
    const auto rates = read_json(out() / "eval" / "win_rates.json");
    EXPECT_FALSE(rates.empty());
    ASSERT_EQ(run({"arena", "--config", cfg, "--out", out().string()}), 0);
    EXPECT_TRUE(fs::exists(out() / "arena" / "bridge-debate.json"));
}

TEST(Cli, StudyReportFromPersistedSessions) {
    gen::TempDir dir("cli-study");
    const auto data = dir.path() / "study-data";
    {
        study::StudyService svc(studyfx::config(data));
        gen::Gen g(3);
        for (int i = 0; i < 5; ++i) {
            const auto id = svc.create_session({})["session_id"].get<std::string>();
            for (int k = 0; k < 4; ++k) svc.relay_message(id, "hi");
            svc.advance(id);
            for (int k = 0; k < 4; ++k) svc.relay_message(id, "hi");
            svc.submit_questionnaire(id, studyfx::answers(svc.config(), g));
        }
    }
    const auto out = dir.path() / "out";
    ASSERT_EQ(run({"study-report", "--config", toy_config().string(), "--out", out.string(), "--data-dir",
                   data.string()}),
              0);
    const auto report = read_json(out / "study" / "report.json");
    EXPECT_EQ(report["n_sessions"], 5);
    EXPECT_EQ(run({"study-report", "--config", toy_config().string(), "--out", out.string(), "--data-dir",
                   (dir.path() / "empty").string()}),
              1);
}
