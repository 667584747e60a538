#include "personakit/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "personakit/annotation.hpp"
#include "personakit/arena.hpp"
#include "personakit/corpus.hpp"
#include "personakit/error.hpp"
#include "personakit/evaluation.hpp"
#include "personakit/preference.hpp"
#include "personakit/providers.hpp"
#include "personakit/study.hpp"
#include "personakit/study_http.hpp"
#include "personakit/templates.hpp"

namespace personakit::cli {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& why) { throw Error(ErrorCode::ConfigError, why); }

template <typename T>
T field(const json& doc, const char* key, T fallback) {
    if (!doc.contains(key)) return fallback;
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        config_error(fmt::format("config field '{}': {}", key, e.what()));
    }
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : (base / p).lexically_normal(); }

std::string_view to_string(curation::SplitMode mode) {
    return mode == curation::SplitMode::uniform ? "uniform" : "stratified";
}

}  // namespace

void PipelineConfig::validate() const {
    const auto& t = thresholds;
    if (!(t.dedup > 0.0 && t.dedup <= 1.0)) config_error("thresholds.dedup must lie in (0, 1]");
    if (!(t.rag_rate >= 0.0 && t.rag_rate <= 1.0)) config_error("thresholds.rag_rate must lie in [0, 1]");
    if (!(t.lm_fraction >= 0.0 && t.lm_fraction <= 1.0)) config_error("thresholds.lm_fraction must lie in [0, 1]");
    if (t.repeat < 1) config_error("thresholds.repeat must be at least 1");
    if (t.min_rounds < 1) config_error("thresholds.min_rounds must be at least 1");
    if (t.max_turns < 1) config_error("thresholds.max_turns must be at least 1");
    if (split.train < 1 || split.test < 1) config_error("split ratio parts must be positive");
    if (jobs < 1) config_error("jobs must be at least 1");
    if (out.empty()) config_error("empty output directory");
}

static bool has_key_anywhere(const json& doc, const std::string& key) {
    if (doc.is_object()) {
        for (const auto& [k, v] : doc.items())
            if (k == key || has_key_anywhere(v, key)) return true;
    } else if (doc.is_array()) {
        for (const auto& v : doc)
            if (has_key_anywhere(v, key)) return true;
    }
    return false;
}

PipelineConfig parse_pipeline_config(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) config_error("pipeline config must be a JSON object");
    if (has_key_anywhere(doc, "api_key")) config_error("credentials are read from the environment, never from config");
    PipelineConfig c;
    c.base_dir = base_dir;
    for (const auto& p : field(doc, "personas", std::vector<std::string>{})) c.persona_paths.push_back(resolve(base_dir, p));
    if (doc.contains("general_data")) c.general_data = resolve(base_dir, field(doc, "general_data", std::string{}));
    if (doc.contains("templates_dir")) c.templates_dir = resolve(base_dir, field(doc, "templates_dir", std::string{}));
    const auto providers = field(doc, "providers", json::object());
    c.chat_provider = field(providers, "chat", c.chat_provider);
    c.embedding_provider = field(providers, "embedding", c.embedding_provider);
    c.judge_provider = field(providers, "judge", json());
    const auto t = field(doc, "thresholds", json::object());
    auto& th = c.thresholds;
    th.dedup = field(t, "dedup", th.dedup);
    th.background_budget = field(t, "background_budget", th.background_budget);
    th.style_budget = field(t, "style_budget", th.style_budget);
    th.rag_rate = field(t, "rag_rate", th.rag_rate);
    th.repeat = field(t, "repeat", th.repeat);
    th.skip_top = field(t, "skip_top", th.skip_top);
    th.min_rounds = field(t, "min_rounds", th.min_rounds);
    th.lm_fraction = field(t, "lm_fraction", th.lm_fraction);
    th.max_turns = field(t, "max_turns", th.max_turns);
    const auto s = field(doc, "split", json::object());
    c.split.train = field(s, "train", c.split.train);
    c.split.test = field(s, "test", c.split.test);
    const auto mode = field(s, "mode", std::string("uniform"));
    if (mode == "stratified") {
        c.split_mode = curation::SplitMode::stratified;
    } else if (mode != "uniform") {
        config_error(fmt::format("unknown split mode '{}'", mode));
    }
    c.extra_instructions = field(doc, "extra_instructions", std::string{});
    c.seed = field(doc, "seed", c.seed);
    c.jobs = field(doc, "jobs", c.jobs);
    if (doc.contains("out")) c.out = resolve(base_dir, field(doc, "out", std::string{}));
    c.eval = field(doc, "eval", json::object());
    c.arena = field(doc, "arena", json::object());
    c.study = field(doc, "study", json::object());
    c.validate();
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    json doc;
    try {
        doc = read_json(path);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::MissingFile) throw;
        config_error(fmt::format("{}: {}", path.string(), e.what()));
    }
    return parse_pipeline_config(doc, fs::absolute(path).parent_path());
}

json to_json(const PipelineConfig& c) {
    json personas = json::array();
    for (const auto& p : c.persona_paths) personas.push_back(p.generic_string());
    const auto& t = c.thresholds;
    return {{"personas", personas},
            {"general_data", c.general_data ? json(c.general_data->generic_string()) : json(nullptr)},
            {"templates_dir", c.templates_dir ? json(c.templates_dir->generic_string()) : json(nullptr)},
            {"providers", {{"chat", c.chat_provider}, {"embedding", c.embedding_provider}, {"judge", c.judge_provider}}},
            {"thresholds",
             {{"dedup", t.dedup},
              {"background_budget", t.background_budget},
              {"style_budget", t.style_budget},
              {"rag_rate", t.rag_rate},
              {"repeat", t.repeat},
              {"skip_top", t.skip_top},
              {"min_rounds", t.min_rounds},
              {"lm_fraction", t.lm_fraction},
              {"max_turns", t.max_turns}}},
            {"split", {{"train", c.split.train}, {"test", c.split.test}, {"mode", to_string(c.split_mode)}}},
            {"extra_instructions", c.extra_instructions},
            {"seed", c.seed},
            {"jobs", c.jobs},
            {"eval", c.eval},
            {"arena", c.arena},
            {"study", c.study}};
}

namespace {

struct CommandInfo {
    const char* name;
    const char* summary;
};

constexpr CommandInfo kCommands[] = {
    {"ingest", "segment persona corpora into segments.jsonl"},
    {"annotate", "generate inputs and CoT annotations (inputs.jsonl, annotated.jsonl)"},
    {"dedup", "drop near-duplicate inputs (dedup.jsonl)"},
    {"split", "split items into train.jsonl and test.jsonl"},
    {"export-sft", "build SFT records, the mixed training manifest and the test set"},
    {"mine-dpo", "mine preference pairs (dpo_pairs.jsonl)"},
    {"eval-gen", "collect candidate responses from evaluation endpoints"},
    {"eval-score", "score candidates with BLEU and ROUGE (eval/report.json, eval/table.txt)"},
    {"judge", "rank candidates with the LM judge and compute win rates"},
    {"arena", "run two-agent dialogues and analyze them"},
    {"study-serve", "serve the human study HTTP API"},
    {"study-report", "aggregate submitted study sessions from the event logs"},
    {"pipeline", "ingest, annotate, dedup, split, export-sft and mine-dpo in one go"},
};

struct Flags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::optional<std::string> out;
    std::string log_level = "info";
    // command specific
    std::optional<std::string> segments;
    std::optional<std::string> items;
    std::optional<std::string> train;
    std::optional<std::string> test;
    std::optional<std::string> anchor;
    std::vector<std::string> methods;
    std::vector<std::string> scenarios;
    std::optional<std::string> host;
    std::optional<int> port;
    std::optional<std::string> data_dir;
    std::optional<std::string> static_dir;
    std::optional<std::string> field_of_work;
    std::optional<std::string> gender;
    std::optional<std::string> topic_related;
    std::optional<std::string> first_model;
};

std::optional<std::string> env(const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

template <typename T>
T parse_env_number(const char* name, const std::string& value) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return static_cast<T>(v);
    } catch (const std::exception&) {
        config_error(fmt::format("{}='{}' is not a non-negative integer", name, value));
    }
}

class Run {
public:
    Run(std::string command, PipelineConfig config) : command_(std::move(command)), config_(std::move(config)) {
        seeds_["seed"] = config_.seed;
    }

    const PipelineConfig& config() const { return config_; }
    fs::path out(const fs::path& rel) const { return config_.out / rel; }

    void input(const fs::path& p) {
        if (!fs::exists(p)) throw Error(ErrorCode::MissingFile, fmt::format("missing input {}", p.string()));
        inputs_[p.generic_string()] = sha256_file(p);
    }
    void output(const fs::path& rel, std::string_view contents) {
        write_atomic(out(rel), contents);
        outputs_.push_back(rel.generic_string());
    }
    void seed(const std::string& purpose, std::uint64_t value) { seeds_[purpose] = value; }
    json& counts() { return counts_; }
    json& extra() { return extra_; }
    void warnings(const std::vector<Warning>& w) {
        for (const auto& x : w) ++warning_counts_[std::string(personakit::to_string(x.code))];
    }

    void finish() const {
        json manifest{{"command", command_},
                      {"config", to_json(config_)},
                      {"seeds", seeds_},
                      {"inputs", inputs_},
                      {"outputs", outputs_},
                      {"counts", counts_},
                      {"warnings", warning_counts_}};
        if (!extra_.empty()) manifest["details"] = extra_;
        write_atomic(out(fs::path("manifests") / (command_ + ".json")), manifest.dump(2) + "\n");
        spdlog::info("{}: wrote {} file(s) under {}", command_, outputs_.size(), config_.out.string());
    }

private:
    std::string command_;
    PipelineConfig config_;
    json seeds_ = json::object();
    json inputs_ = json::object();
    json outputs_ = json::array();
    json counts_ = json::object();
    json extra_ = json::object();
    std::map<std::string, std::size_t> warning_counts_;
};

fs::path flag_path(const std::optional<std::string>& flag, const Run& run, const char* default_rel) {
    return flag ? fs::path(*flag) : run.out(default_rel);
}

std::vector<corpus::PersonaConfig> load_personas(Run& run) {
    const auto& paths = run.config().persona_paths;
    if (paths.empty()) config_error("no personas configured (set \"personas\" in --config)");
    std::vector<corpus::PersonaConfig> out;
    for (const auto& p : paths) {
        run.input(p);
        out.push_back(corpus::load_persona_config(p));
    }
    return out;
}

templates::TemplateSet load_templates(const PipelineConfig& c) {
    return c.templates_dir ? templates::TemplateSet::with_overrides(*c.templates_dir) : templates::TemplateSet::builtin();
}

std::unique_ptr<providers::ChatProvider> chat_provider(const PipelineConfig& c) {
    return providers::make_chat_provider(c.chat_provider, c.base_dir);
}

std::unique_ptr<providers::Embedder> embedder(const PipelineConfig& c) {
    return providers::make_embedder(c.embedding_provider);
}

template <typename T>
std::map<std::string, std::size_t> count_by(const std::vector<T>& xs, const std::function<std::string(const T&)>& key) {
    std::map<std::string, std::size_t> out;
    for (const auto& x : xs) ++out[key(x)];
    return out;
}

void cmd_ingest(Run& run) {
    const auto personas = load_personas(run);
    std::vector<corpus::CorpusSegment> segments;
    for (const auto& p : personas) {
        for (const auto& src : p.source_paths) run.input(resolve(p.base_dir, src));
        auto result = corpus::ingest_corpus(p, run.config().thresholds.max_turns);
        run.warnings(result.warnings);
        run.counts()["segments"][p.persona_id] = result.segments.size();
        segments.insert(segments.end(), result.segments.begin(), result.segments.end());
    }
    run.counts()["total"] = segments.size();
    run.output("segments.jsonl", corpus::segments_to_jsonl(segments));
}

void cmd_annotate(Run& run, const Flags& flags) {
    const auto personas = load_personas(run);
    const auto seg_path = flag_path(flags.segments, run, "segments.jsonl");
    run.input(seg_path);
    const auto segments = corpus::load_segments(seg_path);
    const auto& c = run.config();
    auto provider = chat_provider(c);
    auto emb = embedder(c);
    annotation::RunOptions options;
    options.budgets = {c.thresholds.background_budget, c.thresholds.style_budget};
    options.annotate.extra_instructions = c.extra_instructions;
    options.jobs = c.jobs;
    const auto result = annotation::annotate_corpus(personas, segments, *provider, *emb, load_templates(c), options);
    run.warnings(result.warnings);

    std::vector<json> rows;
    for (const auto& in : result.inputs) rows.push_back(annotation::to_json(in));
    run.output("inputs.jsonl", to_jsonl(rows));
    run.output("annotated.jsonl", annotation::items_to_jsonl(result.items));
    run.counts()["inputs"] = result.inputs.size();
    run.counts()["items"] = result.items.size();
    run.counts()["by_type"] = count_by<annotation::AnnotatedItem>(
        result.items, [](const auto& i) { return std::string(annotation::to_string(i.input.input_type)); });
}

void cmd_dedup(Run& run, const Flags& flags) {
    const auto path = flag_path(flags.items, run, "annotated.jsonl");
    run.input(path);
    const auto items = annotation::load_items(path);
    auto emb = embedder(run.config());
    const auto result = curation::dedup_inputs(items, *emb, run.config().thresholds.dedup, run.config().jobs);
    run.output("dedup.jsonl", annotation::items_to_jsonl(result.kept));
    run.counts()["kept"] = result.kept.size();
    run.counts()["dropped"] = result.dropped_ids.size();
    run.extra()["dropped_ids"] = result.dropped_ids;
}

void cmd_split(Run& run, const Flags& flags) {
    const auto path = flag_path(flags.items, run, "dedup.jsonl");
    run.input(path);
    const auto items = annotation::load_items(path);
    const auto& c = run.config();
    const auto seed = derive_seed(c.seed, "split");
    run.seed("split", seed);
    const auto split = curation::split_dataset(items, c.split, seed, c.split_mode);
    run.output("train.jsonl", annotation::items_to_jsonl(split.train));
    run.output("test.jsonl", annotation::items_to_jsonl(split.test));
    run.counts()["train"] = split.train.size();
    run.counts()["test"] = split.test.size();
}

void cmd_export_sft(Run& run, const Flags& flags) {
    const auto personas = load_personas(run);
    const auto& c = run.config();
    const auto train_path = flag_path(flags.train, run, "train.jsonl");
    const auto test_path = flag_path(flags.test, run, "test.jsonl");
    const auto seg_path = flag_path(flags.segments, run, "segments.jsonl");
    for (const auto& p : {train_path, test_path, seg_path}) run.input(p);
    const auto train = annotation::load_items(train_path);
    const auto test = annotation::load_items(test_path);
    const auto segments = corpus::load_segments(seg_path);
    const corpus::SegmentIndex index(segments);

    const auto sft = curation::build_sft_records(train, personas, index, c.thresholds.rag_rate, c.seed);
    auto lm = curation::build_lm_records(segments, personas, c.thresholds.lm_fraction, c.seed);
    run.warnings(lm.warnings);
    std::vector<curation::SftRecord> general;
    if (c.general_data) {
        run.input(*c.general_data);
        general = curation::load_general_records(*c.general_data);
    }
    std::vector<curation::SftRecord> personified = sft;
    personified.insert(personified.end(), lm.records.begin(), lm.records.end());
    const auto manifest = curation::mix_training_manifest(personified, general, c.thresholds.repeat, c.seed);
    run.seed("rag", derive_seed(c.seed, "rag"));
    run.seed("lm", derive_seed(c.seed, "lm"));
    run.seed("mix", derive_seed(c.seed, "mix"));

    std::vector<json> test_rows;
    for (const auto& item : test) {
        test_rows.push_back(curation::test_row(item, annotation::find_persona(personas, item.input.persona_id)));
    }
    run.output("sft_records.jsonl", curation::records_to_jsonl(sft));
    run.output("lm_records.jsonl", curation::records_to_jsonl(lm.records));
    run.output("sft_train.jsonl", curation::records_to_jsonl(manifest.records));
    run.output("manifest.json", curation::manifest_header(manifest, "sft_train.jsonl").dump(2) + "\n");
    run.output("test_set.jsonl", to_jsonl(test_rows));
    run.counts()["sft_records"] = sft.size();
    run.counts()["lm_records"] = lm.records.size();
    run.counts()["general_records"] = general.size();
    run.counts()["training_records"] = manifest.records.size();
    run.counts()["test_rows"] = test_rows.size();
}

void cmd_mine_dpo(Run& run, const Flags& flags) {
    const auto personas = load_personas(run);
    const auto path = flag_path(flags.items, run, "train.jsonl");
    run.input(path);
    const auto items = annotation::load_items(path);
    auto emb = embedder(run.config());
    const auto result =
        preference::mine_pairs(items, personas, *emb, run.config().thresholds.skip_top, run.config().jobs);
    run.warnings(result.warnings);
    run.output("dpo_pairs.jsonl", preference::pairs_to_jsonl(result.pairs));
    run.counts()["pairs"] = result.pairs.size();
}

struct Method {
    std::string name;
    json provider;
    std::string preamble;  // may use {agent_name} and {profile}
};

std::vector<Method> eval_methods(const PipelineConfig& c) {
    std::vector<Method> out;
    std::set<std::string> names;
    for (const auto& m : field(c.eval, "methods", json::array())) {
        Method method{field(m, "name", std::string{}), field(m, "provider", json()), field(m, "preamble", std::string{})};
        if (method.name.empty() || !names.insert(method.name).second)
            config_error(fmt::format("eval method names must be unique and non-empty ('{}')", method.name));
        if (method.name.find_first_of("/\\") != std::string::npos)
            config_error(fmt::format("eval method name '{}' may not contain path separators", method.name));
        out.push_back(std::move(method));
    }
    if (out.empty()) config_error("no eval.methods configured");
    return out;
}

fs::path candidates_rel(const std::string& method) { return fs::path("eval") / "candidates" / (method + ".jsonl"); }

void cmd_eval_gen(Run& run, const Flags& flags) {
    const auto personas = load_personas(run);
    const auto& c = run.config();
    const auto test_path = flag_path(flags.test, run, "test_set.jsonl");
    run.input(test_path);
    const auto items = evaluation::load_test_items(test_path);
    for (const auto& method : eval_methods(c)) {
        if (!flags.methods.empty() &&
            std::find(flags.methods.begin(), flags.methods.end(), method.name) == flags.methods.end())
            continue;
        auto endpoint = providers::make_chat_provider(method.provider, c.base_dir);
        std::vector<evaluation::Candidate> candidates(items.size());
        std::map<std::string, std::vector<std::size_t>> by_persona;
        for (std::size_t i = 0; i < items.size(); ++i) by_persona[items[i].persona_id].push_back(i);
        for (const auto& [persona_id, idx] : by_persona) {
            std::optional<std::string> preamble;
            if (!method.preamble.empty()) {
                const auto& persona = annotation::find_persona(personas, persona_id);
                preamble = templates::render(method.preamble,
                                             {{"agent_name", persona.display_name}, {"profile", persona.profile}});
            }
            std::vector<evaluation::TestItem> subset;
            for (auto i : idx) subset.push_back(items[i]);
            auto got = evaluation::generate_candidates(subset, *endpoint, preamble, c.jobs);
            for (std::size_t k = 0; k < idx.size(); ++k) candidates[idx[k]] = std::move(got[k]);
        }
        std::vector<json> rows;
        std::size_t flagged = 0;
        for (const auto& cand : candidates) {
            rows.push_back(evaluation::to_json(cand));
            flagged += cand.error ? 1 : 0;
        }
        run.output(candidates_rel(method.name), to_jsonl(rows));
        run.counts()[method.name] = {{"candidates", candidates.size()}, {"flagged", flagged}};
    }
}

std::string anchor_name(const PipelineConfig& c, const Flags& flags, const std::vector<Method>& methods) {
    const auto anchor = flags.anchor ? *flags.anchor : field(c.eval, "anchor", methods.front().name);
    if (std::none_of(methods.begin(), methods.end(), [&](const Method& m) { return m.name == anchor; }))
        config_error(fmt::format("anchor '{}' is not an eval method", anchor));
    return anchor;
}

void cmd_judge(Run& run, const Flags& flags) {
    const auto personas = load_personas(run);
    const auto& c = run.config();
    const auto methods = eval_methods(c);
    if (methods.size() < 2) config_error("judging needs at least two eval methods");
    const auto anchor = anchor_name(c, flags, methods);
    const auto test_path = flag_path(flags.test, run, "test_set.jsonl");
    run.input(test_path);
    const auto items = evaluation::load_test_items(test_path);
    std::vector<std::map<std::string, std::string>> texts(items.size());
    for (const auto& m : methods) {
        const auto path = run.out(candidates_rel(m.name));
        run.input(path);
        std::map<std::string, std::string> by_id;
        for (const auto& cand : evaluation::load_candidates(path)) by_id[cand.item_id] = cand.text;
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto it = by_id.find(items[i].item_id);
            texts[i][m.name] = it == by_id.end() || it->second.empty() ? "(no response)" : it->second;
        }
    }
    const auto judge_spec = c.judge_provider.is_null() ? c.chat_provider : c.judge_provider;
    auto judge = providers::make_chat_provider(judge_spec, c.base_dir);
    const auto templates = load_templates(c);

    std::vector<std::optional<evaluation::JudgeVerdict>> verdicts(items.size());
    std::vector<std::string> failures(items.size());
    parallel_for(items.size(), c.jobs, [&](std::size_t i) {
        std::vector<std::pair<std::string, std::string>> responses;
        for (const auto& m : methods) responses.emplace_back(m.name, texts[i].at(m.name));
        const auto& persona = annotation::find_persona(personas, items[i].persona_id);
        try {
            auto v = evaluation::judge_rank(items[i].input, items[i].golden_response, responses, *judge, templates,
                                            persona.display_name);
            v.item_id = items[i].item_id;
            verdicts[i] = std::move(v);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::UnparseableVerdict && e.code() != ErrorCode::MissingModelEntry) throw;
            failures[i] = e.what();
        }
    });
    std::vector<Warning> warnings;
    std::vector<evaluation::JudgeVerdict> ok;
    std::vector<json> rows;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!verdicts[i]) {
            warn(warnings, ErrorCode::UnparseableVerdict, fmt::format("item {}: {}", items[i].item_id, failures[i]));
            continue;
        }
        rows.push_back(evaluation::to_json(*verdicts[i]));
        ok.push_back(std::move(*verdicts[i]));
    }
    run.warnings(warnings);
    run.output(fs::path("eval") / "verdicts.jsonl", to_jsonl(rows));
    json rates = json::object();
    if (!ok.empty()) {
        for (const auto& m : methods) rates[m.name] = evaluation::win_rate(ok, m.name, anchor);
    }
    run.output(fs::path("eval") / "win_rates.json",
               json{{"anchor", anchor}, {"judged", ok.size()}, {"skipped", items.size() - ok.size()}, {"win_rate", rates}}
                       .dump(2) +
                   "\n");
    run.counts()["judged"] = ok.size();
}

void cmd_eval_score(Run& run, const Flags& flags) {
    const auto& c = run.config();
    const auto methods = eval_methods(c);
    const auto test_path = flag_path(flags.test, run, "test_set.jsonl");
    run.input(test_path);
    const auto items = evaluation::load_test_items(test_path);

    std::vector<evaluation::JudgeVerdict> verdicts;
    const auto verdict_path = run.out(fs::path("eval") / "verdicts.jsonl");
    std::optional<std::string> anchor;
    if (fs::exists(verdict_path)) {
        run.input(verdict_path);
        for (const auto& row : read_jsonl(verdict_path)) verdicts.push_back(evaluation::verdict_from_json(row));
        anchor = anchor_name(c, flags, methods);
    }

    std::map<std::string, std::vector<evaluation::TestItem>> by_persona;
    for (const auto& item : items) by_persona[item.persona_id].push_back(item);

    std::vector<evaluation::EvalReport> table;
    json report_methods = json::array();
    for (const auto& m : methods) {
        const auto path = run.out(candidates_rel(m.name));
        run.input(path);
        const auto candidates = evaluation::load_candidates(path);
        std::vector<evaluation::EvalReport> per;
        json per_json = json::array();
        evaluation::EvalReport all;
        all.method_name = m.name;
        for (const auto& [persona_id, subset] : by_persona) {
            auto r = evaluation::score_method(m.name + "/" + persona_id, subset, candidates);
            if (anchor) {
                std::vector<evaluation::JudgeVerdict> mine;
                std::set<std::string> ids;
                for (const auto& it : subset) ids.insert(it.item_id);
                for (const auto& v : verdicts) {
                    if (ids.contains(v.item_id)) mine.push_back(v);
                }
                if (!mine.empty()) r.aggregates.win_rate = evaluation::win_rate(mine, m.name, *anchor);
            }
            all.items.insert(all.items.end(), r.items.begin(), r.items.end());
            all.flagged += r.flagged;
            per_json.push_back(evaluation::to_json(r));
            per.push_back(std::move(r));
        }
        all.aggregates = evaluation::weighted_average(per);
        if (anchor && !verdicts.empty()) all.aggregates.win_rate = evaluation::win_rate(verdicts, m.name, *anchor);
        run.output(fs::path("eval") / "items" / (m.name + ".jsonl"), evaluation::items_to_jsonl(all));
        auto j = evaluation::to_json(all);
        j.erase("items");
        report_methods.push_back({{"method", m.name}, {"overall", j}, {"per_persona", per_json}});
        table.insert(table.end(), per.begin(), per.end());
        table.push_back(std::move(all));
    }
    run.output(fs::path("eval") / "report.json",
               json{{"anchor", anchor ? json(*anchor) : json(nullptr)}, {"methods", report_methods}}.dump(2) + "\n");
    const auto rendered = evaluation::render_table(table);
    run.output(fs::path("eval") / "table.txt", rendered);
    std::cout << rendered;
}

void cmd_arena(Run& run, const Flags& flags) {
    const auto& c = run.config();
    std::vector<fs::path> scenario_paths;
    for (const auto& s : flags.scenarios) scenario_paths.emplace_back(s);
    if (scenario_paths.empty()) {
        for (const auto& s : field(c.arena, "scenarios", std::vector<std::string>{}))
            scenario_paths.push_back(resolve(c.base_dir, s));
    }
    if (scenario_paths.empty()) config_error("no arena scenarios (use --scenario or arena.scenarios)");
    std::vector<arena::Lexicon> lexicons;
    for (const auto& l : field(c.arena, "lexicons", std::vector<std::string>{})) {
        const auto p = resolve(c.base_dir, l);
        run.input(p);
        lexicons.push_back(arena::load_lexicon(p));
    }
    std::vector<arena::ScenarioConfig> scenarios;
    std::set<std::string> ids;
    for (const auto& p : scenario_paths) {
        run.input(p);
        scenarios.push_back(arena::load_scenario(p));
        if (!ids.insert(scenarios.back().scenario_id).second)
            config_error(fmt::format("duplicate scenario id '{}'", scenarios.back().scenario_id));
    }
    auto emb = embedder(c);
    std::vector<arena::Transcript> transcripts(scenarios.size());
    parallel_for(scenarios.size(), c.jobs, [&](std::size_t i) {
        const auto& s = scenarios[i];
        auto a = providers::make_chat_provider(s.agent_a.endpoint, s.base_dir);
        auto b = providers::make_chat_provider(s.agent_b.endpoint, s.base_dir);
        auto t = arena::run_dialogue(s, *a, *b);
        if (t.turns.size() >= 2) t.analysis = arena::analyze_transcript(t, *emb, lexicons);
        transcripts[i] = std::move(t);
    });
    for (const auto& t : transcripts) {
        run.output(fs::path("arena") / (t.scenario_id + ".json"), arena::to_json(t).dump(2) + "\n");
        run.output(fs::path("arena") / (t.scenario_id + ".txt"), arena::pretty_print(t));
        run.counts()[t.scenario_id] = {{"turns", t.turns.size()}, {"completed", t.completed}};
    }
}

study::StudyConfig study_config(const Run& run, const Flags& flags) {
    const auto& c = run.config();
    auto doc = c.study;
    if (!doc.contains("min_rounds")) doc["min_rounds"] = c.thresholds.min_rounds;
    if (!doc.contains("seed")) doc["seed"] = derive_seed(c.seed, "study");
    auto config = study::parse_study_config(doc, c.base_dir);
    if (flags.data_dir) {
        config.data_dir = *flags.data_dir;
    } else if (const auto e = env("PERSONAKIT_STUDY_DATA")) {
        config.data_dir = *e;
    } else if (config.data_dir.empty()) {
        config.data_dir = run.out("study");
    }
    return config;
}

void cmd_study_serve(Run& run, const Flags& flags) {
    const auto config = study_config(run, flags);
    study::ServerOptions options;
    const auto& s = run.config().study;
    options.host = flags.host ? *flags.host : env("PERSONAKIT_STUDY_HOST").value_or(field(s, "host", options.host));
    if (flags.port) {
        options.port = *flags.port;
    } else if (const auto p = env("PERSONAKIT_STUDY_PORT")) {
        options.port = parse_env_number<int>("PERSONAKIT_STUDY_PORT", *p);
    } else {
        options.port = field(s, "port", options.port);
    }
    options.cors_origin = field(s, "cors_origin", options.cors_origin);
    if (flags.static_dir) options.static_dir = *flags.static_dir;
    run.seed("study", config.seed);
    run.extra()["data_dir"] = config.data_dir.generic_string();
    run.finish();

    study::StudyService service(config);
    study::StudyServer server(service, options);
    server.bind();
    server.listen();
}

void cmd_study_report(Run& run, const Flags& flags) {
    const auto config = study_config(run, flags);
    study::ReportFilter filter;
    filter.field_of_work = flags.field_of_work;
    filter.gender = flags.gender;
    filter.first_model = flags.first_model;
    if (flags.topic_related) {
        if (*flags.topic_related != "true" && *flags.topic_related != "false")
            config_error("--topic-related takes true or false");
        filter.topic_related = *flags.topic_related == "true";
    }
    const auto sessions = study::replay_sessions(config.data_dir);
    for (const auto& s : sessions) run.input(config.data_dir / "sessions" / s.session_id / "events.jsonl");
    const auto report = study::aggregate_report(sessions, config, filter);
    run.output(fs::path("study") / "report.json", report.dump(2) + "\n");
    run.counts()["sessions"] = report.at("n_sessions");
}

PipelineConfig effective_config(const Flags& flags) {
    PipelineConfig c;
    if (flags.config) {
        c = load_pipeline_config(*flags.config);
    } else {
        c.base_dir = fs::current_path();
    }
    if (const auto e = env("PERSONAKIT_SEED")) c.seed = parse_env_number<std::uint64_t>("PERSONAKIT_SEED", *e);
    if (const auto e = env("PERSONAKIT_JOBS")) c.jobs = parse_env_number<std::size_t>("PERSONAKIT_JOBS", *e);
    if (const auto e = env("PERSONAKIT_OUT")) c.out = *e;
    if (flags.seed) c.seed = *flags.seed;
    if (flags.jobs) c.jobs = *flags.jobs;
    if (flags.out) c.out = *flags.out;
    c.validate();
    return c;
}

void dispatch(const std::string& command, const Flags& flags) {
    const auto config = effective_config(flags);
    auto stage = [&](const std::string& name, const std::function<void(Run&)>& fn) {
        Run run(name, config);
        fn(run);
        run.finish();
    };
    if (command == "ingest") return stage(command, cmd_ingest);
    if (command == "annotate") return stage(command, [&](Run& r) { cmd_annotate(r, flags); });
    if (command == "dedup") return stage(command, [&](Run& r) { cmd_dedup(r, flags); });
    if (command == "split") return stage(command, [&](Run& r) { cmd_split(r, flags); });
    if (command == "export-sft") return stage(command, [&](Run& r) { cmd_export_sft(r, flags); });
    if (command == "mine-dpo") return stage(command, [&](Run& r) { cmd_mine_dpo(r, flags); });
    if (command == "eval-gen") return stage(command, [&](Run& r) { cmd_eval_gen(r, flags); });
    if (command == "eval-score") return stage(command, [&](Run& r) { cmd_eval_score(r, flags); });
    if (command == "judge") return stage(command, [&](Run& r) { cmd_judge(r, flags); });
    if (command == "arena") return stage(command, [&](Run& r) { cmd_arena(r, flags); });
    if (command == "study-report") return stage(command, [&](Run& r) { cmd_study_report(r, flags); });
    if (command == "study-serve") {
        Run run(command, config);
        return cmd_study_serve(run, flags);
    }
    // pipeline: intermediate files come from the output directory, never from stage flags
    const Flags none;
    stage("ingest", cmd_ingest);
    stage("annotate", [&](Run& r) { cmd_annotate(r, none); });
    stage("dedup", [&](Run& r) { cmd_dedup(r, none); });
    stage("split", [&](Run& r) { cmd_split(r, none); });
    stage("export-sft", [&](Run& r) { cmd_export_sft(r, none); });
    stage("mine-dpo", [&](Run& r) { cmd_mine_dpo(r, none); });
    Run summary("pipeline", config);
    summary.extra()["stages"] = {"ingest", "annotate", "dedup", "split", "export-sft", "mine-dpo"};
    summary.finish();
}

void add_command_options(CLI::App& app, const std::string& command, Flags& f) {
    app.add_option("--config", f.config, "pipeline config JSON");
    app.add_option("--seed", f.seed, "master seed (env PERSONAKIT_SEED)");
    app.add_option("--jobs", f.jobs, "worker threads (env PERSONAKIT_JOBS)")->check(CLI::PositiveNumber);
    app.add_option("--out", f.out, "output directory (env PERSONAKIT_OUT)");
    app.add_option("--log-level", f.log_level, "trace, debug, info, warn, error or off");
    if (command == "annotate") app.add_option("--segments", f.segments, "segments JSONL [<out>/segments.jsonl]");
    if (command == "dedup") app.add_option("--items", f.items, "annotated items [<out>/annotated.jsonl]");
    if (command == "split") app.add_option("--items", f.items, "deduplicated items [<out>/dedup.jsonl]");
    if (command == "mine-dpo") app.add_option("--items", f.items, "item pool [<out>/train.jsonl]");
    if (command == "export-sft") {
        app.add_option("--train", f.train, "train items [<out>/train.jsonl]");
        app.add_option("--test", f.test, "test items [<out>/test.jsonl]");
        app.add_option("--segments", f.segments, "segments JSONL [<out>/segments.jsonl]");
    }
    if (command == "eval-gen" || command == "eval-score" || command == "judge")
        app.add_option("--test", f.test, "test set [<out>/test_set.jsonl]");
    if (command == "eval-gen") app.add_option("--method", f.methods, "only these eval methods");
    if (command == "eval-score" || command == "judge") app.add_option("--anchor", f.anchor, "anchor method for win rates");
    if (command == "arena") app.add_option("--scenario", f.scenarios, "scenario JSON (repeatable)");
    if (command == "study-serve" || command == "study-report")
        app.add_option("--data-dir", f.data_dir, "study data directory (env PERSONAKIT_STUDY_DATA)");
    if (command == "study-serve") {
        app.add_option("--host", f.host, "listen address (env PERSONAKIT_STUDY_HOST)");
        app.add_option("--port", f.port, "listen port, 0 for any (env PERSONAKIT_STUDY_PORT)");
        app.add_option("--static-dir", f.static_dir, "built UI assets to serve at /");
    }
    if (command == "study-report") {
        app.add_option("--field-of-work", f.field_of_work);
        app.add_option("--gender", f.gender);
        app.add_option("--topic-related", f.topic_related, "true or false");
        app.add_option("--first-model", f.first_model, "endpoint id met first");
    }
}

void init_logging() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (!spdlog::get("personakit")) spdlog::set_default_logger(spdlog::stderr_color_mt("personakit"));
        spdlog::set_pattern("[%l] %v");
    });
}

}  // namespace

std::string usage() {
    std::string out = "usage: personakit <command> [--config FILE] [--seed N] [--jobs N] [--out DIR] [options]\n\ncommands:\n";
    for (const auto& c : kCommands) out += fmt::format("  {:<13} {}\n", c.name, c.summary);
    out += "\nrun `personakit <command> --help` for command options\n";
    return out;
}

int run_command(const std::vector<std::string>& args) {
    init_logging();
    if (args.empty()) {
        std::cerr << usage();
        return 1;
    }
    const auto& command = args.front();
    if (command == "--help" || command == "-h" || command == "help") {
        std::cout << usage();
        return 0;
    }
    const bool known = std::any_of(std::begin(kCommands), std::end(kCommands),
                                   [&](const CommandInfo& c) { return command == c.name; });
    if (!known) {
        std::cerr << fmt::format("personakit: error: {}: unknown command '{}'\n\n",
                                 personakit::to_string(ErrorCode::UnknownCommand), command)
                  << usage();
        return 1;
    }

    Flags flags;
    CLI::App app{"", "personakit " + command};
    add_command_options(app, command, flags);
    std::vector<std::string> storage{"personakit " + command};
    storage.insert(storage.end(), args.begin() + 1, args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << fmt::format("personakit: error: {}: {}\n\n", personakit::to_string(ErrorCode::ConfigError),
                                 e.what())
                  << app.help();
        return 1;
    }

    const auto level = spdlog::level::from_str(flags.log_level);
    if (level == spdlog::level::off && flags.log_level != "off") {
        std::cerr << fmt::format("personakit: error: unknown log level '{}'\n", flags.log_level);
        return 1;
    }
    spdlog::set_level(level);

    try {
        dispatch(command, flags);
    } catch (const Error& e) {
        std::cerr << fmt::format("personakit {}: error: {}\n", command, e.what());
        return 1;
    } catch (const std::exception& e) {
        std::cerr << fmt::format("personakit {}: error: {}\n", command, e.what());
        return 1;
    }
    return 0;
}

}  // namespace personakit::cli
