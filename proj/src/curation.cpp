#include "personakit/curation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "personakit/text.hpp"

namespace personakit::curation {

using annotation::AnnotatedItem;

std::string_view to_string(Task task) {
    return task == Task::conversation ? "conversation" : "continue_writing";
}

std::string_view to_string(Origin origin) { return origin == Origin::personified ? "personified" : "general"; }

std::vector<std::size_t> greedy_dedup(std::span<const providers::EmbeddingVector> embeddings, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0))
        throw Error(ErrorCode::ConfigError, fmt::format("dedup threshold {} outside (0, 1]", threshold));
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        const bool duplicate = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
            return providers::cosine(embeddings[i], embeddings[k]) >= threshold;
        });
        if (!duplicate) kept.push_back(i);
    }
    return kept;
}

DedupResult dedup_inputs(std::span<const AnnotatedItem> items, providers::Embedder& embedder, double threshold,
                         std::size_t jobs) {
    std::vector<std::string> texts;
    texts.reserve(items.size());
    for (const auto& item : items) texts.push_back(item.input.text);
    const auto embeddings = providers::embed_all(embedder, texts, jobs);
    const auto kept = greedy_dedup(embeddings, threshold);

    DedupResult result;
    std::size_t next = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (next < kept.size() && kept[next] == i) {
            result.kept.push_back(items[i]);
            ++next;
        } else {
            result.dropped_ids.push_back(items[i].item_id);
        }
    }
    return result;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, SplitRatio ratio,
                                                                            std::uint64_t seed) {
    if (ratio.train <= 0 || ratio.test <= 0) throw Error(ErrorCode::ConfigError, "split ratio parts must be positive");
    if (n == 0) throw Error(ErrorCode::EmptyInput, "cannot split an empty item list");
    const auto n_test = static_cast<std::size_t>(
        std::llround(static_cast<double>(n) * ratio.test / static_cast<double>(ratio.train + ratio.test)));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {std::move(train), std::move(test)};
}

Split split_dataset(std::span<const AnnotatedItem> items, SplitRatio ratio, std::uint64_t seed, SplitMode mode) {
    if (items.empty()) throw Error(ErrorCode::EmptyInput, "cannot split an empty item list");
    Split split;
    if (mode == SplitMode::uniform) {
        const auto [train, test] = split_indices(items.size(), ratio, seed);
        for (const auto i : train) split.train.push_back(items[i]);
        for (const auto i : test) split.test.push_back(items[i]);
        return split;
    }

    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < items.size(); ++i) {
        groups[{items[i].input.persona_id, items[i].input.stage_id}].push_back(i);
    }
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (const auto& [key, members] : groups) {
        const auto [train, test] =
            split_indices(members.size(), ratio, derive_seed(seed, key.first + "/" + key.second));
        for (const auto i : train) train_idx.push_back(members[i]);
        for (const auto i : test) test_idx.push_back(members[i]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    for (const auto i : train_idx) split.train.push_back(items[i]);
    for (const auto i : test_idx) split.test.push_back(items[i]);
    return split;
}

std::string render_context_block(const annotation::RetrievedContext& context, const corpus::SegmentIndex& segments) {
    return fmt::format("{}{}{}{}", kBackgroundHeading, annotation::render_entries(context.background, segments),
                       kDialogueHeading, annotation::render_entries(context.style, segments));
}

std::vector<SftRecord> build_sft_records(std::span<const AnnotatedItem> items,
                                         std::span<const corpus::PersonaConfig> personas,
                                         const corpus::SegmentIndex& segments, double rag_rate, std::uint64_t seed) {
    if (!(rag_rate >= 0.0 && rag_rate <= 1.0))
        throw Error(ErrorCode::ConfigError, fmt::format("rag_rate {} outside [0, 1]", rag_rate));
    Rng rng(derive_seed(seed, "rag"));
    std::vector<SftRecord> records;
    records.reserve(items.size());
    for (const auto& item : items) {
        const auto& persona = annotation::find_persona(personas, item.input.persona_id);
        const auto* stage = persona.find_stage(item.input.stage_id);
        if (stage == nullptr)
            throw Error(ErrorCode::MissingStageToken,
                        fmt::format("item {}: stage '{}' has no label token", item.item_id, item.input.stage_id));
        SftRecord rec;
        rec.record_id = "sft:" + item.item_id;
        rec.persona_id = item.input.persona_id;
        rec.label_token = stage->label_token;
        rec.user_text = stage->label_token + " " + item.input.text;
        if (rng.uniform01() < rag_rate) rec.user_text += render_context_block(item.context, segments);
        rec.assistant_text = item.assistant_text();
        rec.task = Task::conversation;
        rec.origin = Origin::personified;
        records.push_back(std::move(rec));
    }
    return records;
}

std::optional<std::pair<std::string, std::string>> split_midpoint(std::string_view body) {
    const auto spans = text::word_spans(body);
    if (spans.size() < 2) return std::nullopt;
    const auto half = spans.size() / 2;
    return std::pair{std::string(text::trim(body.substr(0, spans[half - 1].end))),
                     std::string(text::trim(body.substr(spans[half].begin)))};
}

LmResult build_lm_records(std::span<const corpus::CorpusSegment> segments,
                          std::span<const corpus::PersonaConfig> personas, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw Error(ErrorCode::ConfigError, fmt::format("LM fraction {} outside [0, 1]", fraction));
    LmResult result;
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(segments.size())));
    if (k == 0) return result;

    std::vector<std::size_t> order(segments.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "lm"));
    rng.shuffle(order);
    order.resize(k);
    std::sort(order.begin(), order.end());

    for (const auto i : order) {
        const auto& seg = segments[i];
        const auto halves = split_midpoint(seg.text);
        if (!halves) {
            warn(result.warnings, ErrorCode::SegmentTooShort, fmt::format("segment {} skipped", seg.segment_id));
            continue;
        }
        const auto& persona = annotation::find_persona(personas, seg.persona_id);
        SftRecord rec;
        rec.record_id = "lm:" + seg.segment_id;
        rec.persona_id = seg.persona_id;
        if (const auto* stage = persona.find_stage(seg.stage_tag)) rec.label_token = stage->label_token;
        if (!rec.label_token.empty()) rec.user_text = rec.label_token + " ";
        rec.user_text += fmt::format(fmt::runtime(kContinuePrompt), persona.display_name) + halves->first;
        rec.assistant_text = halves->second;
        rec.task = Task::continue_writing;
        rec.origin = Origin::personified;
        result.records.push_back(std::move(rec));
    }
    return result;
}

ManifestCounts recount(std::span<const SftRecord> records) {
    ManifestCounts c;
    c.total = records.size();
    for (const auto& r : records) {
        ++c.by_origin[std::string(to_string(r.origin))];
        ++c.by_task[std::string(to_string(r.task))];
    }
    return c;
}

json default_trainer_hparams() {
    return {{"batch_size", 16},    {"learning_rate", 5e-5}, {"warmup_steps", 50},
            {"weight_decay", 0.1}, {"max_length", 3000},    {"epochs", 1}};
}

TrainingManifest mix_training_manifest(std::span<const SftRecord> personified, std::span<const SftRecord> general,
                                       int repeat, std::uint64_t seed, json trainer_hparams) {
    if (repeat < 1) throw Error(ErrorCode::ConfigError, "repeat must be >= 1");
    TrainingManifest m;
    m.seed = seed;
    m.repeat = repeat;
    m.trainer_hparams = std::move(trainer_hparams);
    m.records.reserve(personified.size() * static_cast<std::size_t>(repeat) + general.size());
    for (int r = 0; r < repeat; ++r) m.records.insert(m.records.end(), personified.begin(), personified.end());
    m.records.insert(m.records.end(), general.begin(), general.end());
    Rng rng(derive_seed(seed, "mix"));
    rng.shuffle(m.records);

    std::set<std::string> tokens;
    for (const auto& r : m.records) {
        if (!r.label_token.empty()) tokens.insert(r.label_token);
    }
    m.new_tokens.assign(tokens.begin(), tokens.end());
    m.counts = recount(m.records);
    return m;
}

json to_json(const SftRecord& r) {
    return {{"record_id", r.record_id},       {"persona_id", r.persona_id}, {"label_token", r.label_token},
            {"user_text", r.user_text},       {"assistant_text", r.assistant_text},
            {"task", to_string(r.task)},      {"origin", to_string(r.origin)}};
}

SftRecord sft_from_json(const json& row) {
    try {
        SftRecord r;
        r.record_id = row.at("record_id").get<std::string>();
        r.persona_id = row.value("persona_id", std::string{});
        r.label_token = row.value("label_token", std::string{});
        r.user_text = row.at("user_text").get<std::string>();
        r.assistant_text = row.at("assistant_text").get<std::string>();
        r.task = row.at("task").get<std::string>() == "conversation" ? Task::conversation : Task::continue_writing;
        r.origin = row.at("origin").get<std::string>() == "general" ? Origin::general : Origin::personified;
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, fmt::format("SFT record: {}", e.what()));
    }
}

std::string records_to_jsonl(std::span<const SftRecord> records) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(to_json(r));
    return to_jsonl(rows);
}

std::vector<SftRecord> load_records(const std::filesystem::path& path) {
    std::vector<SftRecord> out;
    for (const auto& row : read_jsonl(path)) out.push_back(sft_from_json(row));
    return out;
}

std::vector<SftRecord> load_general_records(const std::filesystem::path& path) {
    std::vector<SftRecord> out;
    std::size_t line = 0;
    for (const auto& row : read_jsonl(path)) {
        ++line;
        if (!row.contains("user") || !row.contains("assistant") || !row["user"].is_string() ||
            !row["assistant"].is_string())
            throw Error(ErrorCode::SchemaError,
                        fmt::format("{}:{}: general records need string fields 'user' and 'assistant'",
                                    path.string(), line));
        SftRecord r;
        r.record_id = row.contains("id") ? "gen:" + row["id"].get<std::string>() : fmt::format("gen:{:06d}", line);
        r.user_text = row["user"].get<std::string>();
        r.assistant_text = row["assistant"].get<std::string>();
        r.task = Task::conversation;
        r.origin = Origin::general;
        out.push_back(std::move(r));
    }
    return out;
}

json manifest_header(const TrainingManifest& m, std::string_view records_file) {
    return {{"records_file", records_file},
            {"counts", {{"total", m.counts.total}, {"by_origin", m.counts.by_origin}, {"by_task", m.counts.by_task}}},
            {"seed", m.seed},
            {"repeat", m.repeat},
            {"new_tokens", m.new_tokens},
            {"trainer_hparams", m.trainer_hparams}};
}

json test_row(const AnnotatedItem& item, const corpus::PersonaConfig& persona) {
    const auto* stage = persona.find_stage(item.input.stage_id);
    if (stage == nullptr) throw Error(ErrorCode::MissingStageToken, item.item_id);
    return {{"item_id", item.item_id},
            {"persona_id", item.input.persona_id},
            {"stage_id", item.input.stage_id},
            {"label_token", stage->label_token},
            {"input_type", annotation::to_string(item.input.input_type)},
            {"input", item.input.text},
            {"user_text", stage->label_token + " " + item.input.text},
            {"golden_analysis", item.analysis},
            {"golden_response", item.response}};
}

}  // namespace personakit::curation
