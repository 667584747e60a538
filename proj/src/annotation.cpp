#include "personakit/annotation.hpp"

#include <algorithm>
#include <mutex>
#include <tuple>

#include <fmt/format.h>

#include "personakit/text.hpp"

namespace personakit::annotation {

using corpus::CorpusSegment;
using corpus::PersonaConfig;
using corpus::SegmentKind;
using providers::ChatRequest;
using providers::Message;
using providers::Role;

std::string_view to_string(InputType type) {
    switch (type) {
        case InputType::ordinary: return "ordinary";
        case InputType::induced: return "induced";
        case InputType::opinion: return "opinion";
    }
    return "ordinary";
}

std::optional<InputType> parse_input_type(std::string_view s) {
    for (const auto t : kAllInputTypes) {
        if (to_string(t) == s) return t;
    }
    return std::nullopt;
}

std::size_t RetrievedContext::background_words() const {
    std::size_t n = 0;
    for (const auto& e : background) n += e.words;
    return n;
}

std::size_t RetrievedContext::style_words() const {
    std::size_t n = 0;
    for (const auto& e : style) n += e.words;
    return n;
}

std::string AnnotatedItem::assistant_text() const { return serialize_cot(analysis, response); }

std::optional<CotText> parse_cot(std::string_view completion) {
    const auto s = text::trim(completion);
    if (!s.starts_with(kAnalysisMarker)) return std::nullopt;
    const auto rpos = s.find(kResponseMarker);
    if (rpos == std::string_view::npos) return std::nullopt;
    if (s.find(kAnalysisMarker, kAnalysisMarker.size()) != std::string_view::npos) return std::nullopt;
    if (s.find(kResponseMarker, rpos + kResponseMarker.size()) != std::string_view::npos) return std::nullopt;

    const auto analysis = text::trim(s.substr(kAnalysisMarker.size(), rpos - kAnalysisMarker.size()));
    const auto response = text::trim(s.substr(rpos + kResponseMarker.size()));
    if (analysis.empty() || response.empty()) return std::nullopt;
    return CotText{std::string(analysis), std::string(response)};
}

std::string serialize_cot(std::string_view analysis, std::string_view response) {
    return fmt::format("{} {} {} {}", kAnalysisMarker, analysis, kResponseMarker, response);
}

namespace {

std::string_view generation_template(InputType type) {
    switch (type) {
        case InputType::ordinary: return templates::kRaiseQuestion;
        case InputType::induced: return templates::kRaiseInduced;
        case InputType::opinion: return templates::kRaiseOpinion;
    }
    return templates::kRaiseQuestion;
}

std::string stage_note(const corpus::StageDef& stage) {
    return stage.boundary_note.empty() ? stage.stage_id : stage.boundary_note;
}

}  // namespace

GenerationResult generate_inputs(const CorpusSegment& segment, const PersonaConfig& persona,
                                 providers::ChatProvider& provider, const templates::TemplateSet& templates) {
    GenerationResult result;
    std::vector<const corpus::StageDef*> stages;
    if (segment.is_public()) {
        for (const auto& s : persona.stages) stages.push_back(&s);
    } else {
        const auto* s = persona.find_stage(segment.stage_tag);
        if (s == nullptr)
            throw Error(ErrorCode::UnknownStageTag, fmt::format("{}: '{}'", segment.segment_id, segment.stage_tag));
        stages.push_back(s);
    }

    for (const auto* stage : stages) {
        const templates::Vars vars{{"agent_name", persona.display_name},
                                   {"stage_note", stage_note(*stage)},
                                   {"text", segment.text}};
        const auto user = std::string(text::trim(templates.render(templates::kGenerationInput, vars)));
        for (const auto type : kAllInputTypes) {
            ChatRequest req;
            req.system = std::string(text::trim(templates.render(generation_template(type), vars)));
            req.messages = {Message{Role::user, user}};
            req.temperature = providers::kGenerationTemperature;

            std::string generated;
            for (int attempt = 0; attempt < 2 && generated.empty(); ++attempt) {
                generated = std::string(text::trim(provider.complete(req)));
            }
            if (generated.empty()) {
                warn(result.warnings, ErrorCode::EmptyGeneration,
                     fmt::format("segment {} skipped: blank {} input", segment.segment_id, to_string(type)));
                result.inputs.clear();
                return result;
            }
            GeneratedInput input;
            input.input_id = fmt::format("{}:{}:{}", segment.segment_id, stage->stage_id, to_string(type));
            input.persona_id = persona.persona_id;
            input.stage_id = stage->stage_id;
            input.input_type = type;
            input.text = std::move(generated);
            input.source_segment_id = segment.segment_id;
            result.inputs.push_back(std::move(input));
        }
    }
    return result;
}

std::vector<ContextEntry> pack_budget(std::span<const RankedCandidate> ranked, std::size_t budget) {
    std::vector<ContextEntry> chosen;
    if (budget == 0 || ranked.empty()) return chosen;
    if (ranked.front().word_count > budget) {
        chosen.push_back({ranked.front().segment_id, budget, true});
        return chosen;
    }
    std::size_t used = 0;
    for (const auto& c : ranked) {
        if (used + c.word_count > budget) continue;
        chosen.push_back({c.segment_id, c.word_count, false});
        used += c.word_count;
    }
    return chosen;
}

RetrievalIndex::RetrievalIndex(std::span<const CorpusSegment> segments, providers::Embedder& embedder,
                               std::size_t jobs)
    : index_(segments) {
    std::vector<std::string> texts;
    texts.reserve(segments.size());
    for (const auto& s : segments) texts.push_back(s.text);
    embeddings_ = providers::embed_all(embedder, texts, jobs);
}

RetrievedContext assemble_context(const GeneratedInput& input, const providers::EmbeddingVector& input_embedding,
                                  const RetrievalIndex& index, Budgets budgets) {
    struct Scored {
        double score;
        const CorpusSegment* segment;
    };
    std::vector<Scored> scored;
    const auto all = index.segments().all();
    for (std::size_t i = 0; i < all.size(); ++i) {
        const auto& seg = all[i];
        if (seg.persona_id != input.persona_id || !seg.eligible_for(input.stage_id)) continue;
        scored.push_back({providers::cosine(input_embedding, index.embedding(i)), &seg});
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.segment->segment_id < b.segment->segment_id;
    });

    std::vector<RankedCandidate> background;
    std::vector<RankedCandidate> style;
    for (const auto& s : scored) {
        auto& bucket = s.segment->kind == SegmentKind::conversation ? style : background;
        bucket.push_back({s.segment->segment_id, s.segment->word_count});
    }
    return {pack_budget(background, budgets.background), pack_budget(style, budgets.style)};
}

std::string render_entries(std::span<const ContextEntry> entries, const corpus::SegmentIndex& segments) {
    if (entries.empty()) return "(none)";
    std::string out;
    for (const auto& e : entries) {
        if (!out.empty()) out += "\n\n";
        const auto& seg = segments.at(e.segment_id);
        out += e.truncated ? text::truncate_words(seg.text, e.words) : seg.text;
    }
    return out;
}

AnnotatedItem annotate_response(const GeneratedInput& input, const CorpusSegment& golden,
                                const RetrievedContext& context, const PersonaConfig& persona,
                                const corpus::SegmentIndex& segments, providers::ChatProvider& provider,
                                const templates::TemplateSet& templates, const AnnotateOptions& options) {
    if (golden.segment_id != input.source_segment_id)
        throw Error(ErrorCode::SchemaError,
                    fmt::format("golden {} is not the source of input {}", golden.segment_id, input.input_id));
    const auto* stage = persona.find_stage(input.stage_id);
    if (stage == nullptr) throw Error(ErrorCode::UnknownStageTag, input.stage_id);

    ChatRequest req;
    req.system = std::string(text::trim(templates.render(
        templates::kRespond, {{"agent_name", persona.display_name},
                              {"stage_note", stage_note(*stage)},
                              {"golden", golden.text},
                              {"background", render_entries(context.background, segments)},
                              {"style", render_entries(context.style, segments)},
                              {"extra_instructions", options.extra_instructions}})));
    req.messages = {Message{Role::user, input.text}};
    req.temperature = providers::kGenerationTemperature;

    auto completion = provider.complete(req);
    auto parsed = parse_cot(completion);
    if (!parsed) {
        const auto trimmed = std::string(text::trim(completion));
        req.messages.push_back({Role::assistant, trimmed.empty() ? std::string("(empty)") : trimmed});
        req.messages.push_back(
            {Role::user, std::string(text::trim(templates.get(templates::kFormatReminder)))});
        completion = provider.complete(req);
        parsed = parse_cot(completion);
    }
    if (!parsed) throw Error(ErrorCode::UnparseableAnnotation, input.input_id);

    AnnotatedItem item;
    item.item_id = input.input_id;
    item.input = input;
    item.analysis = std::move(parsed->analysis);
    item.response = std::move(parsed->response);
    item.golden_segment_id = golden.segment_id;
    item.context = context;
    item.created_by = provider.id();
    return item;
}

const PersonaConfig& find_persona(std::span<const PersonaConfig> personas, std::string_view id) {
    for (const auto& p : personas) {
        if (p.persona_id == id) return p;
    }
    throw Error(ErrorCode::SchemaError, fmt::format("unknown persona '{}'", id));
}

AnnotationRun annotate_corpus(std::span<const PersonaConfig> personas, std::span<const CorpusSegment> segments,
                              providers::ChatProvider& provider, providers::Embedder& embedder,
                              const templates::TemplateSet& templates, const RunOptions& options) {
    AnnotationRun run;
    std::mutex mutex;

    std::vector<GenerationResult> generated(segments.size());
    parallel_for(segments.size(), options.jobs, [&](std::size_t i) {
        const auto& persona = find_persona(personas, segments[i].persona_id);
        generated[i] = generate_inputs(segments[i], persona, provider, templates);
    });
    for (auto& g : generated) {
        for (auto& w : g.warnings) run.warnings.push_back(std::move(w));
        for (auto& in : g.inputs) run.inputs.push_back(std::move(in));
    }

    const RetrievalIndex index(segments, embedder, options.jobs);
    std::vector<std::string> input_texts;
    input_texts.reserve(run.inputs.size());
    for (const auto& in : run.inputs) input_texts.push_back(in.text);
    const auto input_embeddings = providers::embed_all(embedder, input_texts, options.jobs);

    std::vector<std::optional<AnnotatedItem>> annotated(run.inputs.size());
    parallel_for(run.inputs.size(), options.jobs, [&](std::size_t i) {
        const auto& input = run.inputs[i];
        const auto& persona = find_persona(personas, input.persona_id);
        const auto context = assemble_context(input, input_embeddings[i], index, options.budgets);
        try {
            annotated[i] = annotate_response(input, index.segments().at(input.source_segment_id), context, persona,
                                             index.segments(), provider, templates, options.annotate);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::UnparseableAnnotation) throw;
            std::lock_guard lock(mutex);
            warn(run.warnings, e.code(), fmt::format("item {} rejected", input.input_id));
        }
    });
    for (auto& a : annotated) {
        if (a) run.items.push_back(std::move(*a));
    }
    std::sort(run.items.begin(), run.items.end(), [](const AnnotatedItem& a, const AnnotatedItem& b) {
        return std::tie(a.input.source_segment_id, a.input.stage_id, a.input.input_type) <
               std::tie(b.input.source_segment_id, b.input.stage_id, b.input.input_type);
    });
    return run;
}

json to_json(const GeneratedInput& in) {
    return {{"input_id", in.input_id},
            {"persona_id", in.persona_id},
            {"stage_id", in.stage_id},
            {"input_type", to_string(in.input_type)},
            {"text", in.text},
            {"source_segment_id", in.source_segment_id}};
}

GeneratedInput input_from_json(const json& row) {
    GeneratedInput in;
    in.input_id = row.at("input_id").get<std::string>();
    in.persona_id = row.at("persona_id").get<std::string>();
    in.stage_id = row.at("stage_id").get<std::string>();
    const auto type = parse_input_type(row.at("input_type").get<std::string>());
    if (!type) throw Error(ErrorCode::SchemaError, "unknown input_type " + row.at("input_type").dump());
    in.input_type = *type;
    in.text = row.at("text").get<std::string>();
    in.source_segment_id = row.at("source_segment_id").get<std::string>();
    return in;
}

namespace {

json entries_to_json(const std::vector<ContextEntry>& entries) {
    json out = json::array();
    for (const auto& e : entries) {
        out.push_back({{"segment_id", e.segment_id}, {"words", e.words}, {"truncated", e.truncated}});
    }
    return out;
}

std::vector<ContextEntry> entries_from_json(const json& arr) {
    std::vector<ContextEntry> out;
    for (const auto& e : arr) {
        out.push_back({e.at("segment_id").get<std::string>(), e.at("words").get<std::size_t>(),
                       e.value("truncated", false)});
    }
    return out;
}

}  // namespace

json to_json(const RetrievedContext& c) {
    return {{"background", entries_to_json(c.background)}, {"style", entries_to_json(c.style)}};
}

RetrievedContext context_from_json(const json& row) {
    return {entries_from_json(row.at("background")), entries_from_json(row.at("style"))};
}

json to_json(const AnnotatedItem& item) {
    return {{"item_id", item.item_id},
            {"input", to_json(item.input)},
            {"analysis", item.analysis},
            {"response", item.response},
            {"golden_segment_id", item.golden_segment_id},
            {"context", to_json(item.context)},
            {"created_by", item.created_by}};
}

AnnotatedItem item_from_json(const json& row) {
    try {
        AnnotatedItem item;
        item.item_id = row.at("item_id").get<std::string>();
        item.input = input_from_json(row.at("input"));
        item.analysis = row.at("analysis").get<std::string>();
        item.response = row.at("response").get<std::string>();
        if (item.analysis.empty() || item.response.empty())
            throw Error(ErrorCode::SchemaError, item.item_id + ": analysis and response must be non-empty");
        item.golden_segment_id = row.at("golden_segment_id").get<std::string>();
        item.context = context_from_json(row.at("context"));
        item.created_by = row.value("created_by", std::string{});
        return item;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, fmt::format("annotated item: {}", e.what()));
    }
}

std::vector<AnnotatedItem> load_items(const std::filesystem::path& path) {
    std::vector<AnnotatedItem> out;
    for (const auto& row : read_jsonl(path)) out.push_back(item_from_json(row));
    return out;
}

std::string items_to_jsonl(std::span<const AnnotatedItem> items) {
    std::vector<json> rows;
    rows.reserve(items.size());
    for (const auto& i : items) rows.push_back(to_json(i));
    return to_jsonl(rows);
}

}  // namespace personakit::annotation
