#include "personakit/corpus.hpp"

#include <algorithm>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "personakit/text.hpp"

namespace personakit::corpus {

namespace {

const std::regex kLabelPattern{R"(^<[A-Z][A-Z0-9_-]*>$)"};

[[noreturn]] void schema_error(const std::string& where, const std::string& what) {
    throw Error(ErrorCode::SchemaError, fmt::format("{}: {}", where, what));
}

std::string require_string(const json& obj, const char* field, const std::string& where) {
    if (!obj.contains(field)) schema_error(where, fmt::format("missing field '{}'", field));
    if (!obj[field].is_string()) schema_error(where, fmt::format("field '{}' must be a string", field));
    return obj[field].get<std::string>();
}

Language parse_language(const std::string& s, const std::string& where) {
    if (s == "latin") return Language::latin;
    if (s == "cjk") return Language::cjk;
    if (s == "mixed") return Language::mixed;
    schema_error(where, fmt::format("field 'language' must be latin|cjk|mixed, got '{}'", s));
}

std::string make_segment_id(const std::string& persona, SegmentKind kind, const std::string& stage,
                            const std::string& text, std::size_t ordinal) {
    const auto digest = sha256_hex(fmt::format("{}\x1f{}\x1f{}\x1f{}", persona, to_string(kind), stage, text));
    return fmt::format("{}-{:04d}", digest.substr(0, 12), ordinal);
}

}  // namespace

const StageDef* PersonaConfig::find_stage(std::string_view stage_id) const {
    for (const auto& s : stages) {
        if (s.stage_id == stage_id) return &s;
    }
    return nullptr;
}

std::string_view to_string(Language language) {
    switch (language) {
        case Language::latin: return "latin";
        case Language::cjk: return "cjk";
        case Language::mixed: return "mixed";
    }
    return "latin";
}

std::string_view to_string(SegmentKind kind) {
    switch (kind) {
        case SegmentKind::conversation: return "conversation";
        case SegmentKind::experience: return "experience";
        case SegmentKind::knowledge: return "knowledge";
    }
    return "experience";
}

std::optional<SegmentKind> parse_kind(std::string_view s) {
    if (s == "conversation") return SegmentKind::conversation;
    if (s == "experience") return SegmentKind::experience;
    if (s == "knowledge") return SegmentKind::knowledge;
    return std::nullopt;
}

PersonaConfig parse_persona_config(const json& doc, const std::filesystem::path& base_dir) {
    const std::string where = "persona config";
    if (!doc.is_object()) schema_error(where, "document must be a JSON object");

    PersonaConfig cfg;
    cfg.base_dir = base_dir;
    cfg.persona_id = require_string(doc, "persona_id", where);
    if (cfg.persona_id.empty()) schema_error(where, "field 'persona_id' must be non-empty");
    cfg.display_name = require_string(doc, "display_name", where);
    cfg.language = parse_language(require_string(doc, "language", where), where);
    if (doc.contains("profile")) cfg.profile = require_string(doc, "profile", where);

    if (!doc.contains("stages") || !doc["stages"].is_array())
        schema_error(where, "field 'stages' must be an array");
    if (doc["stages"].empty()) schema_error(where, "field 'stages' must hold at least 1 stage");

    std::set<std::string> ids;
    std::set<std::string> labels;
    for (std::size_t i = 0; i < doc["stages"].size(); ++i) {
        const auto& s = doc["stages"][i];
        const auto at = fmt::format("stages[{}]", i);
        if (!s.is_object()) schema_error(at, "must be an object");
        StageDef def;
        def.stage_id = require_string(s, "stage_id", at);
        def.label_token = require_string(s, "label_token", at);
        if (s.contains("boundary_note")) def.boundary_note = require_string(s, "boundary_note", at);
        if (def.stage_id.empty() || def.stage_id == kPublicStage)
            schema_error(at, fmt::format("invalid stage_id '{}'", def.stage_id));
        if (!std::regex_match(def.label_token, kLabelPattern))
            schema_error(at, fmt::format("label_token '{}' must look like <UPPERCASE>", def.label_token));
        if (!ids.insert(def.stage_id).second)
            schema_error(at, fmt::format("duplicate stage_id '{}'", def.stage_id));
        if (!labels.insert(def.label_token).second)
            throw Error(ErrorCode::DuplicateStageLabel, fmt::format("{}: '{}'", at, def.label_token));
        cfg.stages.push_back(std::move(def));
    }

    if (doc.contains("source_paths")) {
        if (!doc["source_paths"].is_array()) schema_error(where, "field 'source_paths' must be an array");
        for (const auto& p : doc["source_paths"]) {
            if (!p.is_string()) schema_error(where, "source_paths entries must be strings");
            cfg.source_paths.push_back(p.get<std::string>());
        }
    }
    return cfg;
}

PersonaConfig load_persona_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
    return parse_persona_config(read_json(path), path.parent_path());
}

json to_json(const PersonaConfig& config) {
    json stages = json::array();
    for (const auto& s : config.stages) {
        stages.push_back({{"stage_id", s.stage_id}, {"label_token", s.label_token}, {"boundary_note", s.boundary_note}});
    }
    json doc{{"persona_id", config.persona_id},
             {"display_name", config.display_name},
             {"language", to_string(config.language)},
             {"stages", stages},
             {"source_paths", config.source_paths}};
    if (!config.profile.empty()) doc["profile"] = config.profile;
    return doc;
}

std::vector<std::vector<Turn>> segment_dialogue(std::span<const Turn> turns, std::size_t max_turns) {
    if (turns.empty()) throw Error(ErrorCode::EmptyDialogue, "dialogue has no turns");
    if (max_turns == 0) throw Error(ErrorCode::SchemaError, "max_turns must be >= 1");
    std::vector<std::vector<Turn>> chunks;
    for (std::size_t i = 0; i < turns.size(); i += max_turns) {
        const auto end = std::min(turns.size(), i + max_turns);
        chunks.emplace_back(turns.begin() + static_cast<std::ptrdiff_t>(i),
                            turns.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return chunks;
}

std::vector<Turn> parse_turns(std::string_view text, std::span<const std::string> speakers) {
    std::vector<Turn> turns;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        const auto body = std::string(text::trim(line));
        if (body.empty()) continue;
        // ASCII or full-width colon
        auto colon = body.find(':');
        std::size_t sep = 1;
        if (const auto wide = body.find("\xEF\xBC\x9A"); wide < colon) {
            colon = wide;
            sep = 3;
        }
        bool opens = false;
        if (colon != std::string::npos && colon > 0 && colon <= 40) {
            const auto name = std::string(text::trim(std::string_view(body).substr(0, colon)));
            opens = speakers.empty() ? name.find_first_of("\"'") == std::string::npos
                                     : std::find(speakers.begin(), speakers.end(), name) != speakers.end();
            if (opens) {
                turns.push_back({name, std::string(text::trim(std::string_view(body).substr(colon + sep)))});
                continue;
            }
        }
        if (turns.empty()) {
            turns.push_back({"", body});
        } else {
            auto& u = turns.back().utterance;
            if (!u.empty()) u += ' ';
            u += body;
        }
    }
    return turns;
}

std::string render_turns(std::span<const Turn> turns) {
    std::string out;
    for (std::size_t i = 0; i < turns.size(); ++i) {
        if (i > 0) out += '\n';
        if (!turns[i].speaker.empty()) out += turns[i].speaker + ": ";
        out += turns[i].utterance;
    }
    return out;
}

IngestResult ingest_corpus(const PersonaConfig& config, std::size_t max_turns) {
    IngestResult result;
    std::size_t ordinal = 0;

    auto emit = [&](SegmentKind kind, const std::string& stage, std::string body, const std::string& file,
                    std::size_t line, std::size_t chunk) {
        CorpusSegment seg;
        seg.persona_id = config.persona_id;
        seg.kind = kind;
        seg.stage_tag = stage;
        seg.word_count = text::count_words(body);
        seg.text = std::move(body);
        seg.provenance = {file, line, chunk};
        seg.segment_id = make_segment_id(seg.persona_id, kind, stage, seg.text, ordinal++);
        result.segments.push_back(std::move(seg));
    };

    for (const auto& source : config.source_paths) {
        const auto path = config.base_dir / source;
        const auto rows = read_jsonl(path);
        std::size_t line = 0;
        for (const auto& row : rows) {
            ++line;
            const auto where = fmt::format("{}:{}", source, line);
            if (!row.is_object()) schema_error(where, "record must be a JSON object");
            const auto kind_name = require_string(row, "kind", where);
            const auto kind = parse_kind(kind_name);
            if (!kind) throw Error(ErrorCode::UnknownKind, fmt::format("{}: '{}'", where, kind_name));
            const auto stage = require_string(row, "stage", where);
            if (stage != kPublicStage && config.find_stage(stage) == nullptr)
                throw Error(ErrorCode::UnknownStageTag, fmt::format("{}: '{}'", where, stage));
            const auto body = row.contains("text") && row["text"].is_string() ? row["text"].get<std::string>()
                                                                             : std::string{};
            if (text::count_words(body) == 0) {
                warn(result.warnings, ErrorCode::EmptyRecord, where);
                continue;
            }

            if (*kind != SegmentKind::conversation) {
                emit(*kind, stage, std::string(text::trim(body)), source, line, 0);
                continue;
            }
            std::vector<std::string> speakers;
            if (row.contains("speakers")) {
                if (!row["speakers"].is_array()) schema_error(where, "field 'speakers' must be an array");
                for (const auto& s : row["speakers"]) speakers.push_back(s.get<std::string>());
            }
            const auto turns = parse_turns(body, speakers);
            const auto chunks = segment_dialogue(turns, max_turns);
            for (std::size_t c = 0; c < chunks.size(); ++c) {
                emit(*kind, stage, render_turns(chunks[c]), source, line, c);
            }
        }
    }
    return result;
}

json to_json(const CorpusSegment& s) {
    return {{"segment_id", s.segment_id},
            {"persona_id", s.persona_id},
            {"kind", to_string(s.kind)},
            {"stage_tag", s.stage_tag},
            {"text", s.text},
            {"word_count", s.word_count},
            {"provenance", {{"file", s.provenance.file}, {"line", s.provenance.line}, {"chunk", s.provenance.chunk}}}};
}

CorpusSegment segment_from_json(const json& row) {
    try {
        CorpusSegment s;
        s.segment_id = row.at("segment_id").get<std::string>();
        s.persona_id = row.at("persona_id").get<std::string>();
        const auto kind = parse_kind(row.at("kind").get<std::string>());
        if (!kind) throw Error(ErrorCode::UnknownKind, row.at("kind").get<std::string>());
        s.kind = *kind;
        s.stage_tag = row.at("stage_tag").get<std::string>();
        s.text = row.at("text").get<std::string>();
        s.word_count = row.at("word_count").get<std::size_t>();
        const auto& p = row.at("provenance");
        s.provenance = {p.at("file").get<std::string>(), p.at("line").get<std::size_t>(),
                        p.value("chunk", std::size_t{0})};
        return s;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaError, fmt::format("segment record: {}", e.what()));
    }
}

std::vector<CorpusSegment> load_segments(const std::filesystem::path& path) {
    std::vector<CorpusSegment> out;
    for (const auto& row : read_jsonl(path)) out.push_back(segment_from_json(row));
    return out;
}

std::string segments_to_jsonl(std::span<const CorpusSegment> segments) {
    std::vector<json> rows;
    rows.reserve(segments.size());
    for (const auto& s : segments) rows.push_back(to_json(s));
    return to_jsonl(rows);
}

SegmentIndex::SegmentIndex(std::span<const CorpusSegment> segments) : segments_(segments) {
    for (std::size_t i = 0; i < segments.size(); ++i) by_id_.emplace(segments[i].segment_id, i);
}

const CorpusSegment* SegmentIndex::find(std::string_view segment_id) const {
    const auto it = by_id_.find(std::string(segment_id));
    return it == by_id_.end() ? nullptr : &segments_[it->second];
}

const CorpusSegment& SegmentIndex::at(std::string_view segment_id) const {
    if (const auto* s = find(segment_id)) return *s;
    throw Error(ErrorCode::SchemaError, fmt::format("unknown segment_id '{}'", segment_id));
}

}  // namespace personakit::corpus
