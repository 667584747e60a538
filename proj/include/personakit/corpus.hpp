#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "personakit/error.hpp"
#include "personakit/util.hpp"

namespace personakit::corpus {

enum class Language { latin, cjk, mixed };
enum class SegmentKind { conversation, experience, knowledge };

// Stage tag for material shared by every stage of a persona.
inline constexpr std::string_view kPublicStage = "public";
inline constexpr std::size_t kDefaultMaxTurns = 5;

struct StageDef {
    std::string stage_id;
    std::string label_token;  // e.g. "<TIME-I>"
    std::string boundary_note;
};

struct PersonaConfig {
    std::string persona_id;
    std::string display_name;
    Language language = Language::latin;
    std::vector<StageDef> stages;
    std::vector<std::string> source_paths;  // as written in the config
    std::filesystem::path base_dir;          // source paths resolve against this
    std::string profile;                     // optional biography blurb for prompted baselines

    const StageDef* find_stage(std::string_view stage_id) const;
};

struct Provenance {
    std::string file;
    std::size_t line = 0;   // 1-based line of the raw record
    std::size_t chunk = 0;  // dialogue chunk index within the record
};

struct CorpusSegment {
    std::string segment_id;
    std::string persona_id;
    SegmentKind kind = SegmentKind::experience;
    std::string stage_tag;  // a declared stage_id or "public"
    std::string text;
    std::size_t word_count = 0;
    Provenance provenance;

    bool is_public() const { return stage_tag == kPublicStage; }
    // Usable as material for an item of the given stage.
    bool eligible_for(std::string_view stage_id) const { return is_public() || stage_tag == stage_id; }
};

struct Turn {
    std::string speaker;
    std::string utterance;
    bool operator==(const Turn&) const = default;
};

std::string_view to_string(Language language);
std::string_view to_string(SegmentKind kind);
std::optional<SegmentKind> parse_kind(std::string_view s);

PersonaConfig parse_persona_config(const json& doc, const std::filesystem::path& base_dir);
PersonaConfig load_persona_config(const std::filesystem::path& path);
json to_json(const PersonaConfig& config);

// Greedy left-to-right chunking: all chunks but the last hold exactly max_turns.
std::vector<std::vector<Turn>> segment_dialogue(std::span<const Turn> turns,
                                                std::size_t max_turns = kDefaultMaxTurns);

// Dialogue text is one "Speaker: utterance" line per turn; unprefixed lines
// continue the previous turn. When `speakers` is non-empty only those names
// open a new turn.
std::vector<Turn> parse_turns(std::string_view text, std::span<const std::string> speakers = {});
std::string render_turns(std::span<const Turn> turns);

struct IngestResult {
    std::vector<CorpusSegment> segments;
    std::vector<Warning> warnings;
};

IngestResult ingest_corpus(const PersonaConfig& config, std::size_t max_turns = kDefaultMaxTurns);

json to_json(const CorpusSegment& segment);
CorpusSegment segment_from_json(const json& row);
std::vector<CorpusSegment> load_segments(const std::filesystem::path& path);
std::string segments_to_jsonl(std::span<const CorpusSegment> segments);

// Lookup by segment_id over a segment list that outlives the index.
class SegmentIndex {
public:
    explicit SegmentIndex(std::span<const CorpusSegment> segments);
    const CorpusSegment& at(std::string_view segment_id) const;
    const CorpusSegment* find(std::string_view segment_id) const;
    std::span<const CorpusSegment> all() const { return segments_; }

private:
    std::span<const CorpusSegment> segments_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

}  // namespace personakit::corpus
