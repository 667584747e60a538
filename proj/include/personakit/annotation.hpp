#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "personakit/corpus.hpp"
#include "personakit/error.hpp"
#include "personakit/providers.hpp"
#include "personakit/templates.hpp"

namespace personakit::annotation {

enum class InputType { ordinary, induced, opinion };
inline constexpr InputType kAllInputTypes[] = {InputType::ordinary, InputType::induced, InputType::opinion};

std::string_view to_string(InputType type);
std::optional<InputType> parse_input_type(std::string_view s);

struct GeneratedInput {
    std::string input_id;
    std::string persona_id;
    std::string stage_id;
    InputType input_type = InputType::ordinary;
    std::string text;
    std::string source_segment_id;
};

struct ContextEntry {
    std::string segment_id;
    std::size_t words = 0;   // counted words actually used
    bool truncated = false;  // head-truncated to fit the budget
};

struct RetrievedContext {
    std::vector<ContextEntry> background;  // experience/knowledge, by descending similarity
    std::vector<ContextEntry> style;       // conversation, by descending similarity

    std::size_t background_words() const;
    std::size_t style_words() const;
};

struct AnnotatedItem {
    std::string item_id;
    GeneratedInput input;
    std::string analysis;
    std::string response;
    std::string golden_segment_id;
    RetrievedContext context;
    std::string created_by;

    std::string assistant_text() const;
};

// "[Analysis] <analysis> [Response] <response>"
struct CotText {
    std::string analysis;
    std::string response;
};
inline constexpr std::string_view kAnalysisMarker = "[Analysis]";
inline constexpr std::string_view kResponseMarker = "[Response]";

// Accepts surrounding whitespace and exactly one of each marker, in order,
// with non-empty parts. Anything else yields nullopt.
std::optional<CotText> parse_cot(std::string_view completion);
std::string serialize_cot(std::string_view analysis, std::string_view response);

struct GenerationResult {
    std::vector<GeneratedInput> inputs;
    std::vector<Warning> warnings;
};

// One input of each type per eligible stage: the segment's own stage, or
// every declared stage for public segments.
GenerationResult generate_inputs(const corpus::CorpusSegment& segment, const corpus::PersonaConfig& persona,
                                 providers::ChatProvider& provider, const templates::TemplateSet& templates);

struct Budgets {
    std::size_t background = 1500;
    std::size_t style = 500;
};

struct RankedCandidate {
    std::string segment_id;
    std::size_t word_count = 0;
};

// Greedy packing over candidates already ranked best-first: a candidate that
// would overflow is skipped and ranking continues; a top candidate larger than
// the whole budget is head-truncated to the budget.
std::vector<ContextEntry> pack_budget(std::span<const RankedCandidate> ranked, std::size_t budget);

// Segment embeddings for retrieval, grouped per persona.
class RetrievalIndex {
public:
    RetrievalIndex(std::span<const corpus::CorpusSegment> segments, providers::Embedder& embedder,
                   std::size_t jobs = 1);

    const corpus::SegmentIndex& segments() const { return index_; }
    const providers::EmbeddingVector& embedding(std::size_t i) const { return embeddings_[i]; }

private:
    corpus::SegmentIndex index_;
    std::vector<providers::EmbeddingVector> embeddings_;
};

// Candidates are the persona's segments eligible for the input's stage, ranked
// by cosine to the input (ties by segment_id), packed per kind under its budget.
RetrievedContext assemble_context(const GeneratedInput& input, const providers::EmbeddingVector& input_embedding,
                                  const RetrievalIndex& index, Budgets budgets = {});

// Context text as given to the annotator and to RAG-enabled SFT records.
std::string render_entries(std::span<const ContextEntry> entries, const corpus::SegmentIndex& segments);

struct AnnotateOptions {
    std::string extra_instructions;  // optional human-feedback sentences appended to the prompt
};

// Throws UnparseableAnnotation when both the completion and one re-prompt fail the grammar.
AnnotatedItem annotate_response(const GeneratedInput& input, const corpus::CorpusSegment& golden,
                                const RetrievedContext& context, const corpus::PersonaConfig& persona,
                                const corpus::SegmentIndex& segments, providers::ChatProvider& provider,
                                const templates::TemplateSet& templates, const AnnotateOptions& options = {});

struct AnnotationRun {
    std::vector<GeneratedInput> inputs;
    std::vector<AnnotatedItem> items;  // sorted by (segment_id, stage_id, input_type)
    std::vector<Warning> warnings;
};

struct RunOptions {
    Budgets budgets;
    AnnotateOptions annotate;
    std::size_t jobs = 1;
};

AnnotationRun annotate_corpus(std::span<const corpus::PersonaConfig> personas,
                              std::span<const corpus::CorpusSegment> segments, providers::ChatProvider& provider,
                              providers::Embedder& embedder, const templates::TemplateSet& templates,
                              const RunOptions& options = {});

json to_json(const GeneratedInput& input);
GeneratedInput input_from_json(const json& row);
json to_json(const RetrievedContext& context);
RetrievedContext context_from_json(const json& row);
json to_json(const AnnotatedItem& item);
AnnotatedItem item_from_json(const json& row);

std::vector<AnnotatedItem> load_items(const std::filesystem::path& path);
std::string items_to_jsonl(std::span<const AnnotatedItem> items);

const corpus::PersonaConfig& find_persona(std::span<const corpus::PersonaConfig> personas, std::string_view id);

}  // namespace personakit::annotation
