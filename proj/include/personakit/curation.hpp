#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "personakit/annotation.hpp"
#include "personakit/corpus.hpp"
#include "personakit/providers.hpp"

namespace personakit::curation {

enum class Task { conversation, continue_writing };
enum class Origin { personified, general };

std::string_view to_string(Task task);
std::string_view to_string(Origin origin);

struct SftRecord {
    std::string record_id;
    std::string persona_id;
    std::string label_token;  // empty for general records
    std::string user_text;
    std::string assistant_text;
    Task task = Task::conversation;
    Origin origin = Origin::personified;

    bool operator==(const SftRecord&) const = default;
};

inline constexpr double kDefaultDedupThreshold = 0.95;
inline constexpr double kDefaultRagRate = 0.01;
inline constexpr double kDefaultLmFraction = 0.10;
inline constexpr int kDefaultRepeat = 5;

// Marks the start of a rendered retrieval block inside user_text.
inline constexpr std::string_view kBackgroundHeading = "\n\nBackground:\n";
inline constexpr std::string_view kDialogueHeading = "\n\nPast dialogue:\n";
inline constexpr std::string_view kContinuePrompt = "Continue writing the following text about {}:\n";

struct DedupResult {
    std::vector<annotation::AnnotatedItem> kept;
    std::vector<std::string> dropped_ids;
};

// Greedy first-wins scan: index i is kept iff its cosine to every previously
// kept vector is below `threshold`.
std::vector<std::size_t> greedy_dedup(std::span<const providers::EmbeddingVector> embeddings, double threshold);

DedupResult dedup_inputs(std::span<const annotation::AnnotatedItem> items, providers::Embedder& embedder,
                         double threshold = kDefaultDedupThreshold, std::size_t jobs = 1);

struct SplitRatio {
    int train = 4;
    int test = 1;
};

enum class SplitMode { uniform, stratified };

// Test size is round(n * test / (train + test)); both index lists ascending.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, SplitRatio ratio,
                                                                            std::uint64_t seed);

struct Split {
    std::vector<annotation::AnnotatedItem> train;
    std::vector<annotation::AnnotatedItem> test;
};

// Stratified mode applies the uniform rule within each (persona, stage) group.
Split split_dataset(std::span<const annotation::AnnotatedItem> items, SplitRatio ratio, std::uint64_t seed,
                    SplitMode mode = SplitMode::uniform);

std::string render_context_block(const annotation::RetrievedContext& context, const corpus::SegmentIndex& segments);

std::vector<SftRecord> build_sft_records(std::span<const annotation::AnnotatedItem> items,
                                         std::span<const corpus::PersonaConfig> personas,
                                         const corpus::SegmentIndex& segments, double rag_rate, std::uint64_t seed);

// Splits at the middle counted word: the first floor(n/2) words vs. the rest.
std::optional<std::pair<std::string, std::string>> split_midpoint(std::string_view text);

struct LmResult {
    std::vector<SftRecord> records;
    std::vector<Warning> warnings;
};

LmResult build_lm_records(std::span<const corpus::CorpusSegment> segments,
                          std::span<const corpus::PersonaConfig> personas, double fraction, std::uint64_t seed);

struct ManifestCounts {
    std::size_t total = 0;
    std::map<std::string, std::size_t> by_origin;
    std::map<std::string, std::size_t> by_task;

    bool operator==(const ManifestCounts&) const = default;
};

ManifestCounts recount(std::span<const SftRecord> records);

// Hyper-parameters handed to the external trainer; carried as data only.
json default_trainer_hparams();

struct TrainingManifest {
    std::vector<SftRecord> records;
    ManifestCounts counts;
    std::uint64_t seed = 0;
    int repeat = kDefaultRepeat;
    std::vector<std::string> new_tokens;
    json trainer_hparams;
};

TrainingManifest mix_training_manifest(std::span<const SftRecord> personified, std::span<const SftRecord> general,
                                       int repeat, std::uint64_t seed, json trainer_hparams = default_trainer_hparams());

json to_json(const SftRecord& record);
SftRecord sft_from_json(const json& row);
std::string records_to_jsonl(std::span<const SftRecord> records);
std::vector<SftRecord> load_records(const std::filesystem::path& path);

// General instruction data: JSON lines of {"user": ..., "assistant": ...}.
std::vector<SftRecord> load_general_records(const std::filesystem::path& path);

json manifest_header(const TrainingManifest& manifest, std::string_view records_file);

// Test-set rows mirror the SFT prompt; golden answers are held in their own fields.
json test_row(const annotation::AnnotatedItem& item, const corpus::PersonaConfig& persona);

}  // namespace personakit::curation
