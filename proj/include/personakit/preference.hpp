#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "personakit/annotation.hpp"
#include "personakit/corpus.hpp"
#include "personakit/providers.hpp"

namespace personakit::preference {

inline constexpr std::size_t kDefaultSkipTop = 10;

struct RejectedSource {
    std::string item_id;
    std::string persona_id;
    std::string stage_id;
    double cosine_to_chosen = 0.0;
    std::size_t rank = 0;  // 1-based similarity rank among the other responses
};

struct PreferencePair {
    std::string pair_id;
    std::string chosen_item_id;
    std::string prompt;  // stage token + input, as in the SFT export
    std::string chosen;
    std::string rejected;
    RejectedSource rejected_source;
};

struct Neighbor {
    std::size_t index;
    double cosine;
};

// For every pool member, the neighbor at similarity rank skip_top + 1 among
// all other members (cosine descending, ties by id ascending). Empty when the
// pool holds fewer than skip_top + 2 members.
std::vector<Neighbor> rank_negatives(std::span<const std::string> ids,
                                     std::span<const providers::EmbeddingVector> embeddings, std::size_t skip_top,
                                     std::size_t jobs = 1);

struct MiningResult {
    std::vector<PreferencePair> pairs;  // sorted by chosen item_id
    std::vector<Warning> warnings;
};

// Pool = every item's response, across personas and stages.
MiningResult mine_pairs(std::span<const annotation::AnnotatedItem> items,
                        std::span<const corpus::PersonaConfig> personas, providers::Embedder& embedder,
                        std::size_t skip_top = kDefaultSkipTop, std::size_t jobs = 1);

// {prompt, chosen, rejected, meta}
json to_json(const PreferencePair& pair);
std::string pairs_to_jsonl(std::span<const PreferencePair> pairs);

}  // namespace personakit::preference
