#include "personakit/preference.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace personakit::preference {

std::vector<Neighbor> rank_negatives(std::span<const std::string> ids,
                                     std::span<const providers::EmbeddingVector> embeddings, std::size_t skip_top,
                                     std::size_t jobs) {
    const auto n = ids.size();
    if (embeddings.size() != n) throw Error(ErrorCode::LengthMismatch, "ids and embeddings differ in length");
    if (n < skip_top + 2) return {};

    std::vector<Neighbor> result(n);
    parallel_for(n, jobs, [&](std::size_t i) {
        std::vector<Neighbor> others;
        others.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) others.push_back({j, providers::cosine(embeddings[i], embeddings[j])});
        }
        const auto before = [&](const Neighbor& a, const Neighbor& b) {
            if (a.cosine != b.cosine) return a.cosine > b.cosine;
            return ids[a.index] < ids[b.index];
        };
        std::nth_element(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(skip_top), others.end(), before);
        result[i] = others[skip_top];
    });
    return result;
}

MiningResult mine_pairs(std::span<const annotation::AnnotatedItem> items,
                        std::span<const corpus::PersonaConfig> personas, providers::Embedder& embedder,
                        std::size_t skip_top, std::size_t jobs) {
    MiningResult result;
    if (items.size() < skip_top + 2) {
        for (const auto& item : items) {
            warn(result.warnings, ErrorCode::PoolTooSmall,
                 fmt::format("item {}: pool of {} < {}", item.item_id, items.size(), skip_top + 2));
        }
        return result;
    }

    std::vector<std::string> ids;
    std::vector<std::string> responses;
    ids.reserve(items.size());
    responses.reserve(items.size());
    for (const auto& item : items) {
        ids.push_back(item.item_id);
        responses.push_back(item.response);
    }
    const auto embeddings = providers::embed_all(embedder, responses, jobs);
    const auto negatives = rank_negatives(ids, embeddings, skip_top, jobs);

    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& chosen_item = items[i];
        const auto& rejected_item = items[negatives[i].index];
        auto chosen = chosen_item.assistant_text();
        auto rejected = rejected_item.assistant_text();
        if (chosen == rejected) {
            warn(result.warnings, ErrorCode::IdenticalResponse,
                 fmt::format("item {}: rank-{} neighbor {} has the same text", chosen_item.item_id, skip_top + 1,
                             rejected_item.item_id));
            continue;
        }
        const auto& persona = annotation::find_persona(personas, chosen_item.input.persona_id);
        const auto* stage = persona.find_stage(chosen_item.input.stage_id);
        if (stage == nullptr) throw Error(ErrorCode::MissingStageToken, chosen_item.item_id);

        PreferencePair pair;
        pair.pair_id = "dpo:" + chosen_item.item_id;
        pair.chosen_item_id = chosen_item.item_id;
        pair.prompt = stage->label_token + " " + chosen_item.input.text;
        pair.chosen = std::move(chosen);
        pair.rejected = std::move(rejected);
        pair.rejected_source = {rejected_item.item_id, rejected_item.input.persona_id, rejected_item.input.stage_id,
                                negatives[i].cosine, skip_top + 1};
        result.pairs.push_back(std::move(pair));
    }
    std::sort(result.pairs.begin(), result.pairs.end(),
              [](const PreferencePair& a, const PreferencePair& b) { return a.chosen_item_id < b.chosen_item_id; });
    return result;
}

json to_json(const PreferencePair& p) {
    return {{"prompt", p.prompt},
            {"chosen", p.chosen},
            {"rejected", p.rejected},
            {"meta",
             {{"pair_id", p.pair_id},
              {"chosen_item_id", p.chosen_item_id},
              {"rejected_source",
               {{"item_id", p.rejected_source.item_id},
                {"persona_id", p.rejected_source.persona_id},
                {"stage_id", p.rejected_source.stage_id},
                {"cosine_to_chosen", p.rejected_source.cosine_to_chosen},
                {"rank", p.rejected_source.rank}}}}}};
}

std::string pairs_to_jsonl(std::span<const PreferencePair> pairs) {
    std::vector<json> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) rows.push_back(to_json(p));
    return to_jsonl(rows);
}

}  // namespace personakit::preference
