#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "personakit/curation.hpp"
#include "personakit/util.hpp"

namespace personakit::cli {

struct Thresholds {
    double dedup = curation::kDefaultDedupThreshold;
    std::size_t background_budget = 1500;
    std::size_t style_budget = 500;
    double rag_rate = curation::kDefaultRagRate;
    int repeat = curation::kDefaultRepeat;
    std::size_t skip_top = 10;
    int min_rounds = 4;
    double lm_fraction = curation::kDefaultLmFraction;
    std::size_t max_turns = 5;
};

struct PipelineConfig {
    std::vector<std::filesystem::path> persona_paths;
    std::optional<std::filesystem::path> general_data;
    std::optional<std::filesystem::path> templates_dir;
    json chat_provider = {{"kind", "mock"}};
    json embedding_provider = {{"kind", "hashing"}};
    json judge_provider;  // null: use chat_provider
    Thresholds thresholds;
    curation::SplitRatio split;
    curation::SplitMode split_mode = curation::SplitMode::uniform;
    std::string extra_instructions;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::filesystem::path out = "out";
    json eval = json::object();
    json arena = json::object();
    json study = json::object();
    std::filesystem::path base_dir;  // relative paths in the config file resolve against this

    // Throws ConfigError when a field is outside its documented range.
    void validate() const;
};

PipelineConfig parse_pipeline_config(const json& doc, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
// Effective configuration as recorded in run manifests.
json to_json(const PipelineConfig& config);

std::string usage();

// argv without the program name. Returns the process exit status (0 or 1).
int run_command(const std::vector<std::string>& args);

}  // namespace personakit::cli
