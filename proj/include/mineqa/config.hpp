#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mineqa/backend.hpp"
#include "mineqa/pipeline.hpp"

namespace mineqa {

struct StrategyConfig {
    StrategyKind kind = StrategyKind::baseline;
    std::string cot_instruction;                        // cot only
    std::optional<std::filesystem::path> template_pack;  // multi_turn only
};

struct JudgeConfig {
    BackendSpec backend;
    std::optional<std::filesystem::path> prompt_template_path;
    std::optional<std::filesystem::path> rubric_path;
};

// The one declarative document driving an experiment run. Relative paths are
// resolved against the config file's directory; credentials stay in the
// environment variables named by each backend's credential_env.
struct ExperimentConfig {
    std::filesystem::path dataset_path;
    std::vector<BackendSpec> backends;
    std::vector<StrategyConfig> strategies;
    JudgeConfig judge;
    std::filesystem::path cache_dir;
    std::filesystem::path output_dir;
    int max_in_flight_global = 8;
    long long run_seed = 0;
    std::string system_preamble =
        "You are an expert assistant for coal mining safety and operations.";
    double temperature = 0.0;
    int max_tokens = 1024;
    std::filesystem::path source_path;  // provenance; set by load_config

    // Backend names unique, strategy kinds unique, non-baseline strategies
    // require a baseline (the improvement column needs one), specs valid.
    void validate() const;  // throws ValidationError
};

ExperimentConfig load_config(const std::filesystem::path& path);

// Digest of the raw config file bytes, recorded in the run manifest.
std::string config_digest(const std::filesystem::path& path);

}  // namespace mineqa
