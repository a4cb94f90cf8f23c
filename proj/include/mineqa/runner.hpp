#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mineqa/config.hpp"
#include "mineqa/evaluation.hpp"

namespace mineqa {

struct CellCounts {
    std::string backend;
    std::string strategy;
    long long questions_run = 0;   // questions attempted
    long long transcripts = 0;     // questions that produced a transcript
    long long requests = 0;        // strategy turns + judge calls
    long long cache_hits = 0;
    long long backend_calls = 0;   // requests - cache_hits
    long long failures = 0;        // per-question backend/pipeline failures
    long long judge_exclusions = 0;
};

struct RunManifest {
    std::string config_digest;
    long long run_seed = 0;
    std::string started;   // UTC, ISO 8601
    std::string finished;
    std::string dataset_path;
    long long question_count = 0;
    std::vector<CellCounts> cells;  // grid order: backends x strategies, config order
    std::filesystem::path run_dir;

    long long total_requests() const;
    long long total_cache_hits() const;
    long long total_backend_calls() const;
};

// Validates the whole configuration the way `run` would, without touching
// any backend or the filesystem outputs. Backs the --dry-run flag.
struct GridPlan {
    long long cells = 0;
    long long calls = 0;  // questions x backends x strategies
};
GridPlan plan_experiment(const ExperimentConfig& config);

struct RunOptions {
    bool use_cache = true;
};

// Executes the full grid: one transcript per (backend, strategy, question),
// accuracy judgments for structured questions, judge scores for all
// questions. Persists transcripts, judgments, scores, exclusions, failures,
// aggregates, and reports under a fresh run-NNN directory inside
// config.output_dir, then writes manifest.json. Per-question failures are
// recorded and excluded from aggregates; the run continues.
RunManifest run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// Re-emits aggregates and reports from the artifacts persisted in a run
// directory, without touching any backend. Byte-identical across repeated
// invocations over the same directory.
void report_from(const std::filesystem::path& run_dir);

RunManifest load_manifest(const std::filesystem::path& run_dir);

}  // namespace mineqa
