#pragma once

#include <stdexcept>
#include <string>

namespace mineqa {

// Bad user input: dataset files, config files, template packs, CLI arguments.
// The CLI maps these to exit status 1.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Failure talking to a model backend. Only `transport` failures are retried.
struct BackendError : std::runtime_error {
    enum class Kind { transport, auth, malformed };

    BackendError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}

    Kind kind;
};

// A strategy execution failed; `stage` names the stage that aborted the run.
struct PipelineError : std::runtime_error {
    PipelineError(std::string stage_label, const std::string& msg)
        : std::runtime_error("stage " + stage_label + ": " + msg), stage(std::move(stage_label)) {}

    std::string stage;
};

// Judge output could not be turned into a valid score. The affected item is
// excluded from aggregates with a counted exclusion, never imputed.
struct ScoringError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mineqa
