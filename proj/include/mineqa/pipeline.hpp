#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mineqa/cache.hpp"
#include "mineqa/dataset.hpp"

namespace mineqa {

enum class StrategyKind { baseline, cot, multi_turn };
enum class Stage { context_extraction, specific_focus, actionable_output };

std::string to_string(StrategyKind kind);
StrategyKind strategy_kind_from_string(const std::string& s);  // throws ValidationError
std::string to_string(Stage stage);
Stage stage_from_string(const std::string& s);  // throws ValidationError

// One slot-filled stage prompt. Recognized slots are {question} and
// {previous_answer}; a slot marker is "{" + [A-Za-z_][A-Za-z0-9_]* + "}",
// anything else in braces passes through as literal text.
//
// The first stage must not reference {previous_answer}; the later two must.
struct StageTemplate {
    Stage stage = Stage::context_extraction;
    std::string text;

    void validate() const;  // throws ValidationError
};

struct Strategy {
    StrategyKind kind = StrategyKind::baseline;
    std::vector<StageTemplate> templates;  // multi_turn only: exactly 3, in stage order
    std::string cot_instruction;           // cot only

    void validate() const;  // throws ValidationError
};

// Fills {question} / {previous_answer}. previous_answer must be present
// exactly when the stage is not context_extraction. No recognized slot
// marker survives in the output (substituted text is never rescanned).
std::string render_stage(const StageTemplate& tmpl, const QuestionRecord& question,
                         const std::optional<std::string>& previous_answer);

// [system preamble, user = question text]; no system turn when the preamble
// is empty.
std::vector<ChatMessage> build_baseline_messages(const QuestionRecord& question,
                                                 const std::string& system_preamble);

// User content is the question followed by the reasoning instruction on its
// own paragraph. Empty instructions are rejected.
std::vector<ChatMessage> build_cot_messages(const QuestionRecord& question,
                                            const std::string& instruction,
                                            const std::string& system_preamble);

struct Turn {
    std::string stage_label;
    std::vector<ChatMessage> request_messages;
    ChatMessage response;

    bool operator==(const Turn&) const = default;
};

// The persisted record of one (question, backend, strategy) execution.
// baseline/cot transcripts hold exactly 1 turn, multi_turn exactly 3; the
// final answer is the content of the last response, untruncated.
struct Transcript {
    std::string question_id;
    std::string backend_name;
    StrategyKind strategy_kind = StrategyKind::baseline;
    std::vector<Turn> turns;
    std::string final_answer;

    bool operator==(const Transcript&) const = default;
};

jsonl::Json transcript_to_json(const Transcript& transcript);
Transcript transcript_from_json(const jsonl::Json& obj, const std::string& where);

// Per-request knobs shared by every call the runner issues.
struct RequestDefaults {
    std::string system_preamble = "You are an expert assistant for coal mining safety and operations.";
    double temperature = 0.0;
    int max_tokens = 1024;
    std::optional<long long> seed;
};

// Executes one strategy against one question. Multi-turn stages run strictly
// in order, each later prompt embedding the previous response; a stage
// failure aborts the remaining stages (PipelineError names the stage).
Transcript run_strategy(const QuestionRecord& question, const Strategy& strategy,
                        CompletionClient& client, const RequestDefaults& defaults);

// A template pack maps question categories to stage-template sets, with a
// generic set as fallback. Loaded from line-delimited StageTemplate objects
// ({stage, template, category?}).
class TemplatePack {
public:
    static TemplatePack load(const std::filesystem::path& path);

    // Generic-only pack used when no file is configured.
    static TemplatePack builtin_default();

    // The exactly-3 template set for a category (category-specific templates
    // override the generic ones stage by stage).
    std::vector<StageTemplate> templates_for(QuestionCategory category) const;

private:
    std::map<Stage, StageTemplate> generic_;
    std::map<QuestionCategory, std::map<Stage, StageTemplate>> by_category_;
};

}  // namespace mineqa
