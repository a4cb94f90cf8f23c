#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mineqa/cache.hpp"
#include "mineqa/dataset.hpp"
#include "mineqa/pipeline.hpp"

namespace mineqa {

// Canonical form used by the accuracy matcher: ASCII case-folded, Unicode
// whitespace collapsed to single spaces, trimmed, and any terminal run of
// sentence punctuation (. ! ?) removed. Idempotent.
std::string normalize(const std::string& text);

struct AccJudgment {
    std::string question_id;
    std::string predicted;
    std::string expected;
    bool matched = false;
    std::optional<std::string> matched_alias;  // the form that matched; expected counts as itself

    bool operator==(const AccJudgment&) const = default;
};

// matched = true iff the normalized expected answer (or one normalized
// alias) occurs inside the normalized prediction. Forms that normalize to
// the empty string cannot match. The caller fills question_id.
AccJudgment match_structured(const std::string& predicted, const std::string& expected,
                             const std::vector<std::string>& aliases);

struct JudgeScore {
    std::string question_id;
    int score = 0;  // in [1, 5]
    std::string rationale;

    bool operator==(const JudgeScore&) const = default;
};

struct RubricDimension {
    std::string name;
    std::string description;
};

struct JudgeRubric {
    std::vector<RubricDimension> dimensions;
    std::string scale_anchor_text;

    void validate() const;  // at least one dimension, names unique
};

JudgeRubric default_rubric();
JudgeRubric load_rubric(const std::filesystem::path& path);
std::string render_rubric_text(const JudgeRubric& rubric);

// Fills the {question}, {answer}, {rubric} slots of the judge prompt
// template. Unknown slot markers are rejected.
std::string render_judge_prompt(const std::string& template_text, const QuestionRecord& question,
                                const std::string& answer, const JudgeRubric& rubric);

std::string default_judge_prompt_template();

struct ParsedJudgeOutput {
    int score = 0;
    std::string rationale;
};

// Extracts the final line of the exact form "SCORE: <integer>" and the text
// before it. Throws ScoringError when no such line exists or the integer is
// outside [1, 5]; malformed outputs are never coerced into scores.
ParsedJudgeOutput parse_judge_response(const std::string& content);

// Issues one judge call embedding question, answer, and rubric, then parses
// the SCORE line per parse_judge_response.
JudgeScore score_open_ended(CompletionClient& judge, const QuestionRecord& question,
                            const std::string& answer, const JudgeRubric& rubric,
                            const std::string& prompt_template,
                            const RequestDefaults& defaults);

// Everything attributable to one (backend, strategy) cell.
struct CellInputs {
    std::string backend_name;
    StrategyKind strategy = StrategyKind::baseline;
    std::vector<AccJudgment> judgments;  // structured questions only
    std::vector<JudgeScore> scores;
    long long judge_exclusions = 0;
};

// One results-table row. acc covers structured questions only and
// mean_judge_score the successfully judged ones; either is absent when its
// denominator is zero. improvement_pct is the relative ACC change versus the
// same backend's baseline, absent on baseline rows (stored at full
// precision; rounding happens at display time).
struct CellAggregate {
    std::string backend_name;
    StrategyKind strategy = StrategyKind::baseline;
    long long structured_total = 0;
    long long structured_matched = 0;
    long long judged = 0;
    long long judge_exclusions = 0;
    std::optional<double> acc;
    std::optional<double> mean_judge_score;
    std::optional<double> improvement_pct;

    bool operator==(const CellAggregate&) const = default;
};

// Folds cell inputs into table rows, ordered by backend name then strategy.
// Results are independent of input order. Throws ValidationError when a
// non-baseline cell has no same-backend baseline cell, or on duplicate cells.
std::vector<CellAggregate> aggregate(const std::vector<CellInputs>& cells);

double improvement_pct(double baseline_acc, double method_acc);

// Round half-up (toward +inf on ties) to one decimal.
double round_half_up1(double x);

// Display forms shared by reports and the results-table verifier.
std::string format_percent(double fraction);          // 0.667 -> "66.7%"
std::string format_score(double score);               // 3.26  -> "3.3"
std::string format_improvement(double pct);           // 18.05 -> "+18.1%", -3.2 -> "-3.2%"

// The published results-table values this harness reproduces arithmetically.
struct Table1Row {
    std::string model;
    std::string method;
    double baseline_acc_pct = 0.0;
    double method_acc_pct = 0.0;
    std::optional<double> published_improvement_pct;  // absent on baseline rows
};

std::vector<Table1Row> table1_fixture();

struct Table1Check {
    std::string model;
    std::string method;
    std::string computed;
    std::string published;
    bool ok = false;
};

// Recomputes the improvement column for every non-baseline row; a check
// passes on exact string equality of the one-decimal forms.
std::vector<Table1Check> verify_table1_checks(const std::vector<Table1Row>& rows);
bool verify_table1(const std::vector<Table1Row>& rows);

}  // namespace mineqa
