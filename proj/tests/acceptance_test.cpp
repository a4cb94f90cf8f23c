// Acceptance suite: runs the eight gate checks end to end against the built
// CLI and the shipped fixtures, printing one pass/fail line per criterion.
//
// The CLI binary comes from the MINEQA_CLI environment variable (ctest sets
// it); fixtures from MINEQA_FIXTURE_DIR.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mineqa/errors.hpp"
#include "mineqa/evaluation.hpp"
#include "mineqa/jsonl.hpp"
#include "mineqa/pipeline.hpp"
#include "mineqa/runner.hpp"
#include "test_support.hpp"

using namespace mineqa;
namespace fs = std::filesystem;
namespace reference = mineqa::test::reference;
using mineqa::test::random_text;
using mineqa::test::read_file;

namespace {

struct CommandResult {
    int exit_code = -1;
    std::string out;
    std::string err;
    double seconds = 0.0;
};

std::string quoted(const std::string& s) { return "'" + s + "'"; }

CommandResult run_command(const std::string& command, const fs::path& cwd) {
    static int counter = 0;
    const fs::path out_file = cwd / ("cmd-out-" + std::to_string(counter) + ".txt");
    const fs::path err_file = cwd / ("cmd-err-" + std::to_string(counter) + ".txt");
    ++counter;

    const std::string full = "cd " + quoted(cwd.string()) + " && " + command + " > " +
                             quoted(out_file.string()) + " 2> " + quoted(err_file.string());
    const auto start = std::chrono::steady_clock::now();
    const int raw = std::system(full.c_str());
    const auto stop = std::chrono::steady_clock::now();

    CommandResult result;
    result.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    result.out = read_file(out_file);
    result.err = read_file(err_file);
    result.seconds = std::chrono::duration<double>(stop - start).count();
    fs::remove(out_file);
    fs::remove(err_file);
    return result;
}

std::string fail(const std::string& message) { return message; }

#define EXPECT(cond, message)                    \
    do {                                         \
        if (!(cond)) return fail(message);       \
    } while (0)

std::vector<fs::path> stable_artifacts(const fs::path& run_dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().filename() == "manifest.json") continue;
        files.push_back(fs::relative(entry.path(), run_dir));
    }
    std::sort(files.begin(), files.end());
    return files;
}

AccJudgment make_judgment(const std::string& id, bool matched) {
    AccJudgment j;
    j.question_id = id;
    j.predicted = "p";
    j.expected = "e";
    j.matched = matched;
    return j;
}

}  // namespace

int main() {
    const char* cli_env = std::getenv("MINEQA_CLI");
    if (!cli_env) {
        std::fprintf(stderr, "MINEQA_CLI is not set; run through ctest or export it\n");
        return 2;
    }
    const std::string cli = quoted(cli_env);
    const fs::path fixtures = mineqa::test::fixture_dir();
    const fs::path config = fixtures / "experiment.json";

    mineqa::test::TempDir workspace("acceptance");
    fs::path run1, run2, run3;

    int failures = 0;
    const auto criterion = [&](int number, const std::string& label,
                               const std::function<std::string()>& body) {
        const auto start = std::chrono::steady_clock::now();
        std::string detail;
        try {
            detail = body();
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] criterion %d: %s (%.2f s)\n", detail.empty() ? "PASS" : "FAIL",
                    number, label.c_str(), seconds);
        if (!detail.empty()) {
            std::printf("       %s\n", detail.c_str());
            ++failures;
        }
    };

    criterion(1, "verify-table1 reproduces all six published improvements exactly", [&] {
        const auto result = run_command(cli + " verify-table1", workspace.path);
        EXPECT(result.exit_code == 0, "exit code " + std::to_string(result.exit_code));
        EXPECT(result.seconds < 1.0, "took " + std::to_string(result.seconds) + " s (limit 1)");
        for (const char* value :
             {"+18.1%", "+8.3%", "+8.1%", "+17.6%", "+6.4%", "+15.4%"}) {
            EXPECT(result.out.find("computed " + std::string(value)) != std::string::npos,
                   "missing computed value " + std::string(value));
        }
        const std::size_t oks = [&] {
            std::size_t count = 0, pos = 0;
            while ((pos = result.out.find("OK", pos)) != std::string::npos) {
                ++count;
                pos += 2;
            }
            return count;
        }();
        EXPECT(oks >= 6, "expected six OK rows");
        EXPECT(result.out.find("MISMATCH") == std::string::npos, "found a MISMATCH row");
        return std::string();
    });

    criterion(2, "two consecutive runs produce byte-identical artifacts", [&] {
        const std::string run_cmd = cli + " run --config " + quoted(config.string());

        const auto first = run_command(run_cmd, workspace.path);
        EXPECT(first.exit_code == 0, "first run exit " + std::to_string(first.exit_code) +
                                         ": " + first.err);
        EXPECT(first.seconds < 10.0, "first run took " + std::to_string(first.seconds) + " s");
        const auto second = run_command(run_cmd, workspace.path);
        EXPECT(second.exit_code == 0, "second run exit " + std::to_string(second.exit_code));
        EXPECT(second.seconds < 10.0, "second run took " + std::to_string(second.seconds) + " s");

        run1 = workspace.path / "runs" / "run-001";
        run2 = workspace.path / "runs" / "run-002";
        EXPECT(fs::exists(run1) && fs::exists(run2), "run directories missing");

        const auto files1 = stable_artifacts(run1);
        const auto files2 = stable_artifacts(run2);
        EXPECT(files1 == files2, "artifact lists differ");
        EXPECT(!files1.empty(), "no artifacts found");
        for (const auto& file : files1) {
            EXPECT(read_file(run1 / file) == read_file(run2 / file),
                   "artifact differs between runs: " + file.string());
        }
        return std::string();
    });

    criterion(3, "every transcript satisfies the strategy shape and chaining laws", [&] {
        EXPECT(!run1.empty() && fs::exists(run1), "criterion 2's run directory is missing");

        std::size_t transcripts = 0;
        for (const auto& entry : fs::directory_iterator(run1 / "transcripts")) {
            for (const auto& line : jsonl::read_file(entry.path())) {
                const Transcript t = transcript_from_json(line.value, entry.path().string());
                ++transcripts;

                if (t.strategy_kind == StrategyKind::multi_turn) {
                    EXPECT(t.turns.size() == 3,
                           t.question_id + ": multi_turn transcript has " +
                               std::to_string(t.turns.size()) + " turns");
                    const char* stages[] = {"context_extraction", "specific_focus",
                                            "actionable_output"};
                    for (int k = 0; k < 3; ++k) {
                        EXPECT(t.turns[k].stage_label == stages[k],
                               t.question_id + ": stage order broken at turn " +
                                   std::to_string(k));
                    }
                    for (std::size_t k = 1; k < t.turns.size(); ++k) {
                        const std::string& previous = t.turns[k - 1].response.content;
                        bool embedded = false;
                        for (const auto& msg : t.turns[k].request_messages) {
                            embedded =
                                embedded || msg.content.find(previous) != std::string::npos;
                        }
                        EXPECT(embedded, t.question_id + ": turn " + std::to_string(k) +
                                             " does not embed the previous response");
                    }
                } else {
                    EXPECT(t.turns.size() == 1,
                           t.question_id + ": single-turn strategy has " +
                               std::to_string(t.turns.size()) + " turns");
                }
                EXPECT(t.final_answer == t.turns.back().response.content,
                       t.question_id + ": final answer is not the last response");
            }
        }
        EXPECT(transcripts == 60, "expected 60 transcripts, found " +
                                      std::to_string(transcripts));
        return std::string();
    });

    criterion(4, "matcher property suite finds zero counterexamples", [&] {
        std::mt19937 rng(987654);
        for (int iter = 0; iter < 1500; ++iter) {
            const std::string text = random_text(rng, 8);
            const std::string once = normalize(text);
            EXPECT(once == reference::normalize(text),
                   "normalize disagrees with reference on: " + text);
            EXPECT(normalize(once) == once, "normalize is not idempotent on: " + text);
        }

        for (int iter = 0; iter < 1500; ++iter) {
            std::string predicted = random_text(rng, 10);
            const std::string expected = random_text(rng, 2) + "x";
            std::vector<std::string> aliases;
            if (iter % 2 == 0) aliases.push_back(random_text(rng, 2));
            if (iter % 2 == 1) predicted += " " + expected + " ";

            const auto verdict = match_structured(predicted, expected, aliases);
            const auto oracle = reference::match(predicted, expected, aliases);
            EXPECT(verdict.matched == oracle.matched,
                   "matcher disagrees with brute force on: " + predicted);
            EXPECT(verdict.matched_alias == oracle.which, "matched form disagrees");

            const auto prenormalized = match_structured(normalize(predicted), expected, aliases);
            EXPECT(verdict.matched == prenormalized.matched,
                   "matching is sensitive to pre-normalization on: " + predicted);
        }
        return std::string();
    });

    criterion(5, "judge outputs parse exactly per the SCORE contract", [&] {
        struct Case {
            const char* output;
            int expected_score;       // -1 = ScoringError expected
            const char* rationale;    // nullptr = not checked
        };
        const Case cases[] = {
            {"The answer covers detection and thresholds.\nSCORE: 4", 4,
             "The answer covers detection and thresholds."},
            {"SCORE: 1", 1, ""},
            {"SCORE: 5", 5, ""},
            {"Reasoning across\nmultiple lines.\n\nSCORE: 3", 3,
             "Reasoning across\nmultiple lines."},
            {"fine\nSCORE:2", 2, nullptr},
            {"  SCORE: 3  ", 3, nullptr},
            {"SCORE: 2\nOn reflection:\nSCORE: 5", 5, "SCORE: 2\nOn reflection:"},
            {"SCORE: 7", -1, nullptr},
            {"SCORE: 0", -1, nullptr},
            {"SCORE: -2", -1, nullptr},
            {"Good answer, four out of five.", -1, nullptr},
            {"", -1, nullptr},
            {"SCORE: 4.5", -1, nullptr},
            {"score: 4", -1, nullptr},
        };
        int checked = 0;
        for (const auto& c : cases) {
            ++checked;
            if (c.expected_score < 0) {
                bool threw = false;
                try {
                    parse_judge_response(c.output);
                } catch (const ScoringError&) {
                    threw = true;
                }
                EXPECT(threw, std::string("expected a scoring error for: ") + c.output);
            } else {
                const auto parsed = parse_judge_response(c.output);
                EXPECT(parsed.score == c.expected_score,
                       std::string("wrong score for: ") + c.output);
                if (c.rationale) {
                    EXPECT(parsed.rationale == c.rationale,
                           std::string("wrong rationale for: ") + c.output);
                }
            }
        }
        EXPECT(checked >= 10, "fewer than 10 fixture outputs");

        // The fixture run recorded the malformed judge reply as a counted
        // exclusion in every cell, never as an imputed score.
        EXPECT(!run1.empty() && fs::exists(run1), "criterion 2's run directory is missing");
        const RunManifest manifest = load_manifest(run1);
        for (const auto& cell : manifest.cells) {
            EXPECT(cell.judge_exclusions == 1,
                   "cell " + cell.backend + "/" + cell.strategy + " has " +
                       std::to_string(cell.judge_exclusions) + " exclusions, expected 1");
        }
        return std::string();
    });

    criterion(6, "aggregation properties hold on randomized fixtures", [&] {
        std::mt19937 rng(13579);
        std::uniform_int_distribution<int> count(1, 40);
        std::uniform_int_distribution<int> score_value(1, 5);
        std::uniform_int_distribution<int> coin(0, 1);

        for (double acc : {0.1, 0.4, 0.72, 1.0}) {
            EXPECT(improvement_pct(acc, acc) == 0.0, "improvement against itself is not zero");
        }
        for (double baseline : {0.25, 0.5, 0.8}) {
            double previous = -1.0;
            for (double method = baseline; method <= 1.0; method += 0.005) {
                const double value = improvement_pct(baseline, method);
                EXPECT(value > previous || method == baseline,
                       "improvement is not strictly increasing");
                previous = value;
            }
        }

        for (int iter = 0; iter < 150; ++iter) {
            std::vector<CellInputs> cells;
            for (const char* backend : {"one", "two"}) {
                for (auto kind :
                     {StrategyKind::baseline, StrategyKind::cot, StrategyKind::multi_turn}) {
                    CellInputs cell;
                    cell.backend_name = backend;
                    cell.strategy = kind;
                    const int judgments = count(rng);
                    for (int i = 0; i < judgments; ++i) {
                        cell.judgments.push_back(
                            make_judgment("q" + std::to_string(i), coin(rng) == 1));
                    }
                    cell.judgments.push_back(make_judgment("anchor", true));
                    const int scores = count(rng);
                    for (int i = 0; i < scores; ++i) {
                        cell.scores.push_back({"q" + std::to_string(i), score_value(rng), ""});
                    }
                    cell.judge_exclusions = coin(rng);
                    cells.push_back(std::move(cell));
                }
            }

            const auto rows = aggregate(cells);

            // Brute-force cross-check of every cell.
            for (const auto& row : rows) {
                const CellInputs* cell = nullptr;
                for (const auto& c : cells) {
                    if (c.backend_name == row.backend_name && c.strategy == row.strategy) {
                        cell = &c;
                    }
                }
                EXPECT(cell != nullptr, "aggregate invented a cell");
                long long matched = 0;
                for (const auto& j : cell->judgments) matched += j.matched ? 1 : 0;
                long long sum = 0;
                for (const auto& s : cell->scores) sum += s.score;
                EXPECT(row.acc.has_value() &&
                           *row.acc == static_cast<double>(matched) /
                                           static_cast<double>(cell->judgments.size()),
                       "acc disagrees with the brute-force fold");
                EXPECT(*row.acc >= 0.0 && *row.acc <= 1.0, "acc out of range");
                EXPECT(row.mean_judge_score.has_value() &&
                           *row.mean_judge_score ==
                               static_cast<double>(sum) /
                                   static_cast<double>(cell->scores.size()),
                       "mean disagrees with the brute-force fold");
                EXPECT(*row.mean_judge_score >= 1.0 && *row.mean_judge_score <= 5.0,
                       "mean out of range");
                if (row.strategy == StrategyKind::baseline) {
                    EXPECT(!row.improvement_pct.has_value(), "baseline row has an improvement");
                } else {
                    EXPECT(row.improvement_pct.has_value(), "non-baseline row lacks improvement");
                }
            }

            // Permutation invariance: shuffle cells and their contents.
            std::vector<CellInputs> shuffled = cells;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            for (auto& cell : shuffled) {
                std::shuffle(cell.judgments.begin(), cell.judgments.end(), rng);
                std::shuffle(cell.scores.begin(), cell.scores.end(), rng);
            }
            EXPECT(aggregate(shuffled) == rows, "aggregate is not permutation invariant");
        }
        return std::string();
    });

    criterion(7, "a warm-cache rerun makes zero backend calls and identical reports", [&] {
        EXPECT(!run1.empty() && fs::exists(run1), "criterion 2's run directory is missing");
        const std::string run_cmd = cli + " run --config " + quoted(config.string());
        const auto result = run_command(run_cmd, workspace.path);
        EXPECT(result.exit_code == 0, "warm run exit " + std::to_string(result.exit_code));
        EXPECT(result.seconds < 5.0, "warm run took " + std::to_string(result.seconds) + " s");

        run3 = workspace.path / "runs" / "run-003";
        EXPECT(fs::exists(run3), "warm run directory missing");

        const RunManifest manifest = load_manifest(run3);
        EXPECT(manifest.total_backend_calls() == 0,
               "warm run made " + std::to_string(manifest.total_backend_calls()) +
                   " backend calls");
        EXPECT(manifest.total_cache_hits() == manifest.total_requests(),
               "cache hits do not cover every request");
        EXPECT(manifest.total_requests() > 0, "no requests recorded");

        for (const char* report : {"report.csv", "report.txt", "summary.txt",
                                   "aggregates.jsonl"}) {
            EXPECT(read_file(run1 / report) == read_file(run3 / report),
                   std::string("report differs after warm rerun: ") + report);
        }
        return std::string();
    });

    criterion(8, "validate rejects each malformed dataset and accepts the clean one", [&] {
        const std::map<std::string, std::string> expectations = {
            {"duplicate_id.jsonl", "duplicate id"},
            {"missing_expected.jsonl", "expected_answer"},
            {"bad_category.jsonl", "unknown category"},
            {"bad_kind.jsonl", "unknown kind"},
            {"empty_text.jsonl", "empty question text"},
            {"aliases_on_unstructured.jsonl", "must not carry aliases"},
            {"empty_id.jsonl", "id is empty"},
            {"malformed_json.jsonl", "invalid JSON"},
        };
        EXPECT(expectations.size() == 8, "fixture set must hold 8 malformed files");
        for (const auto& [file, needle] : expectations) {
            const auto path = fixtures / "invalid" / file;
            EXPECT(fs::exists(path), "missing fixture " + file);
            const auto result =
                run_command(cli + " validate " + quoted(path.string()), workspace.path);
            EXPECT(result.exit_code != 0, file + " was accepted");
            EXPECT(result.err.find(needle) != std::string::npos,
                   file + ": error does not mention \"" + needle + "\": " + result.err);
        }

        const auto clean = run_command(
            cli + " validate " + quoted((fixtures / "questions.jsonl").string()),
            workspace.path);
        EXPECT(clean.exit_code == 0, "clean fixture rejected: " + clean.err);
        EXPECT(clean.out.find("20 records") != std::string::npos, "unexpected validate output");
        return std::string();
    });

    std::printf("%d/8 criteria passed\n", 8 - failures);
    return failures == 0 ? 0 : 1;
}
