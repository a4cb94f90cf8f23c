#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <set>

#include "mineqa/errors.hpp"
#include "mineqa/report.hpp"
#include "mineqa/runner.hpp"
#include "test_support.hpp"

using namespace mineqa;
using mineqa::test::TempDir;
using mineqa::test::fixture_dir;
using mineqa::test::read_file;
using mineqa::test::write_file;

namespace {

BackendSpec mock_spec(const std::string& name, const std::filesystem::path& fixture) {
    BackendSpec spec;
    spec.name = name;
    spec.kind = BackendKind::mock;
    spec.fixture_path = fixture;
    return spec;
}

// The shipped experiment wired to scratch cache/output directories.
ExperimentConfig fixture_experiment(const std::filesystem::path& scratch) {
    ExperimentConfig config;
    config.dataset_path = fixture_dir() / "questions.jsonl";
    config.backends = {mock_spec("mockmodel", fixture_dir() / "mock_model.jsonl")};

    StrategyConfig baseline;
    baseline.kind = StrategyKind::baseline;
    StrategyConfig cot;
    cot.kind = StrategyKind::cot;
    cot.cot_instruction = "Reason step by step, then state the final answer.";
    StrategyConfig multi;
    multi.kind = StrategyKind::multi_turn;
    multi.template_pack = fixture_dir() / "templates/multi_turn.jsonl";
    config.strategies = {baseline, cot, multi};

    config.judge.backend = mock_spec("mockjudge", fixture_dir() / "mock_judge.jsonl");
    config.judge.prompt_template_path = fixture_dir() / "templates/judge_prompt.txt";
    config.judge.rubric_path = fixture_dir() / "templates/rubric.jsonl";

    config.cache_dir = scratch / "cache";
    config.output_dir = scratch / "runs";
    config.run_seed = 42;
    return config;
}

std::size_t line_count(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::size_t lines = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) ++lines;
    }
    return lines;
}

// Relative paths of every run artifact that must be byte-stable, manifest
// excluded (it carries timestamps).
std::vector<std::filesystem::path> stable_artifacts(const std::filesystem::path& run_dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(run_dir)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().filename() == "manifest.json") continue;
        files.push_back(std::filesystem::relative(entry.path(), run_dir));
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

TEST_CASE("the shipped experiment config loads with resolved paths") {
    const ExperimentConfig config = load_config(fixture_dir() / "experiment.json");
    CHECK(config.dataset_path == fixture_dir() / "questions.jsonl");
    REQUIRE(config.backends.size() == 1);
    CHECK(config.backends[0].name == "mockmodel");
    CHECK(config.backends[0].fixture_path == fixture_dir() / "mock_model.jsonl");
    REQUIRE(config.strategies.size() == 3);
    CHECK(config.strategies[1].cot_instruction ==
          "Reason step by step, then state the final answer.");
    CHECK(config.judge.backend.name == "mockjudge");
    CHECK(config.run_seed == 42);
    CHECK(config.max_in_flight_global == 8);
}

TEST_CASE("config validation rejects the documented mistakes") {
    TempDir tmp("runner");
    const auto fixture = write_file(tmp.path, "echo.jsonl", "{\"fallback\":\"echo\"}\n");

    ExperimentConfig config = fixture_experiment(tmp.path);

    SUBCASE("duplicate backend names") {
        config.backends.push_back(mock_spec("mockmodel", fixture));
        CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("duplicate backend"),
                             ValidationError);
    }
    SUBCASE("duplicate strategy kinds") {
        config.strategies.push_back(config.strategies[0]);
        CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("duplicate strategy"),
                             ValidationError);
    }
    SUBCASE("cot without instruction") {
        config.strategies[1].cot_instruction.clear();
        CHECK_THROWS_AS(config.validate(), ValidationError);
    }
    SUBCASE("non-baseline strategies without a baseline") {
        config.strategies.erase(config.strategies.begin());
        CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("baseline"), ValidationError);
    }
    SUBCASE("non-positive global cap") {
        config.max_in_flight_global = 0;
        CHECK_THROWS_AS(config.validate(), ValidationError);
    }
}

TEST_CASE("config files with unknown keys or bad structure are rejected") {
    TempDir tmp("runner");
    const auto bad_key = write_file(tmp.path, "bad.json", "{\"dataset\":\"x\",\"nope\":1}");
    CHECK_THROWS_WITH_AS(load_config(bad_key), doctest::Contains("unknown key"),
                         ValidationError);

    const auto not_json = write_file(tmp.path, "notjson.json", "hello");
    CHECK_THROWS_AS(load_config(not_json), ValidationError);

    CHECK_THROWS_AS(load_config(tmp.path / "missing.json"), ValidationError);
}

TEST_CASE("planning reports the grid arithmetic without side effects") {
    TempDir tmp("runner");
    const ExperimentConfig config = fixture_experiment(tmp.path);
    const GridPlan plan = plan_experiment(config);

    // 1 backend x 3 strategies over the 20-question fixture.
    CHECK(plan.cells == 3);
    CHECK(plan.calls == 60);
    CHECK(plan.calls == plan.cells * static_cast<long long>(
                            load_dataset(config.dataset_path).records.size()));

    // Dry planning never creates output directories.
    CHECK_FALSE(std::filesystem::exists(config.output_dir));
    CHECK_FALSE(std::filesystem::exists(config.cache_dir));
}

TEST_CASE("the fixture experiment runs the full grid deterministically") {
    TempDir tmp("runner");
    const ExperimentConfig config = fixture_experiment(tmp.path);
    const RunManifest manifest = run_experiment(config);

    REQUIRE(manifest.cells.size() == 3);
    CHECK(manifest.question_count == 20);
    CHECK(manifest.run_dir == tmp.path / "runs" / "run-001");

    // Grid order: config backend order x config strategy order.
    CHECK(manifest.cells[0].strategy == "baseline");
    CHECK(manifest.cells[1].strategy == "cot");
    CHECK(manifest.cells[2].strategy == "multi_turn");

    for (const auto& cell : manifest.cells) {
        CHECK(cell.backend == "mockmodel");
        CHECK(cell.questions_run == 20);
        CHECK(cell.transcripts == 20);
        CHECK(cell.failures == 0);
        CHECK(cell.judge_exclusions == 1);  // the scripted malformed judge reply
        CHECK(cell.cache_hits == 0);
        CHECK(cell.requests == cell.backend_calls);
    }
    // baseline/cot: 20 strategy turns + 20 judge calls; multi_turn: 60 + 20.
    CHECK(manifest.cells[0].requests == 40);
    CHECK(manifest.cells[1].requests == 40);
    CHECK(manifest.cells[2].requests == 80);
    CHECK(manifest.total_requests() == 160);

    // Grid completeness: |transcripts| = questions x backends x strategies - failures.
    std::size_t persisted = 0;
    for (const auto& entry :
         std::filesystem::directory_iterator(manifest.run_dir / "transcripts")) {
        persisted += line_count(entry.path());
    }
    CHECK(persisted == 60);

    // Frozen aggregates: the mock fixture scripts 8/12, 10/12, 11/12 matched
    // structured answers and judge scores 3/4/5 with echoes scored 2.
    const auto aggregates = jsonl::read_file(manifest.run_dir / "aggregates.jsonl");
    REQUIRE(aggregates.size() == 3);
    CHECK(aggregates[0].value["strategy"] == "baseline");
    CHECK(aggregates[0].value["structured_matched"] == 8);
    CHECK(aggregates[0].value["acc"].get<double>() == doctest::Approx(8.0 / 12).epsilon(1e-12));
    CHECK(aggregates[0].value["mean_judge_score"].get<double>() ==
          doctest::Approx(50.0 / 19).epsilon(1e-12));
    CHECK(aggregates[1].value["structured_matched"] == 10);
    CHECK(aggregates[1].value["improvement_pct"].get<double>() ==
          doctest::Approx(25.0).epsilon(1e-12));
    CHECK(aggregates[2].value["structured_matched"] == 11);
    CHECK(aggregates[2].value["improvement_pct"].get<double>() ==
          doctest::Approx(37.5).epsilon(1e-12));

    const std::string csv = read_file(manifest.run_dir / "report.csv");
    CHECK(csv.rfind("Model,Method,Accuracy,Score,Improvement\n", 0) == 0);
    CHECK(csv.find("\"mockmodel\",\"Baseline\",\"66.7%\",\"2.6\",\"-\"") != std::string::npos);
    CHECK(csv.find("\"mockmodel\",\"CoT\",\"83.3%\",\"3.3\",\"+25.0%\"") != std::string::npos);
    CHECK(csv.find("\"mockmodel\",\"Multi-Turn Prompt\",\"91.7%\",\"3.9\",\"+37.5%\"") !=
          std::string::npos);

    SUBCASE("a second run is byte-identical and entirely cache-served") {
        const RunManifest warm = run_experiment(config);
        CHECK(warm.run_dir == tmp.path / "runs" / "run-002");
        CHECK(warm.total_cache_hits() == warm.total_requests());
        CHECK(warm.total_backend_calls() == 0);

        const auto files = stable_artifacts(manifest.run_dir);
        CHECK(files == stable_artifacts(warm.run_dir));
        for (const auto& file : files) {
            CAPTURE(file.string());
            CHECK(read_file(manifest.run_dir / file) == read_file(warm.run_dir / file));
        }
    }

    SUBCASE("report --from re-emits byte-identical reports") {
        const auto before_csv = read_file(manifest.run_dir / "report.csv");
        const auto before_table = read_file(manifest.run_dir / "report.txt");
        const auto before_summary = read_file(manifest.run_dir / "summary.txt");
        const auto before_aggregates = read_file(manifest.run_dir / "aggregates.jsonl");

        report_from(manifest.run_dir);
        report_from(manifest.run_dir);

        CHECK(read_file(manifest.run_dir / "report.csv") == before_csv);
        CHECK(read_file(manifest.run_dir / "report.txt") == before_table);
        CHECK(read_file(manifest.run_dir / "summary.txt") == before_summary);
        CHECK(read_file(manifest.run_dir / "aggregates.jsonl") == before_aggregates);
    }
}

TEST_CASE("disabling the cache bypasses reads and writes") {
    TempDir tmp("runner");
    const ExperimentConfig config = fixture_experiment(tmp.path);
    RunOptions options;
    options.use_cache = false;
    const RunManifest manifest = run_experiment(config, options);
    CHECK(manifest.total_cache_hits() == 0);
    CHECK(manifest.total_backend_calls() == manifest.total_requests());
    CHECK_FALSE(std::filesystem::exists(config.cache_dir));
}

TEST_CASE("per-question failures are recorded and the run continues") {
    TempDir tmp("runner");

    write_file(tmp.path, "dataset.jsonl",
               "{\"id\":\"a\",\"text\":\"alpha?\",\"category\":\"safety\",\"kind\":\"structured\","
               "\"expected_answer\":\"alpha\"}\n"
               "{\"id\":\"b\",\"text\":\"beta?\",\"category\":\"safety\",\"kind\":\"unstructured\"}\n"
               "{\"id\":\"c\",\"text\":\"gamma?\",\"category\":\"safety\",\"kind\":\"unstructured\"}\n");
    // Only two of the three questions have rules; the fallback errors out.
    write_file(tmp.path, "partial.jsonl",
               "{\"fallback\":\"error\"}\n"
               "{\"match\":\"exact\",\"pattern\":\"alpha?\",\"response\":\"alpha noted\"}\n"
               "{\"match\":\"exact\",\"pattern\":\"beta?\",\"response\":\"beta noted\"}\n");
    write_file(tmp.path, "judge.jsonl",
               "{\"fallback\":\"echo\"}\n"
               "{\"match\":\"substring\",\"pattern\":\"noted\",\"response\":\"Fine.\\nSCORE: 3\"}\n");

    ExperimentConfig config;
    config.dataset_path = tmp.path / "dataset.jsonl";
    config.backends = {mock_spec("partial", tmp.path / "partial.jsonl")};
    StrategyConfig baseline;
    baseline.kind = StrategyKind::baseline;
    config.strategies = {baseline};
    config.judge.backend = mock_spec("judge", tmp.path / "judge.jsonl");
    config.cache_dir = tmp.path / "cache";
    config.output_dir = tmp.path / "runs";

    const RunManifest manifest = run_experiment(config);
    REQUIRE(manifest.cells.size() == 1);
    CHECK(manifest.cells[0].questions_run == 3);
    CHECK(manifest.cells[0].transcripts == 2);  // question c failed
    CHECK(manifest.cells[0].failures == 1);

    const auto failures = jsonl::read_file(manifest.run_dir / "failures" /
                                           "partial__baseline.jsonl");
    REQUIRE(failures.size() == 1);
    CHECK(failures[0].value["question_id"] == "c");
    CHECK(failures[0].value["stage"] == "baseline");

    // Grid completeness holds with the failure subtracted.
    CHECK(manifest.cells[0].transcripts ==
          manifest.cells[0].questions_run - manifest.cells[0].failures);

    // The failed question never reaches the judge or the matcher.
    CHECK(line_count(manifest.run_dir / "scores" / "partial__baseline.jsonl") == 2);
    CHECK(line_count(manifest.run_dir / "judgments" / "partial__baseline.jsonl") == 1);
}

TEST_CASE("reports render the published results-table layout") {
    // Rows seeded from the published raw values, improvement recomputed.
    std::vector<CellInputs> cells;
    struct Seed {
        const char* model;
        StrategyKind kind;
        int matched;
    };
    const Seed seeds[] = {
        {"ChatGPT", StrategyKind::baseline, 72},  {"ChatGPT", StrategyKind::cot, 78},
        {"ChatGPT", StrategyKind::multi_turn, 85}, {"Claude2", StrategyKind::baseline, 74},
        {"Claude2", StrategyKind::cot, 80},        {"Claude2", StrategyKind::multi_turn, 87},
        {"GPT-4", StrategyKind::baseline, 78},     {"GPT-4", StrategyKind::cot, 83},
        {"GPT-4", StrategyKind::multi_turn, 90},
    };
    for (const auto& seed : seeds) {
        CellInputs cell;
        cell.backend_name = seed.model;
        cell.strategy = seed.kind;
        for (int i = 0; i < 100; ++i) {
            AccJudgment j;
            j.question_id = "q" + std::to_string(i);
            j.matched = i < seed.matched;
            j.expected = "e";
            cell.judgments.push_back(std::move(j));
        }
        cells.push_back(std::move(cell));
    }

    const auto aggregates = aggregate(cells);
    const std::vector<std::string> order = {"ChatGPT", "Claude2", "GPT-4"};
    const std::string csv = render_csv(aggregates, order);

    const std::vector<std::string> expected_rows = {
        "\"ChatGPT\",\"Baseline\",\"72.0%\",\"-\",\"-\"",
        "\"ChatGPT\",\"CoT\",\"78.0%\",\"-\",\"+8.3%\"",
        "\"ChatGPT\",\"Multi-Turn Prompt\",\"85.0%\",\"-\",\"+18.1%\"",
        "\"Claude2\",\"Baseline\",\"74.0%\",\"-\",\"-\"",
        "\"Claude2\",\"CoT\",\"80.0%\",\"-\",\"+8.1%\"",
        "\"Claude2\",\"Multi-Turn Prompt\",\"87.0%\",\"-\",\"+17.6%\"",
        "\"GPT-4\",\"Baseline\",\"78.0%\",\"-\",\"-\"",
        "\"GPT-4\",\"CoT\",\"83.0%\",\"-\",\"+6.4%\"",
        "\"GPT-4\",\"Multi-Turn Prompt\",\"90.0%\",\"-\",\"+15.4%\"",
    };
    std::size_t cursor = 0;
    for (const auto& row : expected_rows) {
        const auto where = csv.find(row, cursor);
        CAPTURE(row);
        REQUIRE(where != std::string::npos);  // present and in order
        cursor = where;
    }

    const std::string table = render_table(aggregates, order);
    CHECK(table.find("+18.1%") != std::string::npos);
    CHECK(table.find("Multi-Turn Prompt") != std::string::npos);
}

TEST_CASE("a baseline-only aggregate renders a single dash row") {
    CellInputs cell;
    cell.backend_name = "solo";
    cell.strategy = StrategyKind::baseline;
    AccJudgment j;
    j.question_id = "q";
    j.matched = true;
    cell.judgments.push_back(j);

    const auto rows = aggregate({cell});
    const std::string csv = render_csv(rows, {"solo"});
    CHECK(csv == "Model,Method,Accuracy,Score,Improvement\n"
                 "\"solo\",\"Baseline\",\"100.0%\",\"-\",\"-\"\n");
}
