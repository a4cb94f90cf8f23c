#include "mineqa/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

#include "mineqa/errors.hpp"
#include "mineqa/report.hpp"

namespace mineqa {

namespace {

using Json = jsonl::Json;

std::string utc_now_iso() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string sanitize(const std::string& name) {
    std::string out;
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
        out.push_back(ok ? c : '_');
    }
    return out;
}

std::string cell_stem(const BackendSpec& backend, StrategyKind kind) {
    return sanitize(backend.name) + "__" + to_string(kind);
}

std::filesystem::path next_run_dir(const std::filesystem::path& output_dir) {
    std::error_code ec;
    std::filesystem::create_directories(output_dir, ec);
    if (ec) {
        throw ValidationError("cannot create output directory " + output_dir.string() + ": " +
                              ec.message());
    }
    int highest = 0;
    for (const auto& entry : std::filesystem::directory_iterator(output_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("run-", 0) == 0) {
            highest = std::max(highest, std::atoi(name.c_str() + 4));
        }
    }
    char buf[16];
    std::snprintf(buf, sizeof(buf), "run-%03d", highest + 1);
    return output_dir / buf;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ValidationError("cannot write " + path.string());
    }
    out << content;
    if (!out) {
        throw ValidationError("write failed for " + path.string());
    }
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

Json judgment_to_json(const AccJudgment& j) {
    Json obj;
    obj["question_id"] = j.question_id;
    obj["predicted"] = j.predicted;
    obj["expected"] = j.expected;
    obj["matched"] = j.matched;
    if (j.matched_alias) obj["matched_alias"] = *j.matched_alias;
    return obj;
}

AccJudgment judgment_from_json(const Json& obj, const std::string& where) {
    try {
        AccJudgment j;
        j.question_id = obj.at("question_id").get<std::string>();
        j.predicted = obj.at("predicted").get<std::string>();
        j.expected = obj.at("expected").get<std::string>();
        j.matched = obj.at("matched").get<bool>();
        if (obj.contains("matched_alias")) {
            j.matched_alias = obj["matched_alias"].get<std::string>();
        }
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(where + ": malformed judgment: " + e.what());
    }
}

Json score_to_json(const JudgeScore& s) {
    return Json{{"question_id", s.question_id}, {"score", s.score}, {"rationale", s.rationale}};
}

JudgeScore score_from_json(const Json& obj, const std::string& where) {
    try {
        return {obj.at("question_id").get<std::string>(), obj.at("score").get<int>(),
                obj.at("rationale").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(where + ": malformed score: " + e.what());
    }
}

Json aggregate_to_json(const CellAggregate& row) {
    Json obj;
    obj["backend"] = row.backend_name;
    obj["strategy"] = to_string(row.strategy);
    obj["structured_total"] = row.structured_total;
    obj["structured_matched"] = row.structured_matched;
    obj["judged"] = row.judged;
    obj["judge_exclusions"] = row.judge_exclusions;
    obj["acc"] = row.acc ? Json(*row.acc) : Json(nullptr);
    obj["mean_judge_score"] = row.mean_judge_score ? Json(*row.mean_judge_score) : Json(nullptr);
    obj["improvement_pct"] = row.improvement_pct ? Json(*row.improvement_pct) : Json(nullptr);
    return obj;
}

// Everything one cell's worker produces, written out post-join.
struct CellOutcome {
    std::vector<Transcript> transcripts;
    std::vector<AccJudgment> judgments;
    std::vector<JudgeScore> scores;
    std::vector<Json> exclusions;  // {question_id, error}
    std::vector<Json> failures;    // {question_id, stage, error}
    long long requests = 0;
    long long cache_hits = 0;
    long long backend_calls = 0;
};

struct ResolvedStrategy {
    StrategyConfig config;
    std::map<QuestionCategory, Strategy> by_category;
};

ResolvedStrategy resolve_strategy(const StrategyConfig& config) {
    ResolvedStrategy resolved;
    resolved.config = config;

    static const QuestionCategory categories[] = {
        QuestionCategory::safety, QuestionCategory::environmental,
        QuestionCategory::operational};

    switch (config.kind) {
        case StrategyKind::baseline: {
            Strategy strategy;
            strategy.kind = StrategyKind::baseline;
            for (auto c : categories) resolved.by_category[c] = strategy;
            break;
        }
        case StrategyKind::cot: {
            Strategy strategy;
            strategy.kind = StrategyKind::cot;
            strategy.cot_instruction = config.cot_instruction;
            strategy.validate();
            for (auto c : categories) resolved.by_category[c] = strategy;
            break;
        }
        case StrategyKind::multi_turn: {
            const TemplatePack pack = config.template_pack
                                          ? TemplatePack::load(*config.template_pack)
                                          : TemplatePack::builtin_default();
            for (auto c : categories) {
                Strategy strategy;
                strategy.kind = StrategyKind::multi_turn;
                strategy.templates = pack.templates_for(c);
                strategy.validate();
                resolved.by_category[c] = strategy;
            }
            break;
        }
    }
    return resolved;
}

struct JudgeSetup {
    JudgeRubric rubric;
    std::string prompt_template;
};

JudgeSetup load_judge_setup(const JudgeConfig& config) {
    JudgeSetup setup;
    setup.rubric = config.rubric_path ? load_rubric(*config.rubric_path) : default_rubric();
    setup.prompt_template = config.prompt_template_path
                                ? read_text(*config.prompt_template_path)
                                : default_judge_prompt_template();
    if (setup.prompt_template.empty()) {
        throw ValidationError("judge prompt template is empty");
    }
    return setup;
}

CellOutcome run_cell(const Dataset& dataset, const ResolvedStrategy& strategy,
                     BackendHandle& backend, BackendHandle& judge, const ResponseCache* cache,
                     const RequestDefaults& defaults, const JudgeSetup& judge_setup) {
    CellOutcome outcome;
    CompletionClient strategy_client(backend, cache);
    CompletionClient judge_client(judge, cache);

    for (const auto& question : dataset.records) {
        Transcript transcript;
        try {
            transcript = run_strategy(question, strategy.by_category.at(question.category),
                                      strategy_client, defaults);
        } catch (const PipelineError& e) {
            outcome.failures.push_back(
                {{"question_id", question.id}, {"stage", e.stage}, {"error", e.what()}});
            continue;
        }

        if (question.kind == QuestionKind::structured) {
            AccJudgment judgment = match_structured(transcript.final_answer,
                                                    *question.expected_answer, question.aliases);
            judgment.question_id = question.id;
            outcome.judgments.push_back(std::move(judgment));
        }

        try {
            outcome.scores.push_back(score_open_ended(judge_client, question,
                                                      transcript.final_answer,
                                                      judge_setup.rubric,
                                                      judge_setup.prompt_template, defaults));
        } catch (const ScoringError& e) {
            outcome.exclusions.push_back({{"question_id", question.id}, {"error", e.what()}});
        } catch (const BackendError& e) {
            outcome.failures.push_back(
                {{"question_id", question.id}, {"stage", "judge"}, {"error", e.what()}});
        }

        outcome.transcripts.push_back(std::move(transcript));
    }

    outcome.requests = strategy_client.requests() + judge_client.requests();
    outcome.cache_hits = strategy_client.cache_hits() + judge_client.cache_hits();
    outcome.backend_calls = strategy_client.backend_calls() + judge_client.backend_calls();
    return outcome;
}

Json manifest_to_json(const RunManifest& manifest) {
    Json doc;
    doc["config_digest"] = manifest.config_digest;
    doc["run_seed"] = manifest.run_seed;
    doc["started"] = manifest.started;
    doc["finished"] = manifest.finished;
    doc["dataset"] = {{"path", manifest.dataset_path}, {"questions", manifest.question_count}};
    Json cells = Json::array();
    for (const auto& cell : manifest.cells) {
        const std::string stem = sanitize(cell.backend) + "__" + cell.strategy;
        cells.push_back({{"backend", cell.backend},
                         {"strategy", cell.strategy},
                         {"questions_run", cell.questions_run},
                         {"transcripts", cell.transcripts},
                         {"requests", cell.requests},
                         {"cache_hits", cell.cache_hits},
                         {"backend_calls", cell.backend_calls},
                         {"failures", cell.failures},
                         {"judge_exclusions", cell.judge_exclusions},
                         {"artifacts",
                          {{"transcripts", "transcripts/" + stem + ".jsonl"},
                           {"judgments", "judgments/" + stem + ".jsonl"},
                           {"scores", "scores/" + stem + ".jsonl"},
                           {"exclusions", "exclusions/" + stem + ".jsonl"},
                           {"failures", "failures/" + stem + ".jsonl"}}}});
    }
    doc["cells"] = std::move(cells);
    doc["reports"] = {{"csv", "report.csv"},
                      {"table", "report.txt"},
                      {"summary", "summary.txt"},
                      {"aggregates", "aggregates.jsonl"}};
    return doc;
}

std::string render_summary(const RunManifest& manifest,
                           const std::vector<CellAggregate>& aggregates) {
    std::ostringstream out;
    const std::size_t backend_count =
        [&] {
            std::vector<std::string> names;
            for (const auto& cell : manifest.cells) {
                if (std::find(names.begin(), names.end(), cell.backend) == names.end()) {
                    names.push_back(cell.backend);
                }
            }
            return names.size();
        }();
    const std::size_t strategy_count =
        backend_count == 0 ? 0 : manifest.cells.size() / backend_count;

    out << "experiment summary\n";
    out << "dataset: " << manifest.dataset_path << " (" << manifest.question_count
        << " questions)\n";
    out << "grid: " << backend_count << " backends x " << strategy_count << " strategies = "
        << manifest.cells.size() << " cells (" << manifest.question_count *
        static_cast<long long>(manifest.cells.size()) << " planned transcripts)\n\n";

    for (const auto& cell : manifest.cells) {
        const CellAggregate* row = nullptr;
        for (const auto& agg : aggregates) {
            if (agg.backend_name == cell.backend && to_string(agg.strategy) == cell.strategy) {
                row = &agg;
            }
        }
        out << "cell " << cell.backend << "/" << cell.strategy << ": transcripts "
            << cell.transcripts << ", failures " << cell.failures;
        if (row) {
            out << ", structured " << row->structured_total << ", matched "
                << row->structured_matched << ", judged " << row->judged << ", exclusions "
                << row->judge_exclusions;
        }
        out << "\n";
    }
    return out.str();
}

void emit_outputs(const std::filesystem::path& run_dir, const RunManifest& manifest,
                  const std::vector<CellInputs>& inputs,
                  const std::vector<std::string>& backend_order) {
    const std::vector<CellAggregate> aggregates = aggregate(inputs);

    std::vector<Json> aggregate_lines;
    for (const auto& row : order_rows(aggregates, backend_order)) {
        aggregate_lines.push_back(aggregate_to_json(row));
    }
    jsonl::write_file(run_dir / "aggregates.jsonl", aggregate_lines);
    write_text(run_dir / "report.csv", render_csv(aggregates, backend_order));
    write_text(run_dir / "report.txt", render_table(aggregates, backend_order));
    write_text(run_dir / "summary.txt", render_summary(manifest, aggregates));
}

}  // namespace

long long RunManifest::total_requests() const {
    long long total = 0;
    for (const auto& cell : cells) total += cell.requests;
    return total;
}

long long RunManifest::total_cache_hits() const {
    long long total = 0;
    for (const auto& cell : cells) total += cell.cache_hits;
    return total;
}

long long RunManifest::total_backend_calls() const {
    long long total = 0;
    for (const auto& cell : cells) total += cell.backend_calls;
    return total;
}

GridPlan plan_experiment(const ExperimentConfig& config) {
    config.validate();
    const Dataset dataset = load_dataset(config.dataset_path);

    // Resolving strategies and the judge setup surfaces template and rubric
    // problems before any backend call.
    for (const auto& strategy : config.strategies) {
        resolve_strategy(strategy);
    }
    load_judge_setup(config.judge);
    for (const auto& backend : config.backends) {
        if (backend.kind == BackendKind::mock) {
            load_mock_fixture(backend.fixture_path);
        }
    }
    if (config.judge.backend.kind == BackendKind::mock) {
        load_mock_fixture(config.judge.backend.fixture_path);
    }

    GridPlan plan;
    plan.cells = static_cast<long long>(config.backends.size()) *
                 static_cast<long long>(config.strategies.size());
    plan.calls = plan.cells * static_cast<long long>(dataset.records.size());
    return plan;
}

RunManifest run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    const Dataset dataset = load_dataset(config.dataset_path);
    const JudgeSetup judge_setup = load_judge_setup(config.judge);

    std::vector<ResolvedStrategy> strategies;
    for (const auto& strategy : config.strategies) {
        strategies.push_back(resolve_strategy(strategy));
    }

    RequestDefaults defaults;
    defaults.system_preamble = config.system_preamble;
    defaults.temperature = config.temperature;
    defaults.max_tokens = config.max_tokens;
    defaults.seed = config.run_seed;

    // Handles are built before the run directory exists, so fixture problems
    // abort with no side effects.
    auto global_limit =
        std::make_shared<std::counting_semaphore<>>(config.max_in_flight_global);
    std::vector<std::unique_ptr<BackendHandle>> backends;
    for (const auto& spec : config.backends) {
        backends.push_back(std::make_unique<BackendHandle>(spec));
        backends.back()->set_global_limiter(global_limit);
    }
    BackendHandle judge(config.judge.backend);
    judge.set_global_limiter(global_limit);

    std::optional<ResponseCache> cache;
    if (options.use_cache) {
        cache.emplace(config.cache_dir);
    }

    RunManifest manifest;
    manifest.config_digest =
        config.source_path.empty() ? "unversioned" : config_digest(config.source_path);
    manifest.run_seed = config.run_seed;
    manifest.started = utc_now_iso();
    manifest.dataset_path = dataset.source_path;
    manifest.question_count = static_cast<long long>(dataset.records.size());

    const std::filesystem::path run_dir = next_run_dir(config.output_dir);
    for (const char* sub : {"", "transcripts", "judgments", "scores", "exclusions", "failures"}) {
        std::filesystem::create_directories(run_dir / sub);
    }
    manifest.run_dir = run_dir;

    // One worker per grid cell; the semaphores bound actual concurrency.
    std::vector<std::future<CellOutcome>> futures;
    for (std::size_t bi = 0; bi < config.backends.size(); ++bi) {
        for (std::size_t si = 0; si < strategies.size(); ++si) {
            futures.push_back(std::async(std::launch::async, [&, bi, si] {
                return run_cell(dataset, strategies[si], *backends[bi], judge,
                                cache ? &*cache : nullptr, defaults, judge_setup);
            }));
        }
    }

    std::vector<CellInputs> inputs;
    std::vector<std::string> backend_order;
    std::size_t cell_index = 0;
    for (std::size_t bi = 0; bi < config.backends.size(); ++bi) {
        backend_order.push_back(config.backends[bi].name);
        for (std::size_t si = 0; si < strategies.size(); ++si, ++cell_index) {
            CellOutcome outcome = futures[cell_index].get();
            const auto& spec = config.backends[bi];
            const StrategyKind kind = strategies[si].config.kind;
            const std::string stem = cell_stem(spec, kind);

            std::vector<Json> transcript_lines;
            for (const auto& t : outcome.transcripts) {
                transcript_lines.push_back(transcript_to_json(t));
            }
            jsonl::write_file(run_dir / "transcripts" / (stem + ".jsonl"), transcript_lines);

            std::vector<Json> judgment_lines;
            for (const auto& j : outcome.judgments) judgment_lines.push_back(judgment_to_json(j));
            jsonl::write_file(run_dir / "judgments" / (stem + ".jsonl"), judgment_lines);

            std::vector<Json> score_lines;
            for (const auto& s : outcome.scores) score_lines.push_back(score_to_json(s));
            jsonl::write_file(run_dir / "scores" / (stem + ".jsonl"), score_lines);

            jsonl::write_file(run_dir / "exclusions" / (stem + ".jsonl"), outcome.exclusions);
            jsonl::write_file(run_dir / "failures" / (stem + ".jsonl"), outcome.failures);

            CellCounts counts;
            counts.backend = spec.name;
            counts.strategy = to_string(kind);
            counts.questions_run = static_cast<long long>(dataset.records.size());
            counts.transcripts = static_cast<long long>(outcome.transcripts.size());
            counts.requests = outcome.requests;
            counts.cache_hits = outcome.cache_hits;
            counts.backend_calls = outcome.backend_calls;
            counts.failures = static_cast<long long>(outcome.failures.size());
            counts.judge_exclusions = static_cast<long long>(outcome.exclusions.size());
            manifest.cells.push_back(counts);

            CellInputs cell_inputs;
            cell_inputs.backend_name = spec.name;
            cell_inputs.strategy = kind;
            cell_inputs.judgments = std::move(outcome.judgments);
            cell_inputs.scores = std::move(outcome.scores);
            cell_inputs.judge_exclusions = static_cast<long long>(outcome.exclusions.size());
            inputs.push_back(std::move(cell_inputs));

            std::cerr << "cell " << spec.name << "/" << to_string(kind) << ": transcripts "
                      << counts.transcripts << ", failures " << counts.failures << ", hits "
                      << counts.cache_hits << ", calls " << counts.backend_calls << "\n";
        }
    }

    emit_outputs(run_dir, manifest, inputs, backend_order);
    manifest.finished = utc_now_iso();
    write_text(run_dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
    return manifest;
}

RunManifest load_manifest(const std::filesystem::path& run_dir) {
    const auto path = run_dir / "manifest.json";
    Json doc = Json::parse(read_text(path), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw ValidationError(path.string() + ": manifest is not a JSON object");
    }
    try {
        RunManifest manifest;
        manifest.config_digest = doc.at("config_digest").get<std::string>();
        manifest.run_seed = doc.at("run_seed").get<long long>();
        manifest.started = doc.at("started").get<std::string>();
        manifest.finished = doc.at("finished").get<std::string>();
        manifest.dataset_path = doc.at("dataset").at("path").get<std::string>();
        manifest.question_count = doc.at("dataset").at("questions").get<long long>();
        for (const auto& cell : doc.at("cells")) {
            CellCounts counts;
            counts.backend = cell.at("backend").get<std::string>();
            counts.strategy = cell.at("strategy").get<std::string>();
            counts.questions_run = cell.at("questions_run").get<long long>();
            counts.transcripts = cell.at("transcripts").get<long long>();
            counts.requests = cell.at("requests").get<long long>();
            counts.cache_hits = cell.at("cache_hits").get<long long>();
            counts.backend_calls = cell.at("backend_calls").get<long long>();
            counts.failures = cell.at("failures").get<long long>();
            counts.judge_exclusions = cell.at("judge_exclusions").get<long long>();
            manifest.cells.push_back(std::move(counts));
        }
        manifest.run_dir = run_dir;
        return manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": malformed manifest: " + e.what());
    }
}

void report_from(const std::filesystem::path& run_dir) {
    const RunManifest manifest = load_manifest(run_dir);

    std::vector<CellInputs> inputs;
    std::vector<std::string> backend_order;
    for (const auto& cell : manifest.cells) {
        if (std::find(backend_order.begin(), backend_order.end(), cell.backend) ==
            backend_order.end()) {
            backend_order.push_back(cell.backend);
        }
        const std::string stem = sanitize(cell.backend) + "__" + cell.strategy;

        CellInputs cell_inputs;
        cell_inputs.backend_name = cell.backend;
        cell_inputs.strategy = strategy_kind_from_string(cell.strategy);
        cell_inputs.judge_exclusions = cell.judge_exclusions;
        const auto judgments_path = run_dir / "judgments" / (stem + ".jsonl");
        for (const auto& line : jsonl::read_file(judgments_path)) {
            cell_inputs.judgments.push_back(judgment_from_json(
                line.value, judgments_path.string() + ":" + std::to_string(line.number)));
        }
        const auto scores_path = run_dir / "scores" / (stem + ".jsonl");
        for (const auto& line : jsonl::read_file(scores_path)) {
            cell_inputs.scores.push_back(score_from_json(
                line.value, scores_path.string() + ":" + std::to_string(line.number)));
        }
        inputs.push_back(std::move(cell_inputs));
    }

    emit_outputs(run_dir, manifest, inputs, backend_order);
}

}  // namespace mineqa
