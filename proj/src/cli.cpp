#include "mineqa/cli.hpp"

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mineqa/dataset.hpp"
#include "mineqa/errors.hpp"
#include "mineqa/runner.hpp"

namespace mineqa {

namespace {

int cmd_validate(const std::string& dataset_path) {
    const Dataset dataset = load_dataset(dataset_path);
    long long structured = 0;
    for (const auto& record : dataset.records) {
        if (record.kind == QuestionKind::structured) ++structured;
    }
    std::cout << "ok: " << dataset.records.size() << " records (" << structured
              << " structured, " << dataset.records.size() - structured << " unstructured)\n";
    return 0;
}

int cmd_run(const std::string& config_path, bool dry_run, bool no_cache) {
    // Configuration problems (bad config, dataset, templates, fixtures)
    // surface here and exit 1, before any backend call.
    const ExperimentConfig config = load_config(config_path);
    const GridPlan plan = plan_experiment(config);
    if (dry_run) {
        std::cout << plan.cells << " cells, " << plan.calls << " calls planned\n";
        return 0;
    }

    RunOptions options;
    options.use_cache = !no_cache;
    try {
        const RunManifest manifest = run_experiment(config, options);
        std::cout << "run_dir: " << manifest.run_dir.string() << "\n";
        std::cout << "requests: " << manifest.total_requests() << " (cache hits "
                  << manifest.total_cache_hits() << ", backend calls "
                  << manifest.total_backend_calls() << ")\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

int cmd_report(const std::string& run_dir) {
    report_from(run_dir);
    std::cout << "reports re-emitted under " << run_dir << "\n";
    return 0;
}

int cmd_verify_table1() {
    const auto checks = verify_table1_checks(table1_fixture());
    bool all_ok = true;
    for (const auto& check : checks) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-8s  %-18s  computed %-8s  published %-8s  %s",
                      check.model.c_str(), check.method.c_str(), check.computed.c_str(),
                      check.published.c_str(), check.ok ? "OK" : "MISMATCH");
        std::cout << line << "\n";
        all_ok = all_ok && check.ok;
    }
    std::cout << "verify-table1: " << (all_ok ? "all" : "NOT all") << " " << checks.size()
              << " improvement values reproduced\n";
    return all_ok ? 0 : 2;
}

}  // namespace

int cli_dispatch(int argc, char** argv) {
    CLI::App app{"Batch harness for mining-domain QA experiments against chat-completion "
                 "backends"};
    app.require_subcommand(1);

    std::string dataset_path;
    auto* validate = app.add_subcommand("validate", "Check a dataset file against the schema");
    validate->add_option("dataset", dataset_path, "line-delimited dataset file")->required();

    std::string config_path;
    bool dry_run = false;
    bool no_cache = false;
    auto* run = app.add_subcommand("run", "Execute the configured experiment grid");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_flag("--dry-run", dry_run, "plan the grid without any backend call");
    run->add_flag("--no-cache", no_cache, "bypass the response cache");

    std::string run_dir;
    auto* report = app.add_subcommand("report", "Re-emit reports from a persisted run");
    report->add_option("--from", run_dir, "run directory")->required();

    auto* verify =
        app.add_subcommand("verify-table1", "Recompute the published improvement column");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // CLI11 prints usage/help itself; --help exits with success.
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (validate->parsed()) return cmd_validate(dataset_path);
        if (run->parsed()) return cmd_run(config_path, dry_run, no_cache);
        if (report->parsed()) return cmd_report(run_dir);
        if (verify->parsed()) return cmd_verify_table1();
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace mineqa
