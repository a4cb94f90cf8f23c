#include "mineqa/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mineqa/digest.hpp"
#include "mineqa/errors.hpp"

namespace mineqa {

namespace {

using Json = jsonl::Json;

void reject_unknown_keys(const Json& obj, const std::set<std::string>& known,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.count(it.key())) {
            throw ValidationError(where + ": unknown key \"" + it.key() + "\"");
        }
    }
}

std::string get_string(const Json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        throw ValidationError(where + ": key \"" + key + "\" must be a string");
    }
    return it->get<std::string>();
}

std::string get_string_or(const Json& obj, const char* key, const std::string& fallback) {
    auto it = obj.find(key);
    return it != obj.end() && it->is_string() ? it->get<std::string>() : fallback;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

RetryPolicy parse_retry(const Json& obj, const std::string& where) {
    RetryPolicy retry;
    reject_unknown_keys(obj, {"max_attempts", "base_delay_ms", "max_delay_ms"}, where);
    if (obj.contains("max_attempts")) retry.max_attempts = obj["max_attempts"].get<int>();
    if (obj.contains("base_delay_ms")) {
        retry.base_delay = std::chrono::milliseconds(obj["base_delay_ms"].get<long long>());
    }
    if (obj.contains("max_delay_ms")) {
        retry.max_delay = std::chrono::milliseconds(obj["max_delay_ms"].get<long long>());
    }
    return retry;
}

BackendSpec parse_backend(const Json& obj, const std::filesystem::path& base,
                          const std::string& where) {
    if (!obj.is_object()) {
        throw ValidationError(where + ": backend must be an object");
    }
    reject_unknown_keys(obj,
                        {"name", "kind", "model_id", "endpoint", "credential_env",
                         "max_in_flight", "retry", "fixture"},
                        where);
    BackendSpec spec;
    spec.name = get_string(obj, "name", where);
    const std::string kind = get_string(obj, "kind", where);
    if (kind == "http") {
        spec.kind = BackendKind::http;
    } else if (kind == "mock") {
        spec.kind = BackendKind::mock;
    } else {
        throw ValidationError(where + ": unknown backend kind \"" + kind + "\"");
    }
    spec.model_id = get_string_or(obj, "model_id", spec.name);
    spec.endpoint = get_string_or(obj, "endpoint", "");
    spec.credential_env = get_string_or(obj, "credential_env", "");
    if (obj.contains("max_in_flight")) spec.max_in_flight = obj["max_in_flight"].get<int>();
    if (obj.contains("retry")) spec.retry = parse_retry(obj["retry"], where + ".retry");
    if (obj.contains("fixture")) spec.fixture_path = resolve(base, get_string(obj, "fixture", where));
    try {
        spec.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
    }
    return spec;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (backends.empty()) {
        throw ValidationError("config: at least one backend is required");
    }
    if (strategies.empty()) {
        throw ValidationError("config: at least one strategy is required");
    }
    std::set<std::string> names;
    for (const auto& backend : backends) {
        backend.validate();
        if (!names.insert(backend.name).second) {
            throw ValidationError("config: duplicate backend name \"" + backend.name + "\"");
        }
    }
    std::set<int> kinds;
    bool has_baseline = false;
    for (const auto& strategy : strategies) {
        if (!kinds.insert(static_cast<int>(strategy.kind)).second) {
            throw ValidationError("config: duplicate strategy kind \"" +
                                  to_string(strategy.kind) + "\"");
        }
        if (strategy.kind == StrategyKind::baseline) has_baseline = true;
        if (strategy.kind == StrategyKind::cot && strategy.cot_instruction.empty()) {
            throw ValidationError("config: cot strategy needs a cot_instruction");
        }
    }
    const bool has_non_baseline =
        kinds.count(static_cast<int>(StrategyKind::cot)) ||
        kinds.count(static_cast<int>(StrategyKind::multi_turn));
    if (has_non_baseline && !has_baseline) {
        throw ValidationError(
            "config: non-baseline strategies require a baseline strategy for the improvement "
            "column");
    }
    judge.backend.validate();
    if (max_in_flight_global <= 0) {
        throw ValidationError("config: max_in_flight_global must be positive");
    }
    if (dataset_path.empty()) {
        throw ValidationError("config: dataset path is required");
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open config " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    Json doc = Json::parse(buffer.str(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw ValidationError(path.string() + ": config must be a JSON object");
    }

    const std::string where = path.string();
    reject_unknown_keys(doc,
                        {"dataset", "backends", "strategies", "judge", "cache_dir", "output_dir",
                         "max_in_flight_global", "run_seed", "system_preamble", "temperature",
                         "max_tokens"},
                        where);

    const auto base = std::filesystem::absolute(path).parent_path();
    ExperimentConfig config;
    config.dataset_path = resolve(base, get_string(doc, "dataset", where));

    auto backends = doc.find("backends");
    if (backends == doc.end() || !backends->is_array() || backends->empty()) {
        throw ValidationError(where + ": \"backends\" must be a non-empty array");
    }
    for (std::size_t i = 0; i < backends->size(); ++i) {
        config.backends.push_back(
            parse_backend((*backends)[i], base, where + ": backends[" + std::to_string(i) + "]"));
    }

    auto strategies = doc.find("strategies");
    if (strategies == doc.end() || !strategies->is_array() || strategies->empty()) {
        throw ValidationError(where + ": \"strategies\" must be a non-empty array");
    }
    for (std::size_t i = 0; i < strategies->size(); ++i) {
        const auto& obj = (*strategies)[i];
        const std::string swhere = where + ": strategies[" + std::to_string(i) + "]";
        if (!obj.is_object()) {
            throw ValidationError(swhere + ": strategy must be an object");
        }
        reject_unknown_keys(obj, {"kind", "cot_instruction", "template_pack"}, swhere);
        StrategyConfig strategy;
        try {
            strategy.kind = strategy_kind_from_string(get_string(obj, "kind", swhere));
        } catch (const ValidationError& e) {
            throw ValidationError(swhere + ": " + e.what());
        }
        strategy.cot_instruction = get_string_or(obj, "cot_instruction", "");
        if (obj.contains("template_pack")) {
            strategy.template_pack = resolve(base, get_string(obj, "template_pack", swhere));
        }
        config.strategies.push_back(std::move(strategy));
    }

    auto judge = doc.find("judge");
    if (judge == doc.end() || !judge->is_object()) {
        throw ValidationError(where + ": \"judge\" must be an object");
    }
    reject_unknown_keys(*judge, {"backend", "prompt_template", "rubric"}, where + ".judge");
    if (!judge->contains("backend")) {
        throw ValidationError(where + ": judge needs a \"backend\"");
    }
    config.judge.backend = parse_backend((*judge)["backend"], base, where + ".judge.backend");
    if (judge->contains("prompt_template")) {
        config.judge.prompt_template_path =
            resolve(base, get_string(*judge, "prompt_template", where + ".judge"));
    }
    if (judge->contains("rubric")) {
        config.judge.rubric_path = resolve(base, get_string(*judge, "rubric", where + ".judge"));
    }

    // Input paths resolve against the config file; output paths (cache and
    // run directories) resolve against the working directory.
    config.cache_dir = std::filesystem::absolute(get_string_or(doc, "cache_dir", "mineqa-cache"));
    config.output_dir = std::filesystem::absolute(get_string_or(doc, "output_dir", "runs"));
    if (doc.contains("max_in_flight_global")) {
        config.max_in_flight_global = doc["max_in_flight_global"].get<int>();
    }
    if (doc.contains("run_seed")) config.run_seed = doc["run_seed"].get<long long>();
    if (doc.contains("system_preamble")) {
        config.system_preamble = get_string(doc, "system_preamble", where);
    }
    if (doc.contains("temperature")) config.temperature = doc["temperature"].get<double>();
    if (doc.contains("max_tokens")) config.max_tokens = doc["max_tokens"].get<int>();
    config.source_path = path;

    config.validate();
    return config;
}

std::string config_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open config " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return sha256_hex(buffer.str());
}

}  // namespace mineqa
