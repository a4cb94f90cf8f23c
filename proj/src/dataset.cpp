#include "mineqa/dataset.hpp"

#include <algorithm>
#include <unordered_map>

#include "mineqa/errors.hpp"

namespace mineqa {

namespace {

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string require_string(const jsonl::Json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        throw ValidationError(where + ": field \"" + key + "\" must be a string");
    }
    return it->get<std::string>();
}

std::vector<std::string> optional_string_array(const jsonl::Json& obj, const char* key,
                                               const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) return {};
    if (!it->is_array()) {
        throw ValidationError(where + ": field \"" + key + "\" must be an array of strings");
    }
    std::vector<std::string> out;
    for (const auto& v : *it) {
        if (!v.is_string()) {
            throw ValidationError(where + ": field \"" + key + "\" must be an array of strings");
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

}  // namespace

std::string to_string(QuestionCategory c) {
    switch (c) {
        case QuestionCategory::safety: return "safety";
        case QuestionCategory::environmental: return "environmental";
        case QuestionCategory::operational: return "operational";
    }
    return "?";
}

std::string to_string(QuestionKind k) {
    return k == QuestionKind::structured ? "structured" : "unstructured";
}

QuestionCategory category_from_string(const std::string& s) {
    if (s == "safety") return QuestionCategory::safety;
    if (s == "environmental") return QuestionCategory::environmental;
    if (s == "operational") return QuestionCategory::operational;
    throw ValidationError("unknown category \"" + s +
                          "\" (expected safety, environmental, or operational)");
}

QuestionKind kind_from_string(const std::string& s) {
    if (s == "structured") return QuestionKind::structured;
    if (s == "unstructured") return QuestionKind::unstructured;
    throw ValidationError("unknown kind \"" + s + "\" (expected structured or unstructured)");
}

void validate_record(const QuestionRecord& record, const std::string& where) {
    if (record.id.empty()) {
        throw ValidationError(where + ": id is empty");
    }
    if (is_blank(record.text)) {
        throw ValidationError(where + ": record \"" + record.id +
                              "\" has empty question text");
    }
    if (record.kind == QuestionKind::structured) {
        if (!record.expected_answer || is_blank(*record.expected_answer)) {
            throw ValidationError(where + ": structured record \"" + record.id +
                                  "\" is missing a non-empty expected_answer");
        }
    } else {
        if (!record.aliases.empty()) {
            throw ValidationError(where + ": unstructured record \"" + record.id +
                                  "\" must not carry aliases");
        }
    }
}

QuestionRecord record_from_json(const jsonl::Json& obj, const std::string& where) {
    static const std::vector<std::string> known = {"id",    "text",    "category", "kind",
                                                   "expected_answer", "aliases",  "tags"};
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw ValidationError(where + ": unknown field \"" + it.key() + "\"");
        }
    }

    QuestionRecord record;
    record.id = require_string(obj, "id", where);
    record.text = require_string(obj, "text", where);
    try {
        record.category = category_from_string(require_string(obj, "category", where));
        record.kind = kind_from_string(require_string(obj, "kind", where));
    } catch (const ValidationError& e) {
        // Enum parse errors carry no location; add it.
        std::string msg = e.what();
        if (msg.rfind(where, 0) != 0) msg = where + ": " + msg;
        throw ValidationError(msg);
    }
    if (auto it = obj.find("expected_answer"); it != obj.end()) {
        if (!it->is_string()) {
            throw ValidationError(where + ": field \"expected_answer\" must be a string");
        }
        record.expected_answer = it->get<std::string>();
    }
    record.aliases = optional_string_array(obj, "aliases", where);
    record.tags = optional_string_array(obj, "tags", where);

    validate_record(record, where);
    return record;
}

jsonl::Json record_to_json(const QuestionRecord& record) {
    jsonl::Json obj;
    obj["id"] = record.id;
    obj["text"] = record.text;
    obj["category"] = to_string(record.category);
    obj["kind"] = to_string(record.kind);
    if (record.expected_answer) obj["expected_answer"] = *record.expected_answer;
    if (!record.aliases.empty()) obj["aliases"] = record.aliases;
    if (!record.tags.empty()) obj["tags"] = record.tags;
    return obj;
}

Dataset load_dataset(const std::filesystem::path& path) {
    Dataset dataset;
    dataset.source_path = path.string();

    std::unordered_map<std::string, std::size_t> seen;  // id -> first line
    for (const auto& line : jsonl::read_file(path)) {
        const std::string where = path.string() + ":" + std::to_string(line.number);
        QuestionRecord record = record_from_json(line.value, where);
        auto [it, inserted] = seen.emplace(record.id, line.number);
        if (!inserted) {
            throw ValidationError(path.string() + ": duplicate id \"" + record.id +
                                  "\" (lines " + std::to_string(it->second) + " and " +
                                  std::to_string(line.number) + ")");
        }
        dataset.records.push_back(std::move(record));
    }
    return dataset;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    std::vector<jsonl::Json> lines;
    lines.reserve(dataset.records.size());
    for (const auto& record : dataset.records) {
        lines.push_back(record_to_json(record));
    }
    jsonl::write_file(path, lines);
}

std::map<std::string, std::vector<QuestionRecord>> partition(const Dataset& dataset,
                                                             PartitionAxis axis) {
    std::map<std::string, std::vector<QuestionRecord>> buckets;
    for (const auto& record : dataset.records) {
        const std::string key = axis == PartitionAxis::category ? to_string(record.category)
                                                                : to_string(record.kind);
        buckets[key].push_back(record);
    }
    return buckets;
}

}  // namespace mineqa
