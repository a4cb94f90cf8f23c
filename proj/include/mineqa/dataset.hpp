#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mineqa/jsonl.hpp"

namespace mineqa {

enum class QuestionCategory { safety, environmental, operational };
enum class QuestionKind { structured, unstructured };

std::string to_string(QuestionCategory c);
std::string to_string(QuestionKind k);
QuestionCategory category_from_string(const std::string& s);  // throws ValidationError
QuestionKind kind_from_string(const std::string& s);          // throws ValidationError

// One benchmark item.
//
// Invariants:
//   - id non-empty, unique within a dataset
//   - text non-empty after whitespace trimming
//   - structured  => expected_answer present and non-empty
//   - unstructured => aliases empty (expected_answer may be absent)
struct QuestionRecord {
    std::string id;
    std::string text;
    QuestionCategory category = QuestionCategory::safety;
    QuestionKind kind = QuestionKind::unstructured;
    std::optional<std::string> expected_answer;
    std::vector<std::string> aliases;
    std::vector<std::string> tags;  // free-form, preserved verbatim

    bool operator==(const QuestionRecord&) const = default;
};

struct Dataset {
    std::vector<QuestionRecord> records;  // file order preserved
    std::string source_path;
};

// Checks the per-record invariants. Throws ValidationError with `where`
// prefixed to the message (callers pass "file:line").
void validate_record(const QuestionRecord& record, const std::string& where);

// Parses and validates one record object. Unknown fields are rejected.
QuestionRecord record_from_json(const jsonl::Json& obj, const std::string& where);
jsonl::Json record_to_json(const QuestionRecord& record);

// Loads a line-delimited dataset file, validating every record and id
// uniqueness. Errors name the offending file and line(s).
Dataset load_dataset(const std::filesystem::path& path);

// Writes records back in the same line-delimited format (round-trip safe).
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

enum class PartitionAxis { category, kind };

// Groups records by category or kind. Within-bucket order follows dataset
// order; only values that actually occur get a bucket.
std::map<std::string, std::vector<QuestionRecord>> partition(const Dataset& dataset,
                                                             PartitionAxis axis);

}  // namespace mineqa
