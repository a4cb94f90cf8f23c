#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace mineqa::jsonl {

using Json = nlohmann::ordered_json;

struct Line {
    std::size_t number = 0;  // 1-based line number in the source file
    Json value;
};

// Parses a UTF-8 file with one object per line. Blank lines are skipped.
// Throws ValidationError naming the file and line on I/O or parse failure,
// and when a line holds a non-object value.
std::vector<Line> read_file(const std::filesystem::path& path);

// Writes one compact object per line, each terminated with '\n'.
void write_file(const std::filesystem::path& path, const std::vector<Json>& objects);

// Serializes to the same line format without touching the filesystem.
std::string to_string(const std::vector<Json>& objects);

}  // namespace mineqa::jsonl
