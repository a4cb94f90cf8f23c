#include "mineqa/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "mineqa/errors.hpp"

namespace mineqa::jsonl {

std::vector<Line> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open " + path.string());
    }

    std::vector<Line> lines;
    std::string raw;
    std::size_t number = 0;
    while (std::getline(in, raw)) {
        ++number;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        if (raw.find_first_not_of(" \t") == std::string::npos) continue;

        Json value = Json::parse(raw, nullptr, false);
        if (value.is_discarded()) {
            throw ValidationError(path.string() + ":" + std::to_string(number) + ": invalid JSON");
        }
        if (!value.is_object()) {
            throw ValidationError(path.string() + ":" + std::to_string(number) +
                                  ": expected an object");
        }
        lines.push_back({number, std::move(value)});
    }
    return lines;
}

std::string to_string(const std::vector<Json>& objects) {
    std::ostringstream out;
    for (const auto& obj : objects) {
        out << obj.dump() << '\n';
    }
    return out.str();
}

void write_file(const std::filesystem::path& path, const std::vector<Json>& objects) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ValidationError("cannot write " + path.string());
    }
    out << to_string(objects);
    if (!out) {
        throw ValidationError("write failed for " + path.string());
    }
}

}  // namespace mineqa::jsonl
