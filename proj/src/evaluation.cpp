#include "mineqa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "mineqa/errors.hpp"

namespace mineqa {

namespace {

// Decodes one UTF-8 sequence starting at `i`; returns the codepoint and
// advances `i`. Invalid bytes are passed through as single Latin-1 units.
unsigned decode_utf8(const std::string& s, std::size_t& i) {
    const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
    const unsigned char b0 = byte(i);
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    auto continuation = [&](std::size_t k) {
        return k < s.size() && (byte(k) & 0xC0) == 0x80;
    };
    if ((b0 & 0xE0) == 0xC0 && continuation(i + 1)) {
        unsigned cp = ((b0 & 0x1Fu) << 6) | (byte(i + 1) & 0x3Fu);
        i += 2;
        return cp;
    }
    if ((b0 & 0xF0) == 0xE0 && continuation(i + 1) && continuation(i + 2)) {
        unsigned cp = ((b0 & 0x0Fu) << 12) | ((byte(i + 1) & 0x3Fu) << 6) | (byte(i + 2) & 0x3Fu);
        i += 3;
        return cp;
    }
    if ((b0 & 0xF8) == 0xF0 && continuation(i + 1) && continuation(i + 2) && continuation(i + 3)) {
        unsigned cp = ((b0 & 0x07u) << 18) | ((byte(i + 1) & 0x3Fu) << 12) |
                      ((byte(i + 2) & 0x3Fu) << 6) | (byte(i + 3) & 0x3Fu);
        i += 4;
        return cp;
    }
    ++i;
    return b0;
}

bool is_unicode_whitespace(unsigned cp) {
    if (cp == 0x20 || (cp >= 0x09 && cp <= 0x0D)) return true;
    if (cp == 0x85 || cp == 0xA0) return true;
    if (cp == 0x1680) return true;
    if (cp >= 0x2000 && cp <= 0x200A) return true;
    if (cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000) return true;
    return false;
}

void append_utf8(std::string& out, unsigned cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

bool terminal_punctuation(char c) { return c == '.' || c == '!' || c == '?'; }

std::string trim_one_line(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

int strategy_order(StrategyKind kind) { return static_cast<int>(kind); }

std::string method_display_name(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::baseline: return "Baseline";
        case StrategyKind::cot: return "CoT";
        case StrategyKind::multi_turn: return "Multi-Turn Prompt";
    }
    return "?";
}

}  // namespace

std::string normalize(const std::string& text) {
    // Fold case, map whitespace codepoints to ' ', collapse runs, trim left.
    std::string folded;
    folded.reserve(text.size());
    bool pending_space = false;
    std::size_t i = 0;
    while (i < text.size()) {
        unsigned cp = decode_utf8(text, i);
        if (is_unicode_whitespace(cp)) {
            pending_space = !folded.empty();
            continue;
        }
        if (pending_space) {
            folded.push_back(' ');
            pending_space = false;
        }
        if (cp >= 'A' && cp <= 'Z') cp += 'a' - 'A';
        append_utf8(folded, cp);
    }

    // Drop the terminal sentence-punctuation run; interleaved trailing
    // whitespace goes with it so the transform stays idempotent.
    while (!folded.empty() && (terminal_punctuation(folded.back()) || folded.back() == ' ')) {
        folded.pop_back();
    }
    return folded;
}

AccJudgment match_structured(const std::string& predicted, const std::string& expected,
                             const std::vector<std::string>& aliases) {
    if (expected.empty()) {
        throw ValidationError("expected answer is empty");
    }

    AccJudgment judgment;
    judgment.predicted = predicted;
    judgment.expected = expected;

    const std::string haystack = normalize(predicted);
    auto contains = [&](const std::string& form) {
        const std::string needle = normalize(form);
        return !needle.empty() && haystack.find(needle) != std::string::npos;
    };

    if (contains(expected)) {
        judgment.matched = true;
        judgment.matched_alias = expected;
        return judgment;
    }
    for (const auto& alias : aliases) {
        if (contains(alias)) {
            judgment.matched = true;
            judgment.matched_alias = alias;
            return judgment;
        }
    }
    return judgment;
}

void JudgeRubric::validate() const {
    if (dimensions.empty()) {
        throw ValidationError("rubric needs at least one dimension");
    }
    std::set<std::string> names;
    for (const auto& dim : dimensions) {
        if (dim.name.empty()) {
            throw ValidationError("rubric dimension name is empty");
        }
        if (!names.insert(dim.name).second) {
            throw ValidationError("duplicate rubric dimension \"" + dim.name + "\"");
        }
    }
}

JudgeRubric default_rubric() {
    JudgeRubric rubric;
    rubric.dimensions = {
        {"relevance", "the answer addresses the question that was asked"},
        {"clarity", "the answer is well organized and unambiguous"},
        {"depth", "the answer covers the important factors, not just headlines"},
        {"domain_accuracy", "statements are correct for mining practice"},
        {"ambiguity_handling", "uncertainty and missing context are handled explicitly"},
    };
    rubric.scale_anchor_text =
        "1 means irrelevant or misleading; 5 means accurate, complete, and directly usable by "
        "mining personnel.";
    return rubric;
}

JudgeRubric load_rubric(const std::filesystem::path& path) {
    JudgeRubric rubric;
    for (const auto& line : jsonl::read_file(path)) {
        const std::string where = path.string() + ":" + std::to_string(line.number);
        const auto& obj = line.value;
        if (obj.contains("scale_anchor_text")) {
            if (!obj["scale_anchor_text"].is_string() || obj.size() != 1) {
                throw ValidationError(where + ": anchor line must hold only scale_anchor_text");
            }
            rubric.scale_anchor_text = obj["scale_anchor_text"].get<std::string>();
            continue;
        }
        if (!obj.contains("name") || !obj["name"].is_string() || !obj.contains("description") ||
            !obj["description"].is_string()) {
            throw ValidationError(where + ": dimension needs \"name\" and \"description\"");
        }
        rubric.dimensions.push_back(
            {obj["name"].get<std::string>(), obj["description"].get<std::string>()});
    }
    rubric.validate();
    return rubric;
}

std::string render_rubric_text(const JudgeRubric& rubric) {
    std::string out;
    for (const auto& dim : rubric.dimensions) {
        out += "- " + dim.name + ": " + dim.description + "\n";
    }
    if (!rubric.scale_anchor_text.empty()) {
        out += "Scale: " + rubric.scale_anchor_text + "\n";
    }
    return out;
}

std::string render_judge_prompt(const std::string& template_text, const QuestionRecord& question,
                                const std::string& answer, const JudgeRubric& rubric) {
    std::string out;
    out.reserve(template_text.size() + answer.size());
    std::size_t i = 0;
    std::size_t copied = 0;
    while ((i = template_text.find('{', i)) != std::string::npos) {
        std::size_t close = template_text.find('}', i + 1);
        if (close == std::string::npos) break;
        const std::string name = template_text.substr(i + 1, close - i - 1);
        const std::string* replacement = nullptr;
        std::string rubric_text;
        if (name == "question") {
            replacement = &question.text;
        } else if (name == "answer") {
            replacement = &answer;
        } else if (name == "rubric") {
            rubric_text = render_rubric_text(rubric);
            replacement = &rubric_text;
        } else if (std::all_of(name.begin(), name.end(), [](unsigned char c) {
                       return std::isalnum(c) || c == '_';
                   }) &&
                   !name.empty()) {
            throw ValidationError("judge prompt template: unknown slot marker \"{" + name +
                                  "}\"");
        } else {
            i = close;  // literal braces, not a marker
            continue;
        }
        out.append(template_text, copied, i - copied);
        out += *replacement;
        copied = close + 1;
        i = close + 1;
    }
    out.append(template_text, copied, template_text.size() - copied);
    return out;
}

std::string default_judge_prompt_template() {
    return
        "You are grading an answer to a mining-domain question.\n"
        "\n"
        "QUESTION:\n"
        "{question}\n"
        "\n"
        "ANSWER:\n"
        "{answer}\n"
        "\n"
        "RUBRIC:\n"
        "{rubric}\n"
        "Weigh each rubric dimension and explain your judgement in a short paragraph. Then give "
        "your verdict on the last line, in exactly this form:\n"
        "SCORE: <integer 1-5>\n";
}

ParsedJudgeOutput parse_judge_response(const std::string& content) {
    // The verdict is the last line matching SCORE: <integer> exactly.
    std::optional<long long> value;
    std::size_t rationale_end = 0;

    std::size_t pos = 0;
    while (pos <= content.size()) {
        std::size_t eol = content.find('\n', pos);
        const std::size_t end = eol == std::string::npos ? content.size() : eol;
        const std::string line = trim_one_line(content.substr(pos, end - pos));
        if (line.rfind("SCORE:", 0) == 0) {
            const std::string digits = trim_one_line(line.substr(6));
            bool numeric = !digits.empty();
            std::size_t k = (digits[0] == '+' || digits[0] == '-') ? 1 : 0;
            if (k == digits.size()) numeric = false;
            for (; numeric && k < digits.size(); ++k) {
                if (!std::isdigit(static_cast<unsigned char>(digits[k]))) numeric = false;
            }
            if (numeric && digits.size() <= 10) {
                value = std::stoll(digits);
                rationale_end = pos;
            }
        }
        if (eol == std::string::npos) break;
        pos = eol + 1;
    }

    if (!value) {
        throw ScoringError("judge response has no SCORE line");
    }
    if (*value < 1 || *value > 5) {
        throw ScoringError("judge score " + std::to_string(*value) + " is outside [1, 5]");
    }

    ParsedJudgeOutput parsed;
    parsed.score = static_cast<int>(*value);
    std::string rationale = content.substr(0, rationale_end);
    while (!rationale.empty() && std::isspace(static_cast<unsigned char>(rationale.back()))) {
        rationale.pop_back();
    }
    parsed.rationale = rationale;
    return parsed;
}

JudgeScore score_open_ended(CompletionClient& judge, const QuestionRecord& question,
                            const std::string& answer, const JudgeRubric& rubric,
                            const std::string& prompt_template,
                            const RequestDefaults& defaults) {
    if (answer.empty()) {
        throw ValidationError("cannot judge an empty answer");
    }
    rubric.validate();

    CompletionRequest request;
    request.model_id = judge.model_id();
    request.messages = {{Role::user, render_judge_prompt(prompt_template, question, answer, rubric)}};
    request.temperature = defaults.temperature;
    request.max_tokens = defaults.max_tokens;
    request.seed = defaults.seed;

    const ChatMessage response = judge.complete(request);
    ParsedJudgeOutput parsed = parse_judge_response(response.content);
    return {question.id, parsed.score, parsed.rationale};
}

std::vector<CellAggregate> aggregate(const std::vector<CellInputs>& cells) {
    std::map<std::pair<std::string, int>, CellAggregate> rows;
    for (const auto& cell : cells) {
        auto key = std::make_pair(cell.backend_name, strategy_order(cell.strategy));
        if (rows.count(key)) {
            throw ValidationError("duplicate cell " + cell.backend_name + "/" +
                                  to_string(cell.strategy));
        }
        CellAggregate row;
        row.backend_name = cell.backend_name;
        row.strategy = cell.strategy;
        row.structured_total = static_cast<long long>(cell.judgments.size());
        row.structured_matched =
            std::count_if(cell.judgments.begin(), cell.judgments.end(),
                          [](const AccJudgment& j) { return j.matched; });
        row.judged = static_cast<long long>(cell.scores.size());
        row.judge_exclusions = cell.judge_exclusions;
        if (row.structured_total > 0) {
            row.acc = static_cast<double>(row.structured_matched) /
                      static_cast<double>(row.structured_total);
        }
        if (row.judged > 0) {
            long long sum = 0;
            for (const auto& s : cell.scores) sum += s.score;
            row.mean_judge_score = static_cast<double>(sum) / static_cast<double>(row.judged);
        }
        rows.emplace(std::move(key), std::move(row));
    }

    for (auto& [key, row] : rows) {
        if (row.strategy == StrategyKind::baseline) continue;
        auto baseline = rows.find({row.backend_name, strategy_order(StrategyKind::baseline)});
        if (baseline == rows.end()) {
            throw ValidationError("no baseline cell for backend \"" + row.backend_name +
                                  "\"; improvement is undefined");
        }
        const auto& base_acc = baseline->second.acc;
        if (row.acc && base_acc && *base_acc > 0.0) {
            row.improvement_pct = improvement_pct(*base_acc, *row.acc);
        }
    }

    std::vector<CellAggregate> out;
    out.reserve(rows.size());
    for (auto& [key, row] : rows) out.push_back(std::move(row));
    return out;
}

double improvement_pct(double baseline_acc, double method_acc) {
    return (method_acc - baseline_acc) / baseline_acc * 100.0;
}

double round_half_up1(double x) {
    double rounded = std::floor(x * 10.0 + 0.5) / 10.0;
    if (rounded == 0.0) rounded = 0.0;  // normalize -0.0
    return rounded;
}

namespace {

std::string one_decimal(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f", round_half_up1(x));
    return buf;
}

}  // namespace

std::string format_percent(double fraction) { return one_decimal(fraction * 100.0) + "%"; }

std::string format_score(double score) { return one_decimal(score); }

std::string format_improvement(double pct) {
    const double rounded = round_half_up1(pct);
    return (rounded > 0.0 ? "+" : "") + one_decimal(pct) + "%";
}

std::vector<Table1Row> table1_fixture() {
    return {
        {"ChatGPT", "Baseline", 72.0, 72.0, std::nullopt},
        {"ChatGPT", "CoT", 72.0, 78.0, 8.3},
        {"ChatGPT", "Multi-Turn Prompt", 72.0, 85.0, 18.1},
        {"Claude2", "Baseline", 74.0, 74.0, std::nullopt},
        {"Claude2", "CoT", 74.0, 80.0, 8.1},
        {"Claude2", "Multi-Turn Prompt", 74.0, 87.0, 17.6},
        {"GPT-4", "Baseline", 78.0, 78.0, std::nullopt},
        {"GPT-4", "CoT", 78.0, 83.0, 6.4},
        {"GPT-4", "Multi-Turn Prompt", 78.0, 90.0, 15.4},
    };
}

std::vector<Table1Check> verify_table1_checks(const std::vector<Table1Row>& rows) {
    std::vector<Table1Check> checks;
    for (const auto& row : rows) {
        if (!row.published_improvement_pct) continue;  // baseline rows carry "-"
        Table1Check check;
        check.model = row.model;
        check.method = row.method;
        check.computed =
            format_improvement(improvement_pct(row.baseline_acc_pct, row.method_acc_pct));
        check.published = format_improvement(*row.published_improvement_pct);
        check.ok = check.computed == check.published;
        checks.push_back(std::move(check));
    }
    return checks;
}

bool verify_table1(const std::vector<Table1Row>& rows) {
    const auto checks = verify_table1_checks(rows);
    return !checks.empty() &&
           std::all_of(checks.begin(), checks.end(), [](const Table1Check& c) { return c.ok; });
}

}  // namespace mineqa
