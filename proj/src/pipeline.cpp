#include "mineqa/pipeline.hpp"

#include <algorithm>

#include "mineqa/errors.hpp"

namespace mineqa {

namespace {

bool ident_start(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }

// Calls fn(name, start, end) for every "{identifier}" marker, where [start,
// end) spans the whole marker including braces. Non-marker braces are left
// to the caller as literal text.
template <typename Fn>
void for_each_slot(const std::string& text, Fn&& fn) {
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] != '{') {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        if (j < text.size() && ident_start(text[j])) {
            ++j;
            while (j < text.size() && ident_char(text[j])) ++j;
            if (j < text.size() && text[j] == '}') {
                fn(text.substr(i + 1, j - i - 1), i, j + 1);
                i = j + 1;
                continue;
            }
        }
        ++i;
    }
}

std::vector<std::string> slot_names(const std::string& text) {
    std::vector<std::string> names;
    for_each_slot(text, [&](const std::string& name, std::size_t, std::size_t) {
        names.push_back(name);
    });
    return names;
}

std::vector<ChatMessage> with_preamble(const std::string& preamble, std::string user_content) {
    std::vector<ChatMessage> messages;
    if (!preamble.empty()) {
        messages.push_back({Role::system, preamble});
    }
    messages.push_back({Role::user, std::move(user_content)});
    return messages;
}

const char* kQuestionSlot = "question";
const char* kPreviousSlot = "previous_answer";

}  // namespace

std::string to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::baseline: return "baseline";
        case StrategyKind::cot: return "cot";
        case StrategyKind::multi_turn: return "multi_turn";
    }
    return "?";
}

StrategyKind strategy_kind_from_string(const std::string& s) {
    if (s == "baseline") return StrategyKind::baseline;
    if (s == "cot") return StrategyKind::cot;
    if (s == "multi_turn") return StrategyKind::multi_turn;
    throw ValidationError("unknown strategy kind \"" + s +
                          "\" (expected baseline, cot, or multi_turn)");
}

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::context_extraction: return "context_extraction";
        case Stage::specific_focus: return "specific_focus";
        case Stage::actionable_output: return "actionable_output";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    if (s == "context_extraction") return Stage::context_extraction;
    if (s == "specific_focus") return Stage::specific_focus;
    if (s == "actionable_output") return Stage::actionable_output;
    throw ValidationError("unknown stage \"" + s + "\"");
}

void StageTemplate::validate() const {
    bool references_previous = false;
    for (const auto& name : slot_names(text)) {
        if (name == kPreviousSlot) {
            references_previous = true;
        } else if (name != kQuestionSlot) {
            throw ValidationError("stage " + to_string(stage) + ": unknown slot marker \"{" +
                                  name + "}\"");
        }
    }
    if (stage == Stage::context_extraction && references_previous) {
        throw ValidationError(
            "stage context_extraction must not reference {previous_answer}");
    }
    if (stage != Stage::context_extraction && !references_previous) {
        throw ValidationError("stage " + to_string(stage) +
                              " must reference {previous_answer}");
    }
}

void Strategy::validate() const {
    switch (kind) {
        case StrategyKind::baseline:
            if (!templates.empty() || !cot_instruction.empty()) {
                throw ValidationError("baseline strategy takes no templates or instruction");
            }
            break;
        case StrategyKind::cot:
            if (cot_instruction.empty()) {
                throw ValidationError("cot strategy needs a non-empty cot_instruction");
            }
            if (!templates.empty()) {
                throw ValidationError("cot strategy takes no stage templates");
            }
            break;
        case StrategyKind::multi_turn: {
            static const Stage order[] = {Stage::context_extraction, Stage::specific_focus,
                                          Stage::actionable_output};
            if (templates.size() != 3) {
                throw ValidationError("multi_turn strategy needs exactly 3 stage templates");
            }
            for (std::size_t i = 0; i < 3; ++i) {
                if (templates[i].stage != order[i]) {
                    throw ValidationError(
                        "multi_turn templates must be ordered context_extraction, "
                        "specific_focus, actionable_output");
                }
                templates[i].validate();
            }
            if (!cot_instruction.empty()) {
                throw ValidationError("multi_turn strategy takes no cot_instruction");
            }
            break;
        }
    }
}

std::string render_stage(const StageTemplate& tmpl, const QuestionRecord& question,
                         const std::optional<std::string>& previous_answer) {
    if (tmpl.stage == Stage::context_extraction && previous_answer) {
        throw ValidationError("stage context_extraction takes no previous answer");
    }
    if (tmpl.stage != Stage::context_extraction && !previous_answer) {
        throw ValidationError("stage " + to_string(tmpl.stage) +
                              " requires the previous stage's answer");
    }

    std::string out;
    out.reserve(tmpl.text.size() + question.text.size());
    std::size_t copied = 0;
    for_each_slot(tmpl.text, [&](const std::string& name, std::size_t start, std::size_t end) {
        out.append(tmpl.text, copied, start - copied);
        if (name == kQuestionSlot) {
            out += question.text;
        } else if (name == kPreviousSlot) {
            if (!previous_answer) {
                throw ValidationError("stage " + to_string(tmpl.stage) +
                                      " requires the previous stage's answer");
            }
            out += *previous_answer;
        } else {
            throw ValidationError("stage " + to_string(tmpl.stage) +
                                  ": unknown slot marker \"{" + name + "}\"");
        }
        copied = end;
    });
    out.append(tmpl.text, copied, tmpl.text.size() - copied);
    return out;
}

std::vector<ChatMessage> build_baseline_messages(const QuestionRecord& question,
                                                 const std::string& system_preamble) {
    return with_preamble(system_preamble, question.text);
}

std::vector<ChatMessage> build_cot_messages(const QuestionRecord& question,
                                            const std::string& instruction,
                                            const std::string& system_preamble) {
    if (instruction.empty()) {
        throw ValidationError("cot instruction is empty");
    }
    return with_preamble(system_preamble, question.text + "\n\n" + instruction);
}

jsonl::Json transcript_to_json(const Transcript& transcript) {
    jsonl::Json obj;
    obj["question_id"] = transcript.question_id;
    obj["backend"] = transcript.backend_name;
    obj["strategy"] = to_string(transcript.strategy_kind);
    jsonl::Json turns = jsonl::Json::array();
    for (const auto& turn : transcript.turns) {
        jsonl::Json messages = jsonl::Json::array();
        for (const auto& msg : turn.request_messages) {
            messages.push_back({{"role", to_string(msg.role)}, {"content", msg.content}});
        }
        turns.push_back({{"stage", turn.stage_label},
                         {"request_messages", std::move(messages)},
                         {"response",
                          {{"role", to_string(turn.response.role)},
                           {"content", turn.response.content}}}});
    }
    obj["turns"] = std::move(turns);
    obj["final_answer"] = transcript.final_answer;
    return obj;
}

Transcript transcript_from_json(const jsonl::Json& obj, const std::string& where) {
    try {
        Transcript t;
        t.question_id = obj.at("question_id").get<std::string>();
        t.backend_name = obj.at("backend").get<std::string>();
        t.strategy_kind = strategy_kind_from_string(obj.at("strategy").get<std::string>());
        for (const auto& turn_json : obj.at("turns")) {
            Turn turn;
            turn.stage_label = turn_json.at("stage").get<std::string>();
            for (const auto& msg : turn_json.at("request_messages")) {
                turn.request_messages.push_back(
                    {role_from_string(msg.at("role").get<std::string>()),
                     msg.at("content").get<std::string>()});
            }
            turn.response = {role_from_string(turn_json.at("response").at("role").get<std::string>()),
                             turn_json.at("response").at("content").get<std::string>()};
            t.turns.push_back(std::move(turn));
        }
        t.final_answer = obj.at("final_answer").get<std::string>();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(where + ": malformed transcript: " + e.what());
    }
}

Transcript run_strategy(const QuestionRecord& question, const Strategy& strategy,
                        CompletionClient& client, const RequestDefaults& defaults) {
    strategy.validate();

    Transcript transcript;
    transcript.question_id = question.id;
    transcript.backend_name = client.backend_name();
    transcript.strategy_kind = strategy.kind;

    auto execute_turn = [&](const std::string& label, std::vector<ChatMessage> messages) {
        CompletionRequest request;
        request.model_id = client.model_id();
        request.messages = std::move(messages);
        request.temperature = defaults.temperature;
        request.max_tokens = defaults.max_tokens;
        request.seed = defaults.seed;

        ChatMessage response;
        try {
            response = client.complete(request);
        } catch (const ValidationError&) {
            throw;
        } catch (const std::exception& e) {
            throw PipelineError(label, e.what());
        }
        transcript.turns.push_back({label, std::move(request.messages), std::move(response)});
    };

    switch (strategy.kind) {
        case StrategyKind::baseline:
            execute_turn("baseline",
                         build_baseline_messages(question, defaults.system_preamble));
            break;
        case StrategyKind::cot:
            execute_turn("cot", build_cot_messages(question, strategy.cot_instruction,
                                                   defaults.system_preamble));
            break;
        case StrategyKind::multi_turn: {
            std::optional<std::string> previous;
            for (const auto& tmpl : strategy.templates) {
                std::string prompt = render_stage(tmpl, question, previous);
                execute_turn(to_string(tmpl.stage),
                             with_preamble(defaults.system_preamble, std::move(prompt)));
                previous = transcript.turns.back().response.content;
            }
            break;
        }
    }

    transcript.final_answer = transcript.turns.back().response.content;
    return transcript;
}

TemplatePack TemplatePack::load(const std::filesystem::path& path) {
    TemplatePack pack;
    for (const auto& line : jsonl::read_file(path)) {
        const std::string where = path.string() + ":" + std::to_string(line.number);
        const auto& obj = line.value;
        if (!obj.contains("stage") || !obj["stage"].is_string() || !obj.contains("template") ||
            !obj["template"].is_string()) {
            throw ValidationError(where + ": template needs \"stage\" and \"template\" strings");
        }
        StageTemplate tmpl;
        try {
            tmpl.stage = stage_from_string(obj["stage"].get<std::string>());
            tmpl.text = obj["template"].get<std::string>();
            tmpl.validate();
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }

        if (auto it = obj.find("category"); it != obj.end()) {
            if (!it->is_string()) {
                throw ValidationError(where + ": field \"category\" must be a string");
            }
            QuestionCategory category;
            try {
                category = category_from_string(it->get<std::string>());
            } catch (const ValidationError& e) {
                throw ValidationError(where + ": " + e.what());
            }
            pack.by_category_[category][tmpl.stage] = tmpl;
        } else {
            pack.generic_[tmpl.stage] = tmpl;
        }
    }

    if (pack.generic_.size() != 3) {
        throw ValidationError(path.string() +
                              ": template pack must define all three generic stages");
    }
    return pack;
}

TemplatePack TemplatePack::builtin_default() {
    TemplatePack pack;
    const StageTemplate context{
        Stage::context_extraction,
        "List the broader context and all relevant protocols for the following mining "
        "question: {question}"};
    const StageTemplate focus{
        Stage::specific_focus,
        "Here is the broader context gathered so far: {previous_answer}\n\nNarrow the focus "
        "for: {question}"};
    const StageTemplate action{
        Stage::actionable_output,
        "Using the focused analysis: {previous_answer}\n\nState the final operational answer "
        "for: {question}"};
    pack.generic_[context.stage] = context;
    pack.generic_[focus.stage] = focus;
    pack.generic_[action.stage] = action;
    return pack;
}

std::vector<StageTemplate> TemplatePack::templates_for(QuestionCategory category) const {
    std::vector<StageTemplate> out;
    for (Stage stage : {Stage::context_extraction, Stage::specific_focus,
                        Stage::actionable_output}) {
        const StageTemplate* chosen = nullptr;
        if (auto cat = by_category_.find(category); cat != by_category_.end()) {
            if (auto it = cat->second.find(stage); it != cat->second.end()) {
                chosen = &it->second;
            }
        }
        if (!chosen) {
            chosen = &generic_.at(stage);
        }
        out.push_back(*chosen);
    }
    return out;
}

}  // namespace mineqa
