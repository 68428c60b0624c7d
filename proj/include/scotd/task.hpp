#pragma once

// Tasks, instances, and prompt sets shared by every pipeline stage.

#include "scotd/detail/text.hpp"
#include "scotd/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace scotd {

using json = nlohmann::json;
using OptionKey = std::string;

inline constexpr std::string_view kDefaultAnswerPhrase = "So the answer is:";
inline constexpr std::size_t kMaxPromptExamples = 32;

// Blank line between prompt blocks; also the default stop sequence for teacher sampling.
inline constexpr std::string_view kBlockSeparator = "\n\n";
// Sequence that would start a new question block if it appeared inside a field.
inline constexpr std::string_view kQuestionSeparator = "\n\nQ:";

enum class TaskKind { multiple_choice, binary_classification };

inline std::string_view to_string(TaskKind k) {
    return k == TaskKind::multiple_choice ? "multiple_choice" : "binary_classification";
}

inline TaskKind task_kind_from_string(std::string_view s) {
    if (s == "multiple_choice") return TaskKind::multiple_choice;
    if (s == "binary_classification") return TaskKind::binary_classification;
    throw DataError("unknown task kind '" + std::string(s) + "'");
}

struct TaskSpec {
    std::string task_id;
    TaskKind kind = TaskKind::multiple_choice;
    std::vector<OptionKey> option_keys;
    std::string answer_phrase{kDefaultAnswerPhrase};

    bool has_key(std::string_view key) const {
        return std::find(option_keys.begin(), option_keys.end(), key) != option_keys.end();
    }

    std::size_t key_index(std::string_view key) const {
        const auto it = std::find(option_keys.begin(), option_keys.end(), key);
        if (it == option_keys.end()) throw InvalidArgument("label '" + std::string(key) + "' not in option set");
        return static_cast<std::size_t>(it - option_keys.begin());
    }

    friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

// Key as shown in prompts: binary tasks are rendered as a 2-way choice "(a)"/"(b)"
// whatever their underlying keys are; multiple-choice keys are shown verbatim.
inline std::string display_key(const TaskSpec& task, std::string_view key) {
    if (task.kind == TaskKind::binary_classification) {
        return std::string(1, static_cast<char>('a' + task.key_index(key)));
    }
    return std::string(key);
}

struct Instance {
    std::string instance_id;
    std::string task_id;
    std::string question;
    std::map<OptionKey, std::string> choices;
    std::optional<OptionKey> gold_label;

    friend bool operator==(const Instance&, const Instance&) = default;
};

struct PromptExample {
    Instance instance;
    std::string rationale;
    OptionKey label;

    friend bool operator==(const PromptExample&, const PromptExample&) = default;
};

struct PromptSet {
    std::string task_id;
    std::vector<PromptExample> examples;

    friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

namespace detail {

inline std::string normalize_key(std::string_view raw) {
    return to_lower(trim(raw));
}

inline void check_key_shape(const std::string& key) {
    if (key.empty()) throw DataError("option key is empty");
    for (char c : key) {
        if (is_space(c) || c == '(' || c == ')' || c == ':') {
            throw DataError("option key '" + key + "' is not a single token");
        }
    }
}

}  // namespace detail

inline void validate(const TaskSpec& task) {
    if (task.task_id.empty()) throw DataError("task_id is empty");
    if (task.option_keys.empty()) throw DataError("option_keys is empty");
    std::set<std::string> seen;
    for (const auto& k : task.option_keys) {
        detail::check_key_shape(k);
        if (k != detail::to_lower(k)) throw DataError("option key '" + k + "' is not lowercase");
        if (!seen.insert(k).second) throw DataError("duplicate option key '" + k + "'");
    }
    if (task.kind == TaskKind::binary_classification && task.option_keys.size() != 2) {
        throw DataError("binary_classification task needs exactly 2 option keys");
    }
    if (detail::split_whitespace(task.answer_phrase).empty()) throw DataError("answer_phrase is empty");
}

inline void validate(const Instance& inst, const TaskSpec& task) {
    if (inst.instance_id.empty()) throw DataError("instance id is empty");
    if (inst.task_id != task.task_id) {
        throw DataError("instance '" + inst.instance_id + "' belongs to task '" + inst.task_id + "'");
    }
    if (inst.choices.size() != task.option_keys.size() ||
        !std::all_of(task.option_keys.begin(), task.option_keys.end(),
                     [&](const auto& k) { return inst.choices.count(k) == 1; })) {
        throw DataError("instance '" + inst.instance_id + "': choice keys do not match the task's option keys");
    }
    if (inst.gold_label && !task.has_key(*inst.gold_label)) {
        throw DataError("instance '" + inst.instance_id + "': label not in option set");
    }
}

inline void validate(const PromptSet& ps, const TaskSpec& task) {
    if (ps.examples.empty() || ps.examples.size() > kMaxPromptExamples) {
        throw DataError("prompt set must hold between 1 and 32 examples");
    }
    if (ps.task_id != task.task_id) throw DataError("prompt set task_id mismatch");
    for (const auto& ex : ps.examples) {
        validate(ex.instance, task);
        if (!ex.instance.gold_label || *ex.instance.gold_label != ex.label) {
            throw DataError("prompt example '" + ex.instance.instance_id + "': label must equal the gold label");
        }
        if (detail::trim(ex.rationale).empty()) {
            throw DataError("prompt example '" + ex.instance.instance_id + "': rationale is empty");
        }
        if (ex.rationale.find(kBlockSeparator) != std::string::npos) {
            throw DataError("prompt example '" + ex.instance.instance_id + "': rationale contains a blank line");
        }
    }
}

// ---- JSON ----

inline json to_json(const TaskSpec& task) {
    return json{{"task_id", task.task_id},
                {"kind", std::string(to_string(task.kind))},
                {"option_keys", task.option_keys},
                {"answer_phrase", task.answer_phrase}};
}

inline TaskSpec task_from_json(const json& j) {
    if (!j.is_object()) throw DataError("task manifest must be a JSON object");
    try {
        TaskSpec task;
        task.task_id = j.at("task_id").get<std::string>();
        task.kind = task_kind_from_string(j.at("kind").get<std::string>());
        for (const auto& k : j.at("option_keys")) task.option_keys.push_back(detail::normalize_key(k.get<std::string>()));
        if (j.contains("answer_phrase") && !j.at("answer_phrase").is_null()) {
            task.answer_phrase = j.at("answer_phrase").get<std::string>();
        }
        validate(task);
        return task;
    } catch (const json::exception& e) {
        throw DataError(std::string("task manifest: ") + e.what());
    }
}

inline json to_json(const Instance& inst) {
    json choices = json::object();
    for (const auto& [k, v] : inst.choices) choices[k] = v;
    return json{{"id", inst.instance_id},
                {"question", inst.question},
                {"choices", choices},
                {"gold", inst.gold_label ? json(*inst.gold_label) : json(nullptr)}};
}

inline Instance instance_from_json(const json& j, const TaskSpec& task) {
    if (!j.is_object()) throw DataError("instance must be a JSON object");
    try {
        Instance inst;
        inst.instance_id = j.at("id").get<std::string>();
        inst.task_id = task.task_id;
        inst.question = j.at("question").get<std::string>();
        const auto& choices = j.at("choices");
        if (!choices.is_object()) throw DataError("instance '" + inst.instance_id + "': choices must be an object");
        for (const auto& [k, v] : choices.items()) {
            auto key = detail::normalize_key(k);
            if (!inst.choices.emplace(key, v.get<std::string>()).second) {
                throw DataError("instance '" + inst.instance_id + "': duplicate choice key '" + key + "'");
            }
        }
        if (j.contains("gold") && !j.at("gold").is_null()) {
            inst.gold_label = detail::normalize_key(j.at("gold").get<std::string>());
        }
        validate(inst, task);
        return inst;
    } catch (const json::exception& e) {
        throw DataError(std::string("instance: ") + e.what());
    }
}

// Canonical one-line form (sorted keys, no whitespace).
inline std::string serialize_instance(const Instance& inst) {
    return to_json(inst).dump();
}

// ---- files ----

namespace detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Calls fn(json, line_number) for every non-blank line; parse errors name the line.
template <typename Fn>
void for_each_jsonl(std::string_view text, const std::string& origin, Fn&& fn) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        ++line_no;
        const auto line = text.substr(pos, end - pos);
        pos = end + 1;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(origin + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        try {
            fn(j, line_no);
        } catch (const DataError& e) {
            throw DataError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

}  // namespace detail

inline TaskSpec parse_task_manifest(std::string_view text) {
    try {
        return task_from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        throw DataError(std::string("task manifest: malformed JSON: ") + e.what());
    }
}

inline std::vector<Instance> parse_instances(std::string_view text, const TaskSpec& task,
                                             const std::string& origin = "instances") {
    std::vector<Instance> out;
    std::set<std::string> ids;
    detail::for_each_jsonl(text, origin, [&](const json& j, std::size_t) {
        auto inst = instance_from_json(j, task);
        if (!ids.insert(inst.instance_id).second) {
            throw DataError("duplicate instance_id '" + inst.instance_id + "'");
        }
        out.push_back(std::move(inst));
    });
    return out;
}

struct LoadedTask {
    TaskSpec task;
    std::vector<Instance> instances;
};

inline LoadedTask load_task(const std::string& manifest_path, const std::string& instances_path) {
    LoadedTask out;
    try {
        out.task = parse_task_manifest(detail::read_file(manifest_path));
    } catch (const DataError& e) {
        throw DataError(manifest_path + ": " + e.what());
    }
    out.instances = parse_instances(detail::read_file(instances_path), out.task, instances_path);
    return out;
}

inline std::string serialize_instances(const std::vector<Instance>& instances) {
    std::string out;
    for (const auto& inst : instances) {
        out += serialize_instance(inst);
        out += '\n';
    }
    return out;
}

// Prompt sets are JSONL: one labeled instance per line plus a "rationale" field.
inline PromptSet parse_prompt_set(std::string_view text, const TaskSpec& task,
                                  const std::string& origin = "prompt_set") {
    PromptSet ps;
    ps.task_id = task.task_id;
    detail::for_each_jsonl(text, origin, [&](const json& j, std::size_t) {
        PromptExample ex;
        ex.instance = instance_from_json(j, task);
        if (!ex.instance.gold_label) throw DataError("prompt example '" + ex.instance.instance_id + "' has no gold label");
        ex.label = *ex.instance.gold_label;
        try {
            ex.rationale = j.at("rationale").get<std::string>();
        } catch (const json::exception& e) {
            throw DataError(std::string("prompt example: ") + e.what());
        }
        ps.examples.push_back(std::move(ex));
    });
    validate(ps, task);
    return ps;
}

inline PromptSet load_prompt_set(const std::string& path, const TaskSpec& task) {
    return parse_prompt_set(detail::read_file(path), task, path);
}

inline json to_json(const PromptSet& ps) {
    json examples = json::array();
    for (const auto& ex : ps.examples) {
        auto j = to_json(ex.instance);
        j["rationale"] = ex.rationale;
        examples.push_back(std::move(j));
    }
    return json{{"task_id", ps.task_id}, {"examples", examples}};
}

}  // namespace scotd
