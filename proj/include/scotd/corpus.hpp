#pragma once

// Prompt assembly, teacher sampling, and the distillation corpus.

#include "scotd/completion.hpp"
#include "scotd/cot_parser.hpp"
#include "scotd/detail/format.hpp"
#include "scotd/detail/hash.hpp"
#include "scotd/detail/parallel.hpp"
#include "scotd/error.hpp"
#include "scotd/task.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace scotd {

// Bumped whenever the rendered prompt layout changes; corpora from different versions do not mix.
inline constexpr int kPromptTemplateVersion = 1;

inline constexpr int kDefaultSamples = 30;
inline constexpr double kDefaultSamplingTemperature = 1.0;

struct TeacherParams {
    std::string model_id;
    double temperature = kDefaultSamplingTemperature;
    int max_tokens = kDefaultMaxTokens;

    friend bool operator==(const TeacherParams&, const TeacherParams&) = default;
};

struct CoTSample {
    std::string instance_id;
    int sample_index = 0;
    std::string raw_text;
    ParsedCoT parsed;
    std::optional<double> mean_logprob;
    TeacherParams teacher;

    friend bool operator==(const CoTSample&, const CoTSample&) = default;
};

// One step in a corpus' history: sampling, a filter, a restriction, a concatenation.
struct ProvenanceStep {
    std::string kind;
    std::optional<std::int64_t> budget;
    std::optional<std::int64_t> seed;
    json params = json::object();

    friend bool operator==(const ProvenanceStep&, const ProvenanceStep&) = default;
};

inline json to_json(const ProvenanceStep& p) {
    return json{{"kind", p.kind},
                {"budget", p.budget ? json(*p.budget) : json(nullptr)},
                {"seed", p.seed ? json(*p.seed) : json(nullptr)},
                {"params", p.params}};
}

inline ProvenanceStep provenance_from_json(const json& j) {
    ProvenanceStep p;
    p.kind = j.at("kind").get<std::string>();
    if (!j.at("budget").is_null()) p.budget = j.at("budget").get<std::int64_t>();
    if (!j.at("seed").is_null()) p.seed = j.at("seed").get<std::int64_t>();
    p.params = j.value("params", json::object());
    return p;
}

struct DistillationCorpus {
    std::string task_id;
    int template_version = kPromptTemplateVersion;
    std::string prompt_set_fingerprint;
    // Ordered by instance_id; each list ordered by sample_index.
    std::map<std::string, std::vector<CoTSample>> entries;
    std::vector<ProvenanceStep> provenance;

    std::size_t sample_count() const {
        std::size_t n = 0;
        for (const auto& [_, samples] : entries) n += samples.size();
        return n;
    }

    friend bool operator==(const DistillationCorpus&, const DistillationCorpus&) = default;
};

// Every entry must name a known instance; sample indices are unique per instance.
inline void validate(const DistillationCorpus& corpus, const std::vector<Instance>& instances) {
    std::set<std::string> known;
    for (const auto& inst : instances) known.insert(inst.instance_id);
    for (const auto& [id, samples] : corpus.entries) {
        if (!known.count(id)) throw DataError("corpus instance '" + id + "' is not in the task's instance set");
        std::set<int> seen;
        for (const auto& s : samples) {
            if (s.instance_id != id) throw DataError("sample filed under the wrong instance '" + id + "'");
            if (s.sample_index < 0 || !seen.insert(s.sample_index).second) {
                throw DataError("duplicate or negative sample_index under instance '" + id + "'");
            }
        }
    }
}

// ---- prompts ----

namespace detail {

inline void check_prompt_fields(const Instance& inst) {
    if (inst.question.find(kQuestionSeparator) != std::string::npos ||
        inst.question.find("\nAnswer Choices:") != std::string::npos) {
        throw InvalidArgument("separator collision in question of instance '" + inst.instance_id + "'");
    }
    for (const auto& [k, text] : inst.choices) {
        if (text.find('\n') != std::string::npos) {
            throw InvalidArgument("separator collision in choice '" + k + "' of instance '" + inst.instance_id + "'");
        }
    }
}

}  // namespace detail

// "Q: {question}\nAnswer Choices:\n(k) {text}\n...\nA:" with choices in option-key order.
inline std::string render_question_block(const Instance& inst, const TaskSpec& task) {
    detail::check_prompt_fields(inst);
    std::string out = "Q: " + inst.question + "\nAnswer Choices:\n";
    for (const auto& k : task.option_keys) {
        out += "(" + display_key(task, k) + ") " + inst.choices.at(k) + "\n";
    }
    out += "A:";
    return out;
}

// Few-shot teacher prompt: every demonstration with its rationale and answer, blank-line
// separated, followed by the target question up to "A:".
inline std::string build_prompt(const PromptSet& prompt_set, const Instance& target, const TaskSpec& task) {
    if (prompt_set.examples.empty()) throw InvalidArgument("prompt set is empty");
    if (prompt_set.task_id != target.task_id || prompt_set.task_id != task.task_id) {
        throw InvalidArgument("prompt set and target belong to different tasks");
    }
    std::string out;
    for (const auto& ex : prompt_set.examples) {
        out += render_question_block(ex.instance, task);
        out += ' ';
        out += render_target(ex.rationale, ex.label, task);
        out += kBlockSeparator;
    }
    out += render_question_block(target, task);
    return out;
}

// Few-shot prompt whose demonstrations carry labels but no rationales ("A: (k)").
inline std::string build_label_only_prompt(const PromptSet& prompt_set, const Instance& target, const TaskSpec& task) {
    if (prompt_set.examples.empty()) throw InvalidArgument("prompt set is empty");
    std::string out;
    for (const auto& ex : prompt_set.examples) {
        out += render_question_block(ex.instance, task);
        out += " (" + display_key(task, ex.label) + ")";
        out += kBlockSeparator;
    }
    out += render_question_block(target, task);
    return out;
}

inline std::string prompt_set_fingerprint(const PromptSet& prompt_set, const TaskSpec& task) {
    const json j{{"template_version", kPromptTemplateVersion}, {"task", to_json(task)}, {"prompt_set", to_json(prompt_set)}};
    return detail::sha256_hex(j.dump());
}

// ---- sampling ----

struct SamplingOptions {
    std::string model_id;
    int n_samples = kDefaultSamples;
    double temperature = kDefaultSamplingTemperature;
    int max_tokens = kDefaultMaxTokens;
    std::vector<std::string> stop_sequences{std::string(kBlockSeparator)};
    bool want_logprobs = true;
    std::size_t concurrency = 8;
    // Fingerprint of the driving configuration, recorded in provenance when set.
    std::string config_fingerprint;
};

inline CoTSample make_sample(const std::string& instance_id, int index, const Completion& completion,
                             const TaskSpec& task, const TeacherParams& teacher) {
    CoTSample s;
    s.instance_id = instance_id;
    s.sample_index = index;
    s.raw_text = completion.text;
    s.parsed = parse_cot(completion.text, task);
    if (completion.token_logprobs && !completion.token_logprobs->empty()) {
        s.mean_logprob = detail::round_sig6(mean_token_logprob(completion));
    }
    s.teacher = teacher;
    return s;
}

inline DistillationCorpus sample_corpus(const TaskSpec& task, const std::vector<Instance>& instances,
                                        const PromptSet& prompt_set, const SamplingOptions& options,
                                        CompletionService& client) {
    if (options.n_samples < 1) throw InvalidArgument("n_samples must be >= 1");
    validate(prompt_set, task);
    std::set<std::string> ids;
    for (const auto& inst : instances) {
        if (!ids.insert(inst.instance_id).second) throw DataError("duplicate instance_id '" + inst.instance_id + "'");
    }

    const TeacherParams teacher{options.model_id, options.temperature, options.max_tokens};
    std::vector<std::vector<CoTSample>> per_instance(instances.size());
    detail::parallel_for(instances.size(), options.concurrency, [&](std::size_t i) {
        const auto& inst = instances[i];
        try {
            CompletionRequest req;
            req.model_id = options.model_id;
            req.prompt = build_prompt(prompt_set, inst, task);
            req.temperature = options.temperature;
            req.num_samples = options.n_samples;
            req.max_tokens = options.max_tokens;
            req.stop_sequences = options.stop_sequences;
            req.want_logprobs = options.want_logprobs;
            const auto completions = client.complete(req);
            if (completions.size() != static_cast<std::size_t>(options.n_samples)) {
                throw UpstreamError("service returned the wrong number of completions");
            }
            for (std::size_t k = 0; k < completions.size(); ++k) {
                per_instance[i].push_back(make_sample(inst.instance_id, static_cast<int>(k), completions[k], task, teacher));
            }
        } catch (...) {
            rethrow_with_context("instance '" + inst.instance_id + "'");
        }
    });

    DistillationCorpus corpus;
    corpus.task_id = task.task_id;
    corpus.prompt_set_fingerprint = prompt_set_fingerprint(prompt_set, task);
    for (std::size_t i = 0; i < instances.size(); ++i) corpus.entries[instances[i].instance_id] = std::move(per_instance[i]);

    ProvenanceStep step;
    step.kind = "sample";
    step.budget = options.n_samples;
    step.params = json{{"model_id", options.model_id},
                       {"temperature", options.temperature},
                       {"max_tokens", options.max_tokens},
                       {"stop", options.stop_sequences}};
    if (!options.config_fingerprint.empty()) step.params["config_fingerprint"] = options.config_fingerprint;
    corpus.provenance.push_back(std::move(step));
    return corpus;
}

// Keeps sample indices < k for every instance (the first k draws of a larger corpus).
inline DistillationCorpus restrict_to_first_samples(const DistillationCorpus& corpus, int k) {
    if (k < 1) throw InvalidArgument("sample budget must be >= 1");
    DistillationCorpus out = corpus;
    for (auto& [_, samples] : out.entries) {
        std::erase_if(samples, [k](const CoTSample& s) { return s.sample_index >= k; });
    }
    out.provenance.push_back(ProvenanceStep{"first_k", k, std::nullopt, json::object()});
    return out;
}

// Keeps only the listed instances.
inline DistillationCorpus restrict_to_instances(const DistillationCorpus& corpus, const std::vector<Instance>& keep) {
    DistillationCorpus out = corpus;
    out.entries.clear();
    for (const auto& inst : keep) {
        if (auto it = corpus.entries.find(inst.instance_id); it != corpus.entries.end()) {
            out.entries.emplace(it->first, it->second);
        }
    }
    out.provenance.push_back(ProvenanceStep{"subset_instances", static_cast<std::int64_t>(out.entries.size()),
                                            std::nullopt, json::object()});
    return out;
}

// ---- training examples ----

enum class TrainingMode { scotd, label_only, greedy_cot };
enum class Setting { supervised, few_shot };

inline std::string_view to_string(TrainingMode m) {
    switch (m) {
        case TrainingMode::scotd: return "scotd";
        case TrainingMode::label_only: return "label_only";
        case TrainingMode::greedy_cot: return "greedy_cot";
    }
    return "scotd";
}

inline TrainingMode training_mode_from_string(std::string_view s) {
    if (s == "scotd") return TrainingMode::scotd;
    if (s == "label_only") return TrainingMode::label_only;
    if (s == "greedy_cot") return TrainingMode::greedy_cot;
    throw InvalidArgument("unknown training mode '" + std::string(s) + "'");
}

inline std::string_view to_string(Setting s) { return s == Setting::supervised ? "supervised" : "few_shot"; }

inline Setting setting_from_string(std::string_view s) {
    if (s == "supervised") return Setting::supervised;
    if (s == "few_shot") return Setting::few_shot;
    throw InvalidArgument("unknown setting '" + std::string(s) + "'");
}

struct TrainingExample {
    std::string prompt;
    std::string completion;
    std::string instance_id;
    json provenance;

    friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

inline json to_json(const TrainingExample& e) {
    return json{{"prompt", e.prompt}, {"completion", e.completion}, {"instance_id", e.instance_id}, {"provenance", e.provenance}};
}

// Student training pairs with zero-shot prompts.
//   scotd:      one pair per parseable sample, completion = "{rationale} {phrase} ({label})".
//   label_only: supervised -> one pair per instance with the gold label;
//               few-shot   -> one pair per parseable sample with the teacher's label.
//   greedy_cot: as scotd, but the corpus must hold one temperature-0 sample per instance.
inline std::vector<TrainingExample> to_training_examples(const DistillationCorpus& corpus,
                                                         const std::vector<Instance>& instances, const TaskSpec& task,
                                                         TrainingMode mode, Setting setting) {
    std::map<std::string, const Instance*> by_id;
    for (const auto& inst : instances) by_id[inst.instance_id] = &inst;

    if (mode == TrainingMode::greedy_cot) {
        for (const auto& [id, samples] : corpus.entries) {
            for (const auto& s : samples) {
                if (s.sample_index != 0 || s.teacher.temperature != 0.0) {
                    throw InvalidArgument("greedy_cot needs a corpus sampled with n_samples=1 at temperature 0");
                }
            }
        }
    }

    std::vector<TrainingExample> out;
    for (const auto& [id, samples] : corpus.entries) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw DataError("corpus instance '" + id + "' is not in the instance set");
        const Instance& inst = *it->second;
        if (setting == Setting::supervised && !inst.gold_label) {
            throw InvalidArgument("supervised setting needs a gold label for instance '" + id + "'");
        }
        const auto prompt = render_question_block(inst, task);
        const json base{{"mode", std::string(to_string(mode))},
                        {"setting", std::string(to_string(setting))},
                        {"prompt_set_fingerprint", corpus.prompt_set_fingerprint}};

        if (mode == TrainingMode::label_only && setting == Setting::supervised) {
            auto prov = base;
            prov["sample_index"] = nullptr;
            out.push_back({prompt, render_answer(*inst.gold_label, task), id, prov});
            continue;
        }
        for (const auto& s : samples) {
            if (!s.parsed.ok()) continue;
            auto prov = base;
            prov["sample_index"] = s.sample_index;
            if (mode == TrainingMode::label_only) {
                out.push_back({prompt, render_answer(*s.parsed.predicted_label, task), id, prov});
            } else {
                const auto& r = s.parsed.rationale_text;
                if (detail::trim(r).empty() || r.find(kBlockSeparator) != std::string::npos) continue;
                out.push_back({prompt, render_target(s.parsed.rationale_text, *s.parsed.predicted_label, task), id, prov});
            }
        }
    }
    return out;
}

}  // namespace scotd
