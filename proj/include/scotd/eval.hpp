#pragma once

// Accuracy evaluation of any completion-contract model, and the experiment drivers built on it:
// rationale-count, data-fraction and model-size sweeps, contrast-set pairs, and multi-task corpora.

#include "scotd/aggregation.hpp"
#include "scotd/corpus.hpp"
#include "scotd/corpus_io.hpp"
#include "scotd/detail/format.hpp"
#include "scotd/detail/hash.hpp"
#include "scotd/detail/parallel.hpp"
#include "scotd/detail/random.hpp"
#include "scotd/filters.hpp"
#include "scotd/task.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace scotd {

enum class DecodeStrategy { no_cot, greedy, self_consistency };

inline std::string_view to_string(DecodeStrategy d) {
    switch (d) {
        case DecodeStrategy::no_cot: return "no_cot";
        case DecodeStrategy::greedy: return "greedy";
        case DecodeStrategy::self_consistency: return "self_consistency";
    }
    return "greedy";
}

inline DecodeStrategy decode_strategy_from_string(std::string_view s) {
    if (s == "no_cot") return DecodeStrategy::no_cot;
    if (s == "greedy") return DecodeStrategy::greedy;
    if (s == "self_consistency") return DecodeStrategy::self_consistency;
    throw InvalidArgument("unknown decode strategy '" + std::string(s) + "'");
}

struct EvalParams {
    DecodeOptions decode;
    int n = kDefaultVoteSamples;                  // self-consistency sample count
    double temperature = kDefaultVoteTemperature;  // self-consistency temperature
    std::size_t concurrency = 8;
    // Pipeline configuration fingerprint folded into the report fingerprint when set.
    std::string config_fingerprint;
};

struct InstanceResult {
    std::string instance_id;
    std::optional<OptionKey> predicted;
    OptionKey gold;
    bool correct = false;

    friend bool operator==(const InstanceResult&, const InstanceResult&) = default;
};

struct VoteStats {
    std::size_t instances = 0;
    std::size_t total_votes = 0;
    std::size_t valid_votes = 0;
    std::size_t ties_broken = 0;
    std::size_t no_winner = 0;

    friend bool operator==(const VoteStats&, const VoteStats&) = default;
};

struct EvalReport {
    std::string task_id;
    std::string model_id;
    DecodeStrategy decode = DecodeStrategy::greedy;
    double accuracy = 0.0;
    std::size_t n_instances = 0;
    std::vector<InstanceResult> per_instance;  // sorted by instance_id
    std::optional<VoteStats> vote_stats;
    std::string config_fingerprint;

    std::size_t correct_count() const {
        return static_cast<std::size_t>(std::count_if(per_instance.begin(), per_instance.end(), [](const auto& r) { return r.correct; }));
    }

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Label-only few-shot completions are short: the answer key and little else.
inline constexpr int kNoCotMaxTokens = kMinMaxTokens;

namespace detail {

inline std::string eval_fingerprint(const TaskSpec& task, const std::vector<Instance>& sorted_test, DecodeStrategy decode,
                                    const EvalParams& params) {
    json ids = json::array();
    for (const auto& inst : sorted_test) ids.push_back(json{inst.instance_id, serialize_instance(inst)});
    json j{{"task", to_json(task)},
           {"model_id", params.decode.model_id},
           {"decode", std::string(to_string(decode))},
           {"max_tokens", params.decode.max_tokens},
           {"stop", params.decode.stop_sequences},
           {"prompt_set", params.decode.prompt_set ? to_json(*params.decode.prompt_set) : json(nullptr)},
           {"test", ids},
           {"config_fingerprint", params.config_fingerprint}};
    if (decode == DecodeStrategy::self_consistency) {
        j["n"] = params.n;
        j["temperature"] = params.temperature;
    }
    return sha256_hex(j.dump());
}

}  // namespace detail

// Runs `decode` on every test instance. Unparseable or absent predictions count as incorrect.
inline EvalReport evaluate(const TaskSpec& task, std::vector<Instance> test, CompletionService& client,
                           DecodeStrategy decode, const EvalParams& params) {
    if (test.empty()) throw InvalidArgument("empty test set");
    for (const auto& inst : test) {
        if (!inst.gold_label) throw InvalidArgument("test instance '" + inst.instance_id + "' has no gold label");
    }
    if (decode == DecodeStrategy::no_cot && !params.decode.prompt_set) {
        throw InvalidArgument("no_cot decoding needs a prompt set for its label-only demonstrations");
    }
    std::sort(test.begin(), test.end(), [](const auto& a, const auto& b) { return a.instance_id < b.instance_id; });

    std::vector<InstanceResult> results(test.size());
    std::vector<std::optional<VoteResult>> votes(test.size());
    const auto errors = detail::parallel_for_collect(test.size(), params.concurrency, [&](std::size_t i) {
        const auto& inst = test[i];
        std::optional<OptionKey> predicted;
        switch (decode) {
            case DecodeStrategy::no_cot: {
                CompletionRequest req;
                req.model_id = params.decode.model_id;
                req.prompt = build_label_only_prompt(*params.decode.prompt_set, inst, task);
                req.temperature = 0.0;
                req.num_samples = 1;
                req.max_tokens = kNoCotMaxTokens;
                req.stop_sequences = {"\n"};
                req.want_logprobs = false;
                const auto c = client.complete(req);
                if (c.size() != 1) throw UpstreamError("expected exactly one completion");
                predicted = parse_direct_answer(c.front().text, task).predicted_label;
                break;
            }
            case DecodeStrategy::greedy:
                predicted = greedy_predict(inst, task, client, params.decode).predicted_label;
                break;
            case DecodeStrategy::self_consistency:
                votes[i] = self_consistent_predict(inst, task, client, params.decode, params.n, params.temperature);
                predicted = votes[i]->winner;
                break;
        }
        results[i] = InstanceResult{inst.instance_id, predicted, *inst.gold_label, predicted && *predicted == *inst.gold_label};
    });

    std::string failed, first_reason;
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (!errors[i]) continue;
        if (first_reason.empty()) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const std::exception& e) {
                first_reason = e.what();
            }
        }
        failed += (failed.empty() ? "" : ", ") + test[i].instance_id;
    }
    if (!failed.empty()) throw UpstreamError("evaluation failed for instances: " + failed + " (first error: " + first_reason + ")");

    EvalReport report;
    report.task_id = task.task_id;
    report.model_id = params.decode.model_id;
    report.decode = decode;
    report.n_instances = results.size();
    report.per_instance = std::move(results);
    report.accuracy = static_cast<double>(report.correct_count()) / static_cast<double>(report.n_instances);
    if (decode == DecodeStrategy::self_consistency) {
        VoteStats vs;
        for (const auto& v : votes) {
            ++vs.instances;
            vs.total_votes += static_cast<std::size_t>(v->total_votes);
            vs.valid_votes += static_cast<std::size_t>(v->valid_votes);
            vs.ties_broken += v->tie_broken ? 1 : 0;
            vs.no_winner += v->winner ? 0 : 1;
        }
        report.vote_stats = vs;
    }
    report.config_fingerprint = detail::eval_fingerprint(task, test, decode, params);
    return report;
}

inline json to_json(const EvalReport& r) {
    json per = json::array();
    for (const auto& p : r.per_instance) {
        per.push_back(json{{"instance_id", p.instance_id},
                           {"predicted", p.predicted ? json(*p.predicted) : json(nullptr)},
                           {"gold", p.gold},
                           {"correct", p.correct}});
    }
    json j{{"task_id", r.task_id},
           {"model_id", r.model_id},
           {"decode", std::string(to_string(r.decode))},
           {"accuracy", r.accuracy},
           {"n_instances", r.n_instances},
           {"per_instance", per},
           {"config_fingerprint", r.config_fingerprint}};
    if (r.vote_stats) {
        j["vote_stats"] = json{{"instances", r.vote_stats->instances},
                               {"total_votes", r.vote_stats->total_votes},
                               {"valid_votes", r.vote_stats->valid_votes},
                               {"ties_broken", r.vote_stats->ties_broken},
                               {"no_winner", r.vote_stats->no_winner}};
    } else {
        j["vote_stats"] = nullptr;
    }
    return j;
}

// ---- sweeps ----

enum class SweepAxis { n_rationales, data_fraction, model_size };

inline std::string_view to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::n_rationales: return "n_rationales";
        case SweepAxis::data_fraction: return "data_fraction";
        case SweepAxis::model_size: return "model_size";
    }
    return "n_rationales";
}

inline SweepAxis sweep_axis_from_string(std::string_view s) {
    if (s == "n_rationales") return SweepAxis::n_rationales;
    if (s == "data_fraction") return SweepAxis::data_fraction;
    if (s == "model_size") return SweepAxis::model_size;
    throw InvalidArgument("unknown sweep axis '" + std::string(s) + "'");
}

struct SweepPoint {
    double x = 0.0;
    std::string label;
    EvalReport report;

    friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

struct SweepResult {
    SweepAxis axis = SweepAxis::n_rationales;
    std::vector<SweepPoint> points;  // ascending, unique x

    friend bool operator==(const SweepResult&, const SweepResult&) = default;
};

// A trained student reachable through the completion contract.
struct ServedModel {
    std::shared_ptr<CompletionService> client;
    std::string model_id;
};

struct TrainJob {
    std::string run_label;
    std::string base_model;
    std::vector<TrainingExample> examples;
};

// Fine-tunes a student on a training set and serves it. The production implementation shells
// out to an external trainer (see ShellTrainer); tests plug in fixtures.
class Trainer {
public:
    virtual ~Trainer() = default;
    virtual ServedModel train(const TrainJob& job) = 0;
};

// Everything needed to turn a sampled corpus into an evaluated student.
struct ExperimentPipeline {
    TaskSpec task;
    DistillationCorpus corpus;  // sampled teacher corpus (N per instance)
    std::vector<FilterSpec> filters;
    TrainingMode mode = TrainingMode::scotd;
    Setting setting = Setting::supervised;
    std::string base_model;
    DecodeStrategy decode = DecodeStrategy::greedy;
    EvalParams eval;
    std::uint64_t seed = 0;
    Trainer* trainer = nullptr;
    Embedder* embedder = nullptr;
    std::string embedder_name = "fallback";
};

namespace detail {

inline EvalReport train_and_evaluate(const ExperimentPipeline& cfg, const DistillationCorpus& corpus,
                                     const std::vector<Instance>& train, const std::vector<Instance>& test,
                                     const std::string& run_label, const std::string& base_model) {
    if (!cfg.trainer) throw ConfigError("trainer unavailable: no trainer configured");
    const auto filtered = apply_filters(corpus, cfg.filters, train, cfg.embedder, cfg.embedder_name);
    TrainJob job{run_label, base_model, to_training_examples(filtered, train, cfg.task, cfg.mode, cfg.setting)};
    auto served = cfg.trainer->train(job);
    if (!served.client) throw UpstreamError("trainer returned no model for run '" + run_label + "'");
    auto params = cfg.eval;
    params.decode.model_id = served.model_id;
    return evaluate(cfg.task, test, *served.client, cfg.decode, params);
}

inline std::string format_x(double x) { return format_sig6(x); }

}  // namespace detail

// Trains and evaluates one student per budget b on the first b teacher samples of every instance.
inline SweepResult run_n_rationales_sweep(const ExperimentPipeline& cfg, const std::vector<Instance>& train,
                                          const std::vector<Instance>& test, std::vector<int> budgets) {
    if (budgets.empty()) throw InvalidArgument("no budgets given");
    std::sort(budgets.begin(), budgets.end());
    if (std::adjacent_find(budgets.begin(), budgets.end()) != budgets.end()) throw InvalidArgument("duplicate budgets");
    int available = 0;
    for (const auto& [_, samples] : cfg.corpus.entries) {
        for (const auto& s : samples) available = std::max(available, s.sample_index + 1);
    }
    if (budgets.front() < 1 || budgets.back() > available) {
        throw InvalidArgument("budgets must lie in [1, " + std::to_string(available) + "]");
    }
    SweepResult out{SweepAxis::n_rationales, {}};
    for (int b : budgets) {
        const auto label = "n" + std::to_string(b);
        out.points.push_back({static_cast<double>(b), label,
                              detail::train_and_evaluate(cfg, restrict_to_first_samples(cfg.corpus, b), train, test, label,
                                                         cfg.base_model)});
    }
    return out;
}

// Seeded nested subsets: every fraction takes a prefix of the same permutation, so smaller
// subsets are contained in larger ones. Returned in instance_id order.
inline std::vector<Instance> nested_subset(const std::vector<Instance>& instances, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction must lie in (0, 1]");
    std::vector<Instance> sorted = instances;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.instance_id < b.instance_id; });
    detail::Rng rng(detail::splitmix64(seed));
    const auto order = rng.choose(sorted.size(), sorted.size());
    auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(sorted.size()) - 1e-9));
    k = std::clamp<std::size_t>(k, std::min<std::size_t>(1, sorted.size()), sorted.size());
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());
    std::vector<Instance> out;
    for (auto i : chosen) out.push_back(sorted[i]);
    return out;
}

inline SweepResult run_data_fraction_sweep(const ExperimentPipeline& cfg, const std::vector<Instance>& train,
                                           const std::vector<Instance>& test, std::vector<double> fractions) {
    if (fractions.empty()) throw InvalidArgument("no fractions given");
    std::sort(fractions.begin(), fractions.end());
    if (std::adjacent_find(fractions.begin(), fractions.end()) != fractions.end()) throw InvalidArgument("duplicate fractions");
    SweepResult out{SweepAxis::data_fraction, {}};
    for (double f : fractions) {
        const auto subset = nested_subset(train, f, cfg.seed);
        const auto label = "f" + detail::format_x(f);
        out.points.push_back({f, label,
                              detail::train_and_evaluate(cfg, restrict_to_instances(cfg.corpus, subset), subset, test, label,
                                                         cfg.base_model)});
    }
    return out;
}

struct ModelSize {
    std::string base_model;  // opaque label handed to the trainer
    double parameters = 0.0;
};

inline SweepResult run_model_size_sweep(const ExperimentPipeline& cfg, const std::vector<Instance>& train,
                                        const std::vector<Instance>& test, std::vector<ModelSize> sizes) {
    if (sizes.empty()) throw InvalidArgument("no model sizes given");
    std::sort(sizes.begin(), sizes.end(), [](const auto& a, const auto& b) { return a.parameters < b.parameters; });
    for (std::size_t i = 1; i < sizes.size(); ++i) {
        if (sizes[i].parameters == sizes[i - 1].parameters) throw InvalidArgument("duplicate model sizes");
    }
    SweepResult out{SweepAxis::model_size, {}};
    for (const auto& s : sizes) {
        out.points.push_back({s.parameters, s.base_model,
                              detail::train_and_evaluate(cfg, cfg.corpus, train, test, "size-" + s.base_model, s.base_model)});
    }
    return out;
}

inline std::string sweep_csv(const SweepResult& sweep) {
    std::string out = "axis,x,task,decode,accuracy,n\n";
    for (const auto& p : sweep.points) {
        out += std::string(to_string(sweep.axis)) + "," + detail::format_x(p.x) + "," + p.report.task_id + "," +
               std::string(to_string(p.report.decode)) + "," + detail::format_sig6(p.report.accuracy) + "," +
               std::to_string(p.report.n_instances) + "\n";
    }
    return out;
}

inline std::string report_csv(const EvalReport& r) {
    return "axis,x,task,decode,accuracy,n\nnone,0," + r.task_id + "," + std::string(to_string(r.decode)) + "," +
           detail::format_sig6(r.accuracy) + "," + std::to_string(r.n_instances) + "\n";
}

inline json to_json(const SweepResult& s) {
    json points = json::array();
    for (const auto& p : s.points) points.push_back(json{{"x", p.x}, {"label", p.label}, {"report", to_json(p.report)}});
    return json{{"axis", std::string(to_string(s.axis))}, {"points", points}};
}

// ---- contrast sets ----

inline constexpr std::size_t kDefaultContrastTokenBudget = 700;

// Keeps the first `budget` whitespace-separated tokens of `text`, original spacing intact.
inline std::string truncate_tokens(const std::string& text, std::size_t budget) {
    std::size_t tokens = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && detail::is_space(text[i])) ++i;
        if (i >= text.size()) break;
        if (tokens == budget) return std::string(detail::trim_right(std::string_view(text).substr(0, i)));
        while (i < text.size() && !detail::is_space(text[i])) ++i;
        ++tokens;
    }
    return text;
}

struct ContrastResult {
    EvalReport original;
    EvalReport contrast;
    double gap = 0.0;  // original accuracy minus contrast accuracy
};

inline ContrastResult evaluate_contrast_pair(const TaskSpec& task, std::vector<Instance> original, std::vector<Instance> contrast,
                                             CompletionService& client, DecodeStrategy decode, const EvalParams& params,
                                             std::size_t token_budget = kDefaultContrastTokenBudget) {
    if (task.kind != TaskKind::binary_classification) throw InvalidArgument("contrast evaluation needs a binary classification task");
    for (auto* set : {&original, &contrast}) {
        for (auto& inst : *set) inst.question = truncate_tokens(inst.question, token_budget);
    }
    ContrastResult r{evaluate(task, std::move(original), client, decode, params),
                     evaluate(task, std::move(contrast), client, decode, params), 0.0};
    r.gap = r.original.accuracy - r.contrast.accuracy;
    return r;
}

// ---- multi-task corpora ----

inline std::string qualified_id(const std::string& task_id, const std::string& instance_id) {
    return task_id + "/" + instance_id;
}

// Instances renamed the way concat_corpora renames entries of a multi-task corpus.
inline std::vector<Instance> qualify_instances(const std::vector<Instance>& instances) {
    std::vector<Instance> out = instances;
    for (auto& inst : out) inst.instance_id = qualified_id(inst.task_id, inst.instance_id);
    return out;
}

// Concatenates corpora for multi-task training. Corpora of one task are merged as-is; when task ids
// differ, instance ids become "{task_id}/{instance_id}" and the result's task_id joins them with '+'.
inline DistillationCorpus concat_corpora(const std::vector<DistillationCorpus>& corpora) {
    if (corpora.empty()) throw InvalidArgument("nothing to concatenate");
    if (corpora.size() == 1) return corpora.front();
    std::set<std::string> task_ids;
    for (const auto& c : corpora) {
        task_ids.insert(c.task_id);
        if (c.template_version != corpora.front().template_version) {
            throw InvalidArgument("cannot concatenate corpora built with different prompt templates");
        }
    }
    const bool multi_task = task_ids.size() > 1;

    DistillationCorpus out;
    out.template_version = corpora.front().template_version;
    std::string joined_tasks, joined_fps;
    for (const auto& id : task_ids) joined_tasks += (joined_tasks.empty() ? "" : "+") + id;
    out.task_id = multi_task ? joined_tasks : corpora.front().task_id;
    json sources = json::array();
    std::set<std::string> fingerprints;
    for (const auto& c : corpora) {
        fingerprints.insert(c.prompt_set_fingerprint);
        json prov = json::array();
        for (const auto& p : c.provenance) prov.push_back(to_json(p));
        sources.push_back(json{{"task_id", c.task_id},
                               {"prompt_set_fingerprint", c.prompt_set_fingerprint},
                               {"n_samples", c.sample_count()},
                               {"provenance", prov}});
        for (const auto& [id, samples] : c.entries) {
            const auto key = multi_task ? qualified_id(c.task_id, id) : id;
            if (out.entries.count(key)) throw InvalidArgument("instance id collision: '" + key + "'");
            auto& dst = out.entries[key];
            for (auto s : samples) {
                s.instance_id = key;
                dst.push_back(std::move(s));
            }
        }
    }
    if (fingerprints.size() == 1) {
        out.prompt_set_fingerprint = *fingerprints.begin();
    } else {
        for (const auto& f : fingerprints) joined_fps += f + ";";
        out.prompt_set_fingerprint = detail::sha256_hex(joined_fps);
    }
    out.provenance.push_back(ProvenanceStep{"concat", static_cast<std::int64_t>(corpora.size()), std::nullopt,
                                            json{{"sources", sources}}});
    return out;
}

// ---- external trainer ----

// Runs a shell command that trains on a training JSONL and leaves a served model behind.
// Placeholders substituted in the command: {train} (training JSONL path), {out} (run directory),
// {base_model}, {run}. On success the command must write {out}/serving.json:
// {"endpoint": "http://host:port/v1/completions", "model": "<model id>"}.
class ShellTrainer : public Trainer {
public:
    using ClientFactory = std::function<std::shared_ptr<CompletionService>(const std::string& endpoint)>;

    ShellTrainer(std::string command_template, std::filesystem::path work_dir, ClientFactory make_client)
        : command_(std::move(command_template)), work_dir_(std::move(work_dir)), make_client_(std::move(make_client)) {}

    ServedModel train(const TrainJob& job) override {
        if (job.examples.empty()) throw DataError("run '" + job.run_label + "': empty training set");
        const auto run_dir = work_dir_ / job.run_label;
        std::filesystem::create_directories(run_dir);
        const auto train_path = run_dir / "train.jsonl";
        write_training_examples(job.examples, train_path);
        std::filesystem::remove(run_dir / "serving.json");

        auto cmd = command_;
        substitute(cmd, "{train}", train_path.string());
        substitute(cmd, "{out}", run_dir.string());
        substitute(cmd, "{base_model}", job.base_model);
        substitute(cmd, "{run}", job.run_label);
        const int rc = std::system(cmd.c_str());
        if (rc != 0) throw UpstreamError("trainer command failed for run '" + job.run_label + "' (status " + std::to_string(rc) + ")");

        json serving;
        try {
            serving = json::parse(detail::read_file((run_dir / "serving.json").string()));
            return ServedModel{make_client_(serving.at("endpoint").get<std::string>()), serving.at("model").get<std::string>()};
        } catch (const json::exception& e) {
            throw UpstreamError("run '" + job.run_label + "': malformed serving.json: " + e.what());
        } catch (const DataError& e) {
            throw UpstreamError("run '" + job.run_label + "': trainer left no serving.json");
        }
    }

private:
    static std::string shell_quote(const std::string& s) {
        std::string out = "'";
        for (char c : s) {
            if (c == '\'') {
                out += "'\\''";
            } else {
                out += c;
            }
        }
        return out + "'";
    }

    static void substitute(std::string& s, const std::string& key, const std::string& value) {
        const auto quoted = shell_quote(value);
        for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + quoted.size())) {
            s.replace(pos, key.size(), quoted);
        }
    }

    std::string command_;
    std::filesystem::path work_dir_;
    ClientFactory make_client_;
};

}  // namespace scotd
