// scotd: command-line front end for building chain-of-thought distillation corpora and
// evaluating students.
//
//   scotd sample  --config run.json [--n 30 --temperature 1.0]
//   scotd filter  --config run.json --in corpus.jsonl --kind diversity_k --budget 5
//   scotd build   --config run.json --in corpus.filtered.jsonl --mode scotd
//   scotd eval    --config run.json --decode self_consistency --n 30 --temperature 0.7
//   scotd sweep   --config run.json --in corpus.jsonl --axis n_rationales --values 1,5,10,20,30
//   scotd stats   --config run.json --in corpus.jsonl
//
// Exit codes: 0 ok, 2 config error, 3 upstream service error, 4 data error.

#include "scotd.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using scotd::json;

namespace {

struct Flags {
    std::string config_path;
    bool dry_run = false;
    std::string in;
    std::string out;
    json overrides = json::object();
};

void print_error(const char* kind, const std::string& message, const std::vector<std::string>& problems, int code) {
    json rec{{"error", kind}, {"message", message}, {"exit_code", code}};
    if (!problems.empty()) rec["problems"] = problems;
    std::cerr << rec.dump() << "\n";
}

scotd::PipelineConfig load_config(const Flags& flags) {
    json raw = json::object();
    if (!flags.config_path.empty()) {
        if (!fs::is_regular_file(flags.config_path)) throw scotd::ConfigError("config file '" + flags.config_path + "' does not exist");
        try {
            raw = json::parse(scotd::detail::read_file(flags.config_path));
        } catch (const json::parse_error& e) {
            throw scotd::ConfigError(std::string("config file is not valid JSON: ") + e.what());
        }
    }
    raw.merge_patch(flags.overrides);
    return scotd::config_from_json(raw);
}

std::shared_ptr<scotd::TeacherClient> make_client(const scotd::ServiceConfig& svc, const std::string& endpoint) {
    const char* key = svc.api_key_env.empty() ? nullptr : std::getenv(svc.api_key_env.c_str());
    auto transport = std::make_shared<scotd::HttpTransport>(endpoint, key ? key : "");
    auto cache = svc.cache_dir.empty() ? std::make_shared<scotd::ContentStore>()
                                       : std::make_shared<scotd::ContentStore>(fs::path(svc.cache_dir));
    scotd::ClientOptions opts;
    opts.concurrency = svc.concurrency;
    opts.retry.max_retries = svc.retries;
    return std::make_shared<scotd::TeacherClient>(std::move(transport), std::move(cache), opts);
}

std::unique_ptr<scotd::Embedder> make_embedder(const scotd::PipelineConfig& cfg) {
    if (cfg.embedder_mode == "remote") {
        auto cache = cfg.teacher.cache_dir.empty() ? std::make_shared<scotd::ContentStore>()
                                                   : std::make_shared<scotd::ContentStore>(fs::path(cfg.teacher.cache_dir));
        return std::make_unique<scotd::RemoteEmbedder>(std::make_shared<scotd::HttpTransport>(cfg.embedder_endpoint),
                                                       cfg.embedder_model, cache);
    }
    return std::make_unique<scotd::FallbackEmbedder>();
}

std::string out_path(const Flags& flags, const scotd::PipelineConfig& cfg, const char* default_name) {
    return flags.out.empty() ? (fs::path(cfg.output_dir) / default_name).string() : flags.out;
}

std::string in_path(const Flags& flags, const scotd::PipelineConfig& cfg, const char* default_name) {
    const auto path = flags.in.empty() ? (fs::path(cfg.output_dir) / default_name).string() : flags.in;
    if (!fs::is_regular_file(path)) throw scotd::ConfigError("input corpus '" + path + "' does not exist");
    return path;
}

void print_plan(const std::string& command, const scotd::PipelineConfig& cfg, json details) {
    json plan{{"command", command},
              {"dry_run", true},
              {"config_fingerprint", scotd::config_fingerprint(cfg)},
              {"config", scotd::to_json(cfg)},
              {"plan", std::move(details)}};
    std::cout << plan.dump(2) << "\n";
}

void write_text(const std::string& path, const std::string& content) { scotd::detail::write_file_locked(path, content); }

// ---- subcommands ----

int cmd_sample(const Flags& flags) {
    const auto cfg = load_config(flags);
    scotd::validate(cfg, {.task = true, .prompt_set = true, .teacher = true});
    const auto loaded = scotd::load_task(cfg.task_manifest, cfg.task_instances);
    const auto prompts = scotd::load_prompt_set(cfg.prompt_set, loaded.task);
    for (const auto& inst : loaded.instances) scotd::build_prompt(prompts, inst, loaded.task);
    const auto out = out_path(flags, cfg, "corpus.jsonl");
    if (flags.dry_run) {
        print_plan("sample", cfg, json{{"instances", loaded.instances.size()},
                                       {"samples_per_instance", cfg.n_samples},
                                       {"temperature", cfg.sampling_temperature},
                                       {"teacher", cfg.teacher.endpoint},
                                       {"output", out}});
        return 0;
    }
    auto client = make_client(cfg.teacher, cfg.teacher.endpoint);
    scotd::SamplingOptions opts;
    opts.model_id = cfg.teacher.model;
    opts.n_samples = cfg.n_samples;
    opts.temperature = cfg.sampling_temperature;
    opts.max_tokens = cfg.teacher.max_tokens;
    opts.concurrency = cfg.teacher.concurrency;
    opts.config_fingerprint = scotd::config_fingerprint(cfg);
    const auto corpus = scotd::sample_corpus(loaded.task, loaded.instances, prompts, opts, *client);
    scotd::write_corpus(corpus, out);
    std::cout << json{{"output", out}, {"instances", corpus.entries.size()}, {"samples", corpus.sample_count()},
                      {"network_calls", client->network_calls()}}.dump() << "\n";
    return 0;
}

struct SingleFilter {
    std::string kind;
    int budget = scotd::kDefaultDownsampleBudget;
    std::optional<std::uint64_t> seed;
};

int cmd_filter(const Flags& flags, const SingleFilter& flag) {
    const auto cfg = load_config(flags);
    std::optional<scotd::FilterSpec> single;
    if (!flag.kind.empty()) {
        if (flag.budget < 1) throw scotd::ConfigError("--budget must be >= 1");
        single = scotd::FilterSpec{scotd::filter_kind_from_string(flag.kind), flag.budget, flag.seed.value_or(cfg.seed)};
    }
    scotd::validate(cfg, {.task = true});
    const auto loaded = scotd::load_task(cfg.task_manifest, cfg.task_instances);
    const auto in = in_path(flags, cfg, "corpus.jsonl");
    const auto corpus = scotd::read_corpus(in);
    scotd::validate(corpus, loaded.instances);
    const auto chain = single ? std::vector<scotd::FilterSpec>{*single} : cfg.filters;
    if (chain.empty()) throw scotd::ConfigError("no filter given: pass --kind or declare filters in the config");
    const auto out = out_path(flags, cfg, "corpus.filtered.jsonl");
    if (flags.dry_run) {
        json steps = json::array();
        for (const auto& f : chain) steps.push_back(scotd::to_json(f));
        print_plan("filter", cfg, json{{"input", in}, {"filters", steps}, {"output", out}});
        return 0;
    }
    auto embedder = make_embedder(cfg);
    const auto filtered = scotd::apply_filters(corpus, chain, loaded.instances, embedder.get(), cfg.embedder_mode);
    scotd::write_corpus(filtered, out);
    std::cout << json{{"output", out}, {"samples_before", corpus.sample_count()}, {"samples_after", filtered.sample_count()}}.dump()
              << "\n";
    return 0;
}

int cmd_build(const Flags& flags) {
    const auto cfg = load_config(flags);
    scotd::validate(cfg, {.task = true});
    const auto loaded = scotd::load_task(cfg.task_manifest, cfg.task_instances);
    const auto in = in_path(flags, cfg, "corpus.filtered.jsonl");
    const auto corpus = scotd::read_corpus(in);
    scotd::validate(corpus, loaded.instances);
    const auto examples = scotd::to_training_examples(corpus, loaded.instances, loaded.task, cfg.training_mode, cfg.setting);
    const auto out = out_path(flags, cfg, "train.jsonl");
    if (flags.dry_run) {
        print_plan("build", cfg, json{{"input", in}, {"examples", examples.size()}, {"output", out}});
        return 0;
    }
    scotd::write_training_examples(examples, out);
    std::cout << json{{"output", out}, {"examples", examples.size()}}.dump() << "\n";
    return 0;
}

scotd::EvalParams eval_params(const scotd::PipelineConfig& cfg, const std::optional<scotd::PromptSet>& prompts) {
    scotd::EvalParams p;
    p.decode.model_id = cfg.student.model;
    p.decode.max_tokens = cfg.student.max_tokens;
    if (cfg.eval_few_shot || cfg.decode == scotd::DecodeStrategy::no_cot) p.decode.prompt_set = prompts;
    p.n = cfg.eval_n;
    p.temperature = cfg.eval_temperature;
    p.concurrency = cfg.student.concurrency;
    p.config_fingerprint = scotd::config_fingerprint(cfg);
    return p;
}

int cmd_eval(const Flags& flags) {
    const auto cfg = load_config(flags);
    scotd::validate(cfg, {.task = true, .test = true, .student = true});
    const auto loaded = scotd::load_task(cfg.task_manifest, cfg.task_instances);
    const auto test = scotd::parse_instances(scotd::detail::read_file(cfg.test_instances), loaded.task, cfg.test_instances);
    std::optional<scotd::PromptSet> prompts;
    if (cfg.eval_few_shot || cfg.decode == scotd::DecodeStrategy::no_cot) prompts = scotd::load_prompt_set(cfg.prompt_set, loaded.task);
    std::vector<scotd::Instance> contrast;
    if (!cfg.contrast_instances.empty()) {
        contrast = scotd::parse_instances(scotd::detail::read_file(cfg.contrast_instances), loaded.task, cfg.contrast_instances);
    }
    const auto report_path = (fs::path(cfg.output_dir) / "report.json").string();
    if (flags.dry_run) {
        print_plan("eval", cfg, json{{"test_instances", test.size()},
                                     {"contrast_instances", contrast.size()},
                                     {"decode", std::string(scotd::to_string(cfg.decode))},
                                     {"student", cfg.student.endpoint},
                                     {"output", report_path}});
        return 0;
    }
    auto client = make_client(cfg.student, cfg.student.endpoint);
    const auto params = eval_params(cfg, prompts);
    const auto report = scotd::evaluate(loaded.task, test, *client, cfg.decode, params);
    write_text(report_path, scotd::to_json(report).dump(2) + "\n");
    write_text((fs::path(cfg.output_dir) / "report.csv").string(), scotd::report_csv(report));
    json summary{{"output", report_path}, {"accuracy", report.accuracy}, {"n", report.n_instances}};
    if (!contrast.empty()) {
        const auto pair = scotd::evaluate_contrast_pair(loaded.task, test, contrast, *client, cfg.decode, params);
        write_text((fs::path(cfg.output_dir) / "contrast.json").string(),
                   json{{"original", scotd::to_json(pair.original)}, {"contrast", scotd::to_json(pair.contrast)}, {"gap", pair.gap}}
                           .dump(2) + "\n");
        summary["contrast_gap"] = pair.gap;
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_sweep(const Flags& flags) {
    const auto cfg = load_config(flags);
    scotd::validate(cfg, {.task = true, .test = true, .student = true, .trainer = true});
    const auto loaded = scotd::load_task(cfg.task_manifest, cfg.task_instances);
    const auto test = scotd::parse_instances(scotd::detail::read_file(cfg.test_instances), loaded.task, cfg.test_instances);
    const auto in = in_path(flags, cfg, "corpus.jsonl");
    const auto corpus = scotd::read_corpus(in);
    scotd::validate(corpus, loaded.instances);
    std::optional<scotd::PromptSet> prompts;
    if (cfg.eval_few_shot || cfg.decode == scotd::DecodeStrategy::no_cot) prompts = scotd::load_prompt_set(cfg.prompt_set, loaded.task);
    if (flags.dry_run) {
        print_plan("sweep", cfg, json{{"input", in},
                                      {"axis", std::string(scotd::to_string(cfg.sweep_axis))},
                                      {"values", cfg.sweep_values},
                                      {"output", (fs::path(cfg.output_dir) / "sweep.json").string()}});
        return 0;
    }
    auto embedder = make_embedder(cfg);
    scotd::ShellTrainer trainer(cfg.trainer_command, fs::path(cfg.output_dir) / "runs",
                                [&](const std::string& endpoint) { return make_client(cfg.student, endpoint); });
    scotd::ExperimentPipeline pipeline;
    pipeline.task = loaded.task;
    pipeline.corpus = corpus;
    pipeline.filters = cfg.filters;
    pipeline.mode = cfg.training_mode;
    pipeline.setting = cfg.setting;
    pipeline.base_model = cfg.base_model;
    pipeline.decode = cfg.decode;
    pipeline.eval = eval_params(cfg, prompts);
    pipeline.seed = cfg.seed;
    pipeline.trainer = &trainer;
    pipeline.embedder = embedder.get();
    pipeline.embedder_name = cfg.embedder_mode;

    scotd::SweepResult result;
    switch (cfg.sweep_axis) {
        case scotd::SweepAxis::n_rationales: {
            std::vector<int> budgets;
            for (double v : cfg.sweep_values) budgets.push_back(static_cast<int>(v));
            result = scotd::run_n_rationales_sweep(pipeline, loaded.instances, test, budgets);
            break;
        }
        case scotd::SweepAxis::data_fraction:
            result = scotd::run_data_fraction_sweep(pipeline, loaded.instances, test, cfg.sweep_values);
            break;
        case scotd::SweepAxis::model_size:
            result = scotd::run_model_size_sweep(pipeline, loaded.instances, test, cfg.model_sizes);
            break;
    }
    write_text((fs::path(cfg.output_dir) / "sweep.json").string(), scotd::to_json(result).dump(2) + "\n");
    write_text((fs::path(cfg.output_dir) / "sweep.csv").string(), scotd::sweep_csv(result));
    std::cout << scotd::sweep_csv(result);
    return 0;
}

int cmd_stats(const Flags& flags) {
    const auto cfg = load_config(flags);
    const auto in = in_path(flags, cfg, "corpus.jsonl");
    const auto corpus = scotd::read_corpus(in);
    std::vector<scotd::Instance> instances;
    if (!cfg.task_manifest.empty() || !cfg.task_instances.empty()) {
        scotd::validate(cfg, {.task = true});
        instances = scotd::load_task(cfg.task_manifest, cfg.task_instances).instances;
    }
    if (flags.dry_run) {
        print_plan("stats", cfg, json{{"input", in}});
        return 0;
    }
    std::cout << scotd::to_json(scotd::stats(corpus, instances)).dump(2) << "\n";
    return 0;
}

// Registers a flag that, when given, writes its value into the config override object.
template <typename T>
void override_flag(CLI::App* app, Flags& flags, const std::string& name, const json::json_pointer& ptr, const std::string& help) {
    app->add_option_function<T>(name, [&flags, ptr](const T& v) { flags.overrides[ptr] = v; }, help);
}

void common_flags(CLI::App* app, Flags& flags) {
    app->add_option("--config,-c", flags.config_path, "Pipeline config file (JSON)");
    app->add_flag("--dry-run", flags.dry_run, "Validate and print the plan without side effects");
    override_flag<std::string>(app, flags, "--output-dir", json::json_pointer("/output_dir"), "Output directory");
    override_flag<std::uint64_t>(app, flags, "--seed", json::json_pointer("/seed"), "Global seed");
    override_flag<std::string>(app, flags, "--task-manifest", json::json_pointer("/task/manifest"), "Task manifest JSON");
    override_flag<std::string>(app, flags, "--task-instances", json::json_pointer("/task/instances"), "Task instances JSONL");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Chain-of-thought distillation pipeline"};
    app.require_subcommand(1);
    Flags flags;
    SingleFilter single_filter;
    std::string sweep_values;

    auto* sample = app.add_subcommand("sample", "Sample rationales from the teacher");
    common_flags(sample, flags);
    sample->add_option("--out", flags.out, "Corpus output path");
    override_flag<int>(sample, flags, "--n", json::json_pointer("/sampling/n"), "Samples per instance");
    override_flag<double>(sample, flags, "--temperature", json::json_pointer("/sampling/temperature"), "Sampling temperature");
    override_flag<std::string>(sample, flags, "--teacher-endpoint", json::json_pointer("/teacher/endpoint"), "Teacher completion URL");
    override_flag<std::string>(sample, flags, "--teacher-model", json::json_pointer("/teacher/model"), "Teacher model id");
    override_flag<std::size_t>(sample, flags, "--concurrency", json::json_pointer("/teacher/concurrency"), "In-flight requests");
    override_flag<int>(sample, flags, "--retries", json::json_pointer("/teacher/retries"), "Retry count");
    override_flag<std::string>(sample, flags, "--cache-dir", json::json_pointer("/teacher/cache_dir"), "Response cache directory");
    override_flag<std::string>(sample, flags, "--prompt-set", json::json_pointer("/prompt_set"), "Prompt set JSONL");

    auto* filter = app.add_subcommand("filter", "Filter or downsample a corpus");
    common_flags(filter, flags);
    filter->add_option("--in", flags.in, "Input corpus");
    filter->add_option("--out", flags.out, "Output corpus");
    filter->add_option("--kind", single_filter.kind, "Single filter to apply instead of the config chain");
    filter->add_option("--budget", single_filter.budget, "Per-instance budget");
    filter->add_option_function<std::uint64_t>("--filter-seed", [&](const std::uint64_t& v) { single_filter.seed = v; },
                                               "Filter seed (defaults to the config seed)");

    auto* build = app.add_subcommand("build", "Turn a corpus into student training JSONL");
    common_flags(build, flags);
    build->add_option("--in", flags.in, "Input corpus");
    build->add_option("--out", flags.out, "Training JSONL output");
    override_flag<std::string>(build, flags, "--mode", json::json_pointer("/training/mode"), "scotd | label_only | greedy_cot");
    override_flag<std::string>(build, flags, "--setting", json::json_pointer("/training/setting"), "supervised | few_shot");

    auto* eval = app.add_subcommand("eval", "Evaluate a served student");
    common_flags(eval, flags);
    override_flag<std::string>(eval, flags, "--decode", json::json_pointer("/eval/decode"), "no_cot | greedy | self_consistency");
    override_flag<int>(eval, flags, "--n", json::json_pointer("/eval/n"), "Self-consistency samples");
    override_flag<double>(eval, flags, "--temperature", json::json_pointer("/eval/temperature"), "Self-consistency temperature");
    override_flag<std::string>(eval, flags, "--student-endpoint", json::json_pointer("/student/endpoint"), "Student completion URL");
    override_flag<std::string>(eval, flags, "--student-model", json::json_pointer("/student/model"), "Student model id");
    override_flag<std::string>(eval, flags, "--test-instances", json::json_pointer("/test_instances"), "Test instances JSONL");
    override_flag<bool>(eval, flags, "--few-shot", json::json_pointer("/eval/few_shot"), "Prompt the student few-shot");

    auto* sweep = app.add_subcommand("sweep", "Train and evaluate students along one axis");
    common_flags(sweep, flags);
    sweep->add_option("--in", flags.in, "Sampled corpus");
    override_flag<std::string>(sweep, flags, "--axis", json::json_pointer("/sweep/axis"), "n_rationales | data_fraction | model_size");
    sweep->add_option("--values", sweep_values, "Comma-separated sweep values");

    auto* st = app.add_subcommand("stats", "Print corpus statistics");
    common_flags(st, flags);
    st->add_option("--in", flags.in, "Corpus");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage_error", e.what(), {}, static_cast<int>(scotd::ExitCode::config));
        return static_cast<int>(scotd::ExitCode::config);
    }

    try {
        if (!sweep_values.empty()) {
            json values = json::array();
            for (const auto& part : CLI::detail::split(sweep_values, ',')) {
                try {
                    values.push_back(std::stod(part));
                } catch (const std::exception&) {
                    throw scotd::ConfigError("--values: '" + part + "' is not a number");
                }
            }
            flags.overrides["sweep"]["values"] = values;
        }
        if (sample->parsed()) return cmd_sample(flags);
        if (filter->parsed()) return cmd_filter(flags, single_filter);
        if (build->parsed()) return cmd_build(flags);
        if (eval->parsed()) return cmd_eval(flags);
        if (sweep->parsed()) return cmd_sweep(flags);
        if (st->parsed()) return cmd_stats(flags);
    } catch (const scotd::ConfigError& e) {
        print_error(e.kind(), e.what(), e.problems(), static_cast<int>(e.exit_code()));
        return static_cast<int>(e.exit_code());
    } catch (const scotd::Error& e) {
        print_error(e.kind(), e.what(), {}, static_cast<int>(e.exit_code()));
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        print_error("data_error", e.what(), {}, static_cast<int>(scotd::ExitCode::data));
        return static_cast<int>(scotd::ExitCode::data);
    }
    return static_cast<int>(scotd::ExitCode::config);
}
