#pragma once

// Pipeline configuration file: parsing, defaults, validation, and fingerprinting.
//
// {
//   "task":        {"manifest": path, "instances": path},
//   "test_instances": path, "contrast_instances": path, "prompt_set": path,
//   "teacher":     {"endpoint", "model", "concurrency", "retries", "cache_dir", "api_key_env", "max_tokens"},
//   "student":     {same fields as teacher},
//   "sampling":    {"n", "temperature"},
//   "filters":     [{"kind", "budget", "seed"}, ...],
//   "embedder":    {"mode": "fallback" | "remote", "endpoint", "model"},
//   "training":    {"mode", "setting", "command", "base_model"},
//   "eval":        {"decode", "n", "temperature", "few_shot"},
//   "sweep":       {"axis", "values", "model_sizes": [{"base_model", "parameters"}]},
//   "seed": int, "output_dir": path
// }

#include "scotd/completion.hpp"
#include "scotd/corpus.hpp"
#include "scotd/detail/hash.hpp"
#include "scotd/error.hpp"
#include "scotd/eval.hpp"
#include "scotd/filters.hpp"
#include "scotd/task.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace scotd {

struct ServiceConfig {
    std::string endpoint;
    std::string model;
    std::size_t concurrency = 8;
    int retries = 4;
    std::string cache_dir;
    std::string api_key_env = "SCOTD_API_KEY";
    int max_tokens = kDefaultMaxTokens;
};

struct PipelineConfig {
    std::string task_manifest;
    std::string task_instances;
    std::string test_instances;
    std::string contrast_instances;
    std::string prompt_set;
    ServiceConfig teacher;
    ServiceConfig student;
    int n_samples = kDefaultSamples;
    double sampling_temperature = kDefaultSamplingTemperature;
    std::vector<FilterSpec> filters;
    std::string embedder_mode = "fallback";
    std::string embedder_endpoint;
    std::string embedder_model;
    TrainingMode training_mode = TrainingMode::scotd;
    Setting setting = Setting::supervised;
    std::string trainer_command;
    std::string base_model;
    DecodeStrategy decode = DecodeStrategy::greedy;
    int eval_n = kDefaultVoteSamples;
    double eval_temperature = kDefaultVoteTemperature;
    bool eval_few_shot = false;
    SweepAxis sweep_axis = SweepAxis::n_rationales;
    std::vector<double> sweep_values;
    std::vector<ModelSize> model_sizes;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
};

// Which inputs a command needs; drives existence checks in validate().
struct ConfigRequirements {
    bool task = false;
    bool test = false;
    bool prompt_set = false;
    bool teacher = false;
    bool student = false;
    bool trainer = false;
};

namespace detail {

// Reads a field, recording a problem instead of throwing on a type mismatch.
template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& where, std::vector<std::string>& problems) {
    if (!obj.is_object() || !obj.contains(key) || obj.at(key).is_null()) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        problems.push_back(where + "." + key + " has the wrong type");
    }
}

inline ServiceConfig read_service(const json& j, const std::string& where, std::vector<std::string>& problems) {
    ServiceConfig s;
    read_field(j, "endpoint", s.endpoint, where, problems);
    read_field(j, "model", s.model, where, problems);
    read_field(j, "concurrency", s.concurrency, where, problems);
    read_field(j, "retries", s.retries, where, problems);
    read_field(j, "cache_dir", s.cache_dir, where, problems);
    read_field(j, "api_key_env", s.api_key_env, where, problems);
    read_field(j, "max_tokens", s.max_tokens, where, problems);
    if (s.concurrency < 1) problems.push_back(where + ".concurrency must be >= 1");
    if (s.retries < 0) problems.push_back(where + ".retries must be >= 0");
    if (s.max_tokens < kMinMaxTokens) problems.push_back(where + ".max_tokens must be >= 16");
    return s;
}

inline json service_json(const ServiceConfig& s) {
    return json{{"endpoint", s.endpoint},       {"model", s.model},         {"concurrency", s.concurrency},
                {"retries", s.retries},         {"cache_dir", s.cache_dir}, {"api_key_env", s.api_key_env},
                {"max_tokens", s.max_tokens}};
}

template <typename Parse>
void read_enum(const json& obj, const char* key, const std::string& where, std::vector<std::string>& problems, Parse&& parse) {
    std::string raw;
    read_field(obj, key, raw, where, problems);
    if (raw.empty()) return;
    try {
        parse(raw);
    } catch (const Error& e) {
        problems.push_back(where + "." + key + ": " + e.what());
    }
}

}  // namespace detail

// Parses a (possibly partial) config object. All problems are collected before throwing.
inline PipelineConfig config_from_json(const json& j) {
    std::vector<std::string> problems;
    PipelineConfig c;
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const json empty = json::object();
    auto section = [&](const char* key) -> const json& {
        if (!j.contains(key) || j.at(key).is_null()) return empty;
        if (!j.at(key).is_object()) {
            problems.push_back(std::string(key) + " must be an object");
            return empty;
        }
        return j.at(key);
    };

    const auto& task = section("task");
    detail::read_field(task, "manifest", c.task_manifest, "task", problems);
    detail::read_field(task, "instances", c.task_instances, "task", problems);
    detail::read_field(j, "test_instances", c.test_instances, "config", problems);
    detail::read_field(j, "contrast_instances", c.contrast_instances, "config", problems);
    detail::read_field(j, "prompt_set", c.prompt_set, "config", problems);
    c.teacher = detail::read_service(section("teacher"), "teacher", problems);
    c.student = detail::read_service(section("student"), "student", problems);

    const auto& sampling = section("sampling");
    detail::read_field(sampling, "n", c.n_samples, "sampling", problems);
    detail::read_field(sampling, "temperature", c.sampling_temperature, "sampling", problems);
    if (c.n_samples < 1 || c.n_samples > kMaxSamplesPerRequest) problems.push_back("sampling.n must be in [1, 128]");
    if (!(c.sampling_temperature >= 0.0 && c.sampling_temperature <= kMaxTemperature)) {
        problems.push_back("sampling.temperature must be in [0, 2]");
    }

    if (j.contains("filters") && !j.at("filters").is_null()) {
        if (!j.at("filters").is_array()) {
            problems.push_back("filters must be an array");
        } else {
            for (std::size_t i = 0; i < j.at("filters").size(); ++i) {
                try {
                    c.filters.push_back(filter_spec_from_json(j.at("filters")[i]));
                } catch (const std::exception& e) {
                    problems.push_back("filters[" + std::to_string(i) + "]: " + e.what());
                }
            }
        }
    }

    const auto& emb = section("embedder");
    detail::read_field(emb, "mode", c.embedder_mode, "embedder", problems);
    detail::read_field(emb, "endpoint", c.embedder_endpoint, "embedder", problems);
    detail::read_field(emb, "model", c.embedder_model, "embedder", problems);
    if (c.embedder_mode != "fallback" && c.embedder_mode != "remote") problems.push_back("embedder.mode must be fallback or remote");

    const auto& training = section("training");
    detail::read_enum(training, "mode", "training", problems, [&](const std::string& s) { c.training_mode = training_mode_from_string(s); });
    detail::read_enum(training, "setting", "training", problems, [&](const std::string& s) { c.setting = setting_from_string(s); });
    detail::read_field(training, "command", c.trainer_command, "training", problems);
    detail::read_field(training, "base_model", c.base_model, "training", problems);

    const auto& ev = section("eval");
    detail::read_enum(ev, "decode", "eval", problems, [&](const std::string& s) { c.decode = decode_strategy_from_string(s); });
    detail::read_field(ev, "n", c.eval_n, "eval", problems);
    detail::read_field(ev, "temperature", c.eval_temperature, "eval", problems);
    detail::read_field(ev, "few_shot", c.eval_few_shot, "eval", problems);
    if (c.eval_n < 1 || c.eval_n > kMaxSamplesPerRequest) problems.push_back("eval.n must be in [1, 128]");
    if (!(c.eval_temperature >= 0.0 && c.eval_temperature <= kMaxTemperature)) problems.push_back("eval.temperature must be in [0, 2]");

    const auto& sweep = section("sweep");
    detail::read_enum(sweep, "axis", "sweep", problems, [&](const std::string& s) { c.sweep_axis = sweep_axis_from_string(s); });
    detail::read_field(sweep, "values", c.sweep_values, "sweep", problems);
    if (sweep.contains("model_sizes") && sweep.at("model_sizes").is_array()) {
        for (const auto& m : sweep.at("model_sizes")) {
            ModelSize ms;
            detail::read_field(m, "base_model", ms.base_model, "sweep.model_sizes", problems);
            detail::read_field(m, "parameters", ms.parameters, "sweep.model_sizes", problems);
            c.model_sizes.push_back(ms);
        }
    }

    detail::read_field(j, "seed", c.seed, "config", problems);
    detail::read_field(j, "output_dir", c.output_dir, "config", problems);
    if (!problems.empty()) throw ConfigError(problems);
    return c;
}

// Canonical form with every default filled in; the fingerprint hashes exactly this.
inline json to_json(const PipelineConfig& c) {
    json filters = json::array();
    for (const auto& f : c.filters) filters.push_back(to_json(f));
    json sizes = json::array();
    for (const auto& m : c.model_sizes) sizes.push_back(json{{"base_model", m.base_model}, {"parameters", m.parameters}});
    return json{{"task", json{{"manifest", c.task_manifest}, {"instances", c.task_instances}}},
                {"test_instances", c.test_instances},
                {"contrast_instances", c.contrast_instances},
                {"prompt_set", c.prompt_set},
                {"teacher", detail::service_json(c.teacher)},
                {"student", detail::service_json(c.student)},
                {"sampling", json{{"n", c.n_samples}, {"temperature", c.sampling_temperature}}},
                {"filters", filters},
                {"embedder", json{{"mode", c.embedder_mode}, {"endpoint", c.embedder_endpoint}, {"model", c.embedder_model}}},
                {"training", json{{"mode", std::string(to_string(c.training_mode))},
                                  {"setting", std::string(to_string(c.setting))},
                                  {"command", c.trainer_command},
                                  {"base_model", c.base_model}}},
                {"eval", json{{"decode", std::string(to_string(c.decode))},
                              {"n", c.eval_n},
                              {"temperature", c.eval_temperature},
                              {"few_shot", c.eval_few_shot}}},
                {"sweep", json{{"axis", std::string(to_string(c.sweep_axis))}, {"values", c.sweep_values}, {"model_sizes", sizes}}},
                {"seed", c.seed},
                {"output_dir", c.output_dir}};
}

inline std::string config_fingerprint(const PipelineConfig& c) { return detail::sha256_hex(to_json(c).dump()); }

// Checks cross-field requirements and that referenced files exist; reports every problem at once.
inline void validate(const PipelineConfig& c, const ConfigRequirements& need) {
    std::vector<std::string> problems;
    auto require_file = [&](const std::string& path, const char* what) {
        if (path.empty()) {
            problems.push_back(std::string(what) + " is not set");
        } else if (!std::filesystem::is_regular_file(path)) {
            problems.push_back(std::string(what) + " '" + path + "' does not exist");
        }
    };
    auto require_service = [&](const ServiceConfig& s, const char* what) {
        if (s.endpoint.empty()) problems.push_back(std::string(what) + ".endpoint is not set");
        if (s.model.empty()) problems.push_back(std::string(what) + ".model is not set");
    };
    if (need.task) {
        require_file(c.task_manifest, "task.manifest");
        require_file(c.task_instances, "task.instances");
    }
    if (need.test) require_file(c.test_instances, "test_instances");
    const bool needs_prompt_set = need.prompt_set || (need.student && (c.eval_few_shot || c.decode == DecodeStrategy::no_cot));
    if (needs_prompt_set) require_file(c.prompt_set, "prompt_set");
    if (need.teacher) require_service(c.teacher, "teacher");
    if (need.student && !need.trainer) require_service(c.student, "student");
    if (need.trainer) {
        if (c.trainer_command.empty()) problems.push_back("training.command is not set");
        if (c.sweep_axis == SweepAxis::model_size ? c.model_sizes.empty() : c.sweep_values.empty()) {
            problems.push_back("sweep has no points");
        }
    }
    for (const auto& f : c.filters) {
        if (f.kind == FilterKind::diversity_k && c.embedder_mode == "remote" &&
            (c.embedder_endpoint.empty() || c.embedder_model.empty())) {
            problems.push_back("remote embedder needs embedder.endpoint and embedder.model");
            break;
        }
    }
    if (!problems.empty()) throw ConfigError(problems);
}

}  // namespace scotd
