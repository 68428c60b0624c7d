#pragma once

// Fixtures shared by the unit and acceptance tests: scripted completion services,
// hand-rolled generators and small builders.

#include "scotd.hpp"

#include <json.hpp>

#include <atomic>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace scotd::testing {

using nlohmann::json;

inline TaskSpec mc_task(std::string id = "toy", std::vector<std::string> keys = {"a", "b", "c", "d", "e"}) {
    return TaskSpec{std::move(id), TaskKind::multiple_choice, std::move(keys), std::string(kDefaultAnswerPhrase)};
}

inline TaskSpec binary_task(std::string id = "bin", std::vector<std::string> keys = {"a", "b"}) {
    return TaskSpec{std::move(id), TaskKind::binary_classification, std::move(keys), std::string(kDefaultAnswerPhrase)};
}

inline Instance make_instance(const TaskSpec& task, std::string id, std::string question,
                              std::optional<std::string> gold = std::nullopt) {
    Instance inst;
    inst.instance_id = std::move(id);
    inst.task_id = task.task_id;
    inst.question = std::move(question);
    for (const auto& k : task.option_keys) inst.choices[k] = "choice " + k;
    inst.gold_label = std::move(gold);
    return inst;
}

inline std::vector<Instance> make_instances(const TaskSpec& task, std::size_t n, std::uint64_t seed, const std::string& prefix = "i") {
    detail::Rng rng(seed);
    std::vector<Instance> out;
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "%s%05zu", prefix.c_str(), i);
        out.push_back(make_instance(task, id, "question " + std::string(id) + " about topic " + std::to_string(rng.below(97)),
                                    task.option_keys[rng.below(task.option_keys.size())]));
    }
    return out;
}

inline PromptSet make_prompt_set(const TaskSpec& task, std::size_t n = 3) {
    PromptSet ps;
    ps.task_id = task.task_id;
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = task.option_keys[i % task.option_keys.size()];
        auto inst = make_instance(task, "p" + std::to_string(i), "demo question " + std::to_string(i), label);
        ps.examples.push_back({inst, "Demo reasoning step " + std::to_string(i) + ". It follows.", label});
    }
    return ps;
}

// Question text of the last block in a prompt ("Q: ...\nAnswer Choices:").
inline std::string last_question(const std::string& prompt) {
    const auto q = prompt.rfind("Q: ");
    if (q == std::string::npos) return {};
    const auto end = prompt.find("\nAnswer Choices:", q);
    return prompt.substr(q + 3, end == std::string::npos ? std::string::npos : end - q - 3);
}

inline json choice_json(const std::string& text, std::optional<std::vector<double>> logprobs, std::size_t index) {
    json c{{"text", text}, {"finish_reason", "stop"}, {"index", index}};
    c["logprobs"] = logprobs ? json{{"token_logprobs", *logprobs}} : json(nullptr);
    return c;
}

// Transport whose responses come from a function of the parsed request body. Optional
// scripted statuses are served (in order) before the handler is consulted.
class ScriptedTransport : public Transport {
public:
    using Handler = std::function<json(const json& request)>;

    explicit ScriptedTransport(Handler handler) : handler_(std::move(handler)) {}

    HttpResponse post_json(const std::string& body) override {
        ++calls_;
        {
            std::lock_guard lock(mu_);
            bodies_.push_back(body);
            if (!script_.empty()) {
                const int status = script_.front();
                script_.pop_front();
                if (status < 0) throw TransportFailure("scripted connection failure");
                if (status != 200) return HttpResponse{status, "{\"error\":\"scripted\"}", std::nullopt};
            }
        }
        return HttpResponse{200, handler_(json::parse(body)).dump(), std::nullopt};
    }

    void script(std::vector<int> statuses) {
        std::lock_guard lock(mu_);
        script_.assign(statuses.begin(), statuses.end());
    }

    std::size_t calls() const { return calls_.load(); }
    std::vector<std::string> bodies() const {
        std::lock_guard lock(mu_);
        return bodies_;
    }

private:
    Handler handler_;
    std::atomic<std::size_t> calls_{0};
    mutable std::mutex mu_;
    std::deque<int> script_;
    std::vector<std::string> bodies_;
};

inline RetryPolicy fast_retry(int retries = 4) {
    return RetryPolicy{retries, std::chrono::milliseconds(0), std::chrono::milliseconds(0)};
}

// A simulated model that answers the gold label of the asked question with probability
// `accuracy`, otherwise a uniformly chosen wrong label. Output depends only on the request,
// so reruns are reproducible.
struct GoldModel {
    TaskSpec task;
    std::map<std::string, std::string> gold_by_question;
    double accuracy = 1.0;
    bool emit_logprobs = true;

    json operator()(const json& req) const {
        const auto prompt = req.at("prompt").get<std::string>();
        const auto n = req.at("n").get<std::size_t>();
        const auto temperature = req.at("temperature").get<double>();
        const auto question = last_question(prompt);
        const auto it = gold_by_question.find(question);
        const std::string gold = it == gold_by_question.end() ? task.option_keys.front() : it->second;
        detail::Rng rng(detail::derive_seed(static_cast<std::uint64_t>(temperature * 1000) ^ n, prompt));
        static const std::vector<std::string> vocab{"because", "the", "answer", "relates", "to", "heat", "water", "size",
                                                    "friction", "animals", "people", "usually", "tools", "often", "more",
                                                    "less", "surface", "weather", "light", "cold"};
        json choices = json::array();
        for (std::size_t i = 0; i < n; ++i) {
            std::string label = gold;
            if (rng.uniform() >= accuracy) {
                std::vector<std::string> wrong;
                for (const auto& k : task.option_keys) {
                    if (k != gold) wrong.push_back(k);
                }
                label = wrong[rng.below(wrong.size())];
            }
            std::string rationale;
            const auto words = 4 + rng.below(8);
            for (std::size_t w = 0; w < words; ++w) rationale += (w ? " " : "") + vocab[rng.below(vocab.size())];
            rationale += ".";
            const auto text = " " + rationale + " " + render_answer(label, task);
            std::optional<std::vector<double>> lp;
            if (emit_logprobs && !req.at("logprobs").is_null()) {
                lp = std::vector<double>{};
                const auto tokens = 3 + rng.below(6);
                for (std::size_t t = 0; t < tokens; ++t) lp->push_back(-rng.uniform() * 3.0);
            }
            choices.push_back(choice_json(text, lp, i));
        }
        return json{{"choices", choices}};
    }
};

inline GoldModel gold_model(const TaskSpec& task, const std::vector<Instance>& instances, double accuracy) {
    GoldModel m{task, {}, accuracy, true};
    for (const auto& inst : instances) {
        if (inst.gold_label) m.gold_by_question[inst.question] = *inst.gold_label;
    }
    return m;
}

// Random corpus over `task`: per instance 0..max_samples samples with random rationales,
// labels, and log-probabilities.
inline DistillationCorpus random_corpus(const TaskSpec& task, detail::Rng& rng, std::size_t instances, std::size_t max_samples,
                                        bool with_logprobs = true) {
    static const std::vector<std::string> vocab{"alpha", "beta", "gamma", "delta", "red", "blue", "green", "stone", "river",
                                                "cloud", "north", "south", "fast", "slow", "warm", "cold"};
    DistillationCorpus c;
    c.task_id = task.task_id;
    c.prompt_set_fingerprint = "fp";
    for (std::size_t i = 0; i < instances; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "r%04zu", i);
        auto& samples = c.entries[id];
        const auto n = rng.below(max_samples + 1);
        for (std::size_t k = 0; k < n; ++k) {
            CoTSample s;
            s.instance_id = id;
            s.sample_index = static_cast<int>(k);
            std::string r;
            const auto words = 1 + rng.below(7);
            for (std::size_t w = 0; w < words; ++w) r += (w ? " " : "") + vocab[rng.below(vocab.size())];
            const auto label = task.option_keys[rng.below(task.option_keys.size())];
            s.raw_text = r + " " + render_answer(label, task);
            s.parsed = parse_cot(s.raw_text, task);
            // Coarse values so exact ties happen.
            if (with_logprobs) s.mean_logprob = -static_cast<double>(rng.below(20)) / 8.0;
            s.teacher = TeacherParams{"m", 1.0, 256};
            samples.push_back(std::move(s));
        }
    }
    return c;
}

inline CoTSample vote_sample(const TaskSpec& task, const std::optional<std::string>& label, std::optional<double> lp, int index = 0) {
    CoTSample s;
    s.instance_id = "x";
    s.sample_index = index;
    s.raw_text = label ? "r. " + render_answer(*label, task) : "no answer here";
    s.parsed = parse_cot(s.raw_text, task);
    s.mean_logprob = lp;
    return s;
}

class TempDir {
public:
    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        static std::atomic<int> counter{0};
        path_ = base / ("scotd-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace scotd::testing
