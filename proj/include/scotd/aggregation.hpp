#pragma once

// Greedy decoding and self-consistency voting over sampled chains of thought.

#include "scotd/completion.hpp"
#include "scotd/corpus.hpp"
#include "scotd/cot_parser.hpp"
#include "scotd/task.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scotd {

inline constexpr int kDefaultVoteSamples = 30;
inline constexpr double kDefaultVoteTemperature = 0.7;

struct VoteResult {
    std::optional<OptionKey> winner;
    std::map<OptionKey, int> tally;
    int valid_votes = 0;
    int total_votes = 0;
    bool tie_broken = false;

    friend bool operator==(const VoteResult&, const VoteResult&) = default;
};

// Majority over parseable samples. Ties go to the label whose samples have the greater summed
// mean log-probability (only when every tied sample carries one), then to the smallest key.
inline VoteResult majority_vote(const std::vector<CoTSample>& samples, const TaskSpec& task) {
    if (samples.empty()) throw InvalidArgument("majority_vote needs at least one sample");
    VoteResult r;
    r.total_votes = static_cast<int>(samples.size());
    std::map<OptionKey, std::vector<double>> logprobs;
    std::map<OptionKey, bool> all_have_logprobs;
    for (const auto& s : samples) {
        if (!s.parsed.ok() || !task.has_key(*s.parsed.predicted_label)) continue;
        const auto& label = *s.parsed.predicted_label;
        ++r.tally[label];
        ++r.valid_votes;
        auto [it, inserted] = all_have_logprobs.emplace(label, true);
        if (s.mean_logprob) {
            logprobs[label].push_back(*s.mean_logprob);
        } else {
            it->second = false;
        }
    }
    if (r.valid_votes == 0) return r;

    int best = 0;
    for (const auto& [_, c] : r.tally) best = std::max(best, c);
    std::vector<OptionKey> tied;
    for (const auto& [k, c] : r.tally) {
        if (c == best) tied.push_back(k);  // map order: ascending key
    }
    r.tie_broken = tied.size() > 1;
    r.winner = tied.front();
    if (tied.size() > 1 && std::all_of(tied.begin(), tied.end(), [&](const auto& k) { return all_have_logprobs[k]; })) {
        // Sum in sorted order so the result does not depend on input order.
        auto sum = [&](const OptionKey& k) {
            auto v = logprobs[k];
            std::sort(v.begin(), v.end());
            double total = 0.0;
            for (double x : v) total += x;
            return total;
        };
        double best_sum = sum(tied.front());
        for (std::size_t i = 1; i < tied.size(); ++i) {
            const double s = sum(tied[i]);
            if (s > best_sum) {
                best_sum = s;
                r.winner = tied[i];
            }
        }
    }
    return r;
}

struct DecodeOptions {
    std::string model_id;
    int max_tokens = kDefaultMaxTokens;
    std::vector<std::string> stop_sequences{std::string(kBlockSeparator)};
    // When set, the model is prompted few-shot with these demonstrations instead of zero-shot.
    std::optional<PromptSet> prompt_set;
};

inline std::string decode_prompt(const Instance& instance, const TaskSpec& task, const DecodeOptions& options) {
    return options.prompt_set ? build_prompt(*options.prompt_set, instance, task) : render_question_block(instance, task);
}

// One temperature-0 completion, parsed.
inline ParsedCoT greedy_predict(const Instance& instance, const TaskSpec& task, CompletionService& client,
                                const DecodeOptions& options) {
    CompletionRequest req;
    req.model_id = options.model_id;
    req.prompt = decode_prompt(instance, task, options);
    req.temperature = 0.0;
    req.num_samples = 1;
    req.max_tokens = options.max_tokens;
    req.stop_sequences = options.stop_sequences;
    req.want_logprobs = false;
    const auto completions = client.complete(req);
    if (completions.size() != 1) throw UpstreamError("greedy decode expected exactly one completion");
    return parse_cot(completions.front().text, task);
}

// n sampled chains at `temperature`, majority-voted.
inline VoteResult self_consistent_predict(const Instance& instance, const TaskSpec& task, CompletionService& client,
                                          const DecodeOptions& options, int n = kDefaultVoteSamples,
                                          double temperature = kDefaultVoteTemperature) {
    if (n < 1) throw InvalidArgument("self-consistency needs n >= 1");
    CompletionRequest req;
    req.model_id = options.model_id;
    req.prompt = decode_prompt(instance, task, options);
    req.temperature = temperature;
    req.num_samples = n;
    req.max_tokens = options.max_tokens;
    req.stop_sequences = options.stop_sequences;
    req.want_logprobs = true;
    const auto completions = client.complete(req);
    if (completions.size() != static_cast<std::size_t>(n)) throw UpstreamError("service returned the wrong number of completions");
    std::vector<CoTSample> samples;
    samples.reserve(completions.size());
    const TeacherParams params{options.model_id, temperature, options.max_tokens};
    for (std::size_t k = 0; k < completions.size(); ++k) {
        samples.push_back(make_sample(instance.instance_id, static_cast<int>(k), completions[k], task, params));
    }
    return majority_vote(samples, task);
}

}  // namespace scotd
