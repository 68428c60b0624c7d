#pragma once

// Completion request/response types and the service contract every teacher or student honors.

#include "scotd/error.hpp"

#include <json.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scotd {

inline constexpr int kDefaultMaxTokens = 256;
inline constexpr int kMinMaxTokens = 16;
inline constexpr int kMaxSamplesPerRequest = 128;
inline constexpr double kMaxTemperature = 2.0;

struct CompletionRequest {
    std::string model_id;
    std::string prompt;
    double temperature = 1.0;
    int num_samples = 1;
    int max_tokens = kDefaultMaxTokens;
    std::vector<std::string> stop_sequences{"\n\n"};
    bool want_logprobs = true;
};

enum class FinishReason { stop, length, other };

inline std::string_view to_string(FinishReason r) {
    switch (r) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::other: return "other";
    }
    return "other";
}

inline FinishReason finish_reason_from_string(std::string_view s) {
    if (s == "stop") return FinishReason::stop;
    if (s == "length") return FinishReason::length;
    return FinishReason::other;
}

struct Completion {
    std::string text;
    std::optional<std::vector<double>> token_logprobs;
    FinishReason finish_reason = FinishReason::stop;

    friend bool operator==(const Completion&, const Completion&) = default;
};

inline void validate(const CompletionRequest& r) {
    std::vector<std::string> problems;
    if (!(r.temperature >= 0.0 && r.temperature <= kMaxTemperature)) problems.push_back("temperature must be in [0, 2]");
    if (r.num_samples < 1 || r.num_samples > kMaxSamplesPerRequest) problems.push_back("num_samples must be in [1, 128]");
    if (r.max_tokens < kMinMaxTokens) problems.push_back("max_tokens must be >= 16");
    if (r.model_id.empty()) problems.push_back("model_id is empty");
    if (!problems.empty()) {
        std::string msg = "invalid completion request:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw InvalidArgument(msg);
    }
}

inline void validate(const Completion& c) {
    if (!c.token_logprobs) return;
    if (c.token_logprobs->empty()) throw UpstreamError("token_logprobs is empty");
    for (double lp : *c.token_logprobs) {
        if (!(lp <= 0.0)) throw UpstreamError("token log-probability is positive or NaN");
    }
}

// Arithmetic mean of the per-token log-probabilities.
inline double mean_token_logprob(const Completion& c) {
    if (!c.token_logprobs || c.token_logprobs->empty()) throw DataError("likelihood unavailable: completion has no token logprobs");
    double sum = 0.0;
    for (double lp : *c.token_logprobs) sum += lp;
    return sum / static_cast<double>(c.token_logprobs->size());
}

// Anything that can answer a completion request: the HTTP teacher client, a served student,
// or an in-process fixture. Implementations must be safe for concurrent calls and return
// exactly request.num_samples completions in sample-index order.
class CompletionService {
public:
    virtual ~CompletionService() = default;
    virtual std::vector<Completion> complete(const CompletionRequest& request) = 0;
};

inline nlohmann::json to_json(const Completion& c) {
    nlohmann::json j{{"text", c.text}, {"finish_reason", std::string(to_string(c.finish_reason))}};
    j["token_logprobs"] = c.token_logprobs ? nlohmann::json(*c.token_logprobs) : nlohmann::json(nullptr);
    return j;
}

inline Completion completion_from_json(const nlohmann::json& j) {
    Completion c;
    c.text = j.at("text").get<std::string>();
    c.finish_reason = finish_reason_from_string(j.value("finish_reason", std::string("other")));
    if (j.contains("token_logprobs") && !j.at("token_logprobs").is_null()) {
        c.token_logprobs = j.at("token_logprobs").get<std::vector<double>>();
    }
    return c;
}

}  // namespace scotd
