#pragma once

// Caching, retrying client for any text-completion HTTP service.
//
// Wire format (request):  {"model","prompt","n","temperature","max_tokens","stop","logprobs"}
// Wire format (response): {"choices":[{"text","finish_reason","logprobs":{"token_logprobs":[...]}}]}
//
// Every sample index is cached on its own, keyed by the content hash of
// (model, prompt, temperature, max_tokens, stop, sample_index). Growing N later only
// requests the missing indices.

#include "scotd/completion.hpp"
#include "scotd/content_store.hpp"
#include "scotd/detail/parallel.hpp"
#include "scotd/http.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <memory>
#include <semaphore>
#include <string>
#include <utility>
#include <vector>

namespace scotd {

struct ClientOptions {
    std::size_t concurrency = 8;
    RetryPolicy retry;
    // Upper bound on `n` in a single HTTP request; missing indices are split into chunks.
    int max_samples_per_request = kMaxSamplesPerRequest;
};

class TeacherClient : public CompletionService {
public:
    TeacherClient(std::shared_ptr<Transport> transport, std::shared_ptr<ContentStore> cache, ClientOptions options = {})
        : transport_(std::move(transport)),
          cache_(cache ? std::move(cache) : std::make_shared<ContentStore>()),
          options_(options),
          in_flight_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(options.concurrency, 1, kMaxConcurrency))) {}

    static constexpr std::size_t kMaxConcurrency = 256;

    std::vector<Completion> complete(const CompletionRequest& request) override {
        validate(request);
        const auto n = static_cast<std::size_t>(request.num_samples);
        std::vector<std::optional<Completion>> slots(n);
        std::vector<std::size_t> missing;
        for (std::size_t i = 0; i < n; ++i) {
            slots[i] = cached(request, i);
            if (slots[i]) {
                ++cache_hits_;
            } else {
                missing.push_back(i);
            }
        }

        const auto chunk = static_cast<std::size_t>(std::max(1, options_.max_samples_per_request));
        std::vector<std::vector<std::size_t>> chunks;
        for (std::size_t i = 0; i < missing.size(); i += chunk) {
            chunks.emplace_back(missing.begin() + static_cast<std::ptrdiff_t>(i),
                                missing.begin() + static_cast<std::ptrdiff_t>(std::min(i + chunk, missing.size())));
        }
        detail::parallel_for(chunks.size(), chunks.size(), [&](std::size_t c) {
            auto results = fetch(request, chunks[c].size());
            for (std::size_t j = 0; j < chunks[c].size(); ++j) {
                const auto index = chunks[c][j];
                cache_->put(cache_key(request, index), to_json(results[j]).dump());
                slots[index] = std::move(results[j]);
            }
        });

        std::vector<Completion> out;
        out.reserve(n);
        for (auto& s : slots) out.push_back(std::move(*s));
        return out;
    }

    std::size_t network_calls() const { return network_calls_.load(); }
    std::size_t cache_hits() const { return cache_hits_.load(); }

    static std::string cache_key(const CompletionRequest& r, std::size_t sample_index) {
        const nlohmann::json key{{"model", r.model_id},
                                 {"prompt", r.prompt},
                                 {"temperature", r.temperature},
                                 {"max_tokens", r.max_tokens},
                                 {"stop", r.stop_sequences},
                                 {"sample_index", sample_index}};
        return ContentStore::key_for(key.dump());
    }

    static std::string request_body(const CompletionRequest& r, std::size_t n) {
        nlohmann::json body{{"model", r.model_id},
                            {"prompt", r.prompt},
                            {"n", n},
                            {"temperature", r.temperature},
                            {"max_tokens", r.max_tokens},
                            {"stop", r.stop_sequences}};
        body["logprobs"] = r.want_logprobs ? nlohmann::json(1) : nlohmann::json(nullptr);
        return body.dump();
    }

    // Parses a response body into exactly `expected` completions ordered by choice index.
    static std::vector<Completion> parse_response(const std::string& body, std::size_t expected, bool want_logprobs) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::parse_error& e) {
            throw UpstreamError(std::string("malformed response body: ") + e.what());
        }
        try {
            const auto& choices = j.at("choices");
            if (!choices.is_array()) throw UpstreamError("malformed response body: choices is not an array");
            if (choices.size() != expected) {
                throw UpstreamError("service returned " + std::to_string(choices.size()) + " choices, expected " +
                                    std::to_string(expected));
            }
            std::vector<std::pair<std::size_t, Completion>> indexed;
            for (std::size_t i = 0; i < choices.size(); ++i) {
                const auto& ch = choices[i];
                Completion c;
                c.text = ch.at("text").get<std::string>();
                c.finish_reason = ch.contains("finish_reason") && ch.at("finish_reason").is_string()
                                      ? finish_reason_from_string(ch.at("finish_reason").get<std::string>())
                                      : FinishReason::other;
                if (want_logprobs && ch.contains("logprobs") && ch.at("logprobs").is_object() &&
                    ch.at("logprobs").contains("token_logprobs")) {
                    c.token_logprobs = ch.at("logprobs").at("token_logprobs").get<std::vector<double>>();
                }
                validate(c);
                const std::size_t index = ch.contains("index") ? ch.at("index").get<std::size_t>() : i;
                indexed.emplace_back(index, std::move(c));
            }
            std::stable_sort(indexed.begin(), indexed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
            std::vector<Completion> out;
            for (auto& [_, c] : indexed) out.push_back(std::move(c));
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw UpstreamError(std::string("malformed response body: ") + e.what());
        }
    }

private:
    std::optional<Completion> cached(const CompletionRequest& r, std::size_t index) const {
        auto raw = cache_->get(cache_key(r, index));
        if (!raw) return std::nullopt;
        try {
            auto c = completion_from_json(nlohmann::json::parse(*raw));
            // An entry stored without logprobs cannot serve a request that needs them.
            if (r.want_logprobs && !c.token_logprobs) return std::nullopt;
            return c;
        } catch (const nlohmann::json::exception&) {
            return std::nullopt;
        }
    }

    std::vector<Completion> fetch(const CompletionRequest& r, std::size_t n) {
        const auto body = request_body(r, n);
        in_flight_.acquire();
        struct Release {
            std::counting_semaphore<kMaxConcurrency>& s;
            ~Release() { s.release(); }
        } release{in_flight_};
        ++network_calls_;
        return parse_response(post_with_retries(*transport_, body, options_.retry), n, r.want_logprobs);
    }

    std::shared_ptr<Transport> transport_;
    std::shared_ptr<ContentStore> cache_;
    ClientOptions options_;
    std::counting_semaphore<kMaxConcurrency> in_flight_;
    std::atomic<std::size_t> network_calls_{0};
    std::atomic<std::size_t> cache_hits_{0};
};

}  // namespace scotd
