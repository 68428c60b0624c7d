#pragma once

// JSON-over-HTTP POST with bounded exponential-backoff retries.

#include "scotd/error.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>

namespace scotd {

struct HttpResponse {
    int status = 0;
    std::string body;
    std::optional<double> retry_after_seconds;
};

// Raised by transports when no HTTP response was obtained at all.
class TransportFailure : public UpstreamError {
public:
    using UpstreamError::UpstreamError;
};

class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post_json(const std::string& body) = 0;
};

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;    // /v1/completions
};

inline Endpoint parse_endpoint(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw InvalidArgument("endpoint '" + url + "' lacks a scheme");
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

class HttpTransport : public Transport {
public:
    explicit HttpTransport(const std::string& url, std::string api_key = {},
                           std::chrono::seconds timeout = std::chrono::seconds(120))
        : endpoint_(parse_endpoint(url)), api_key_(std::move(api_key)), timeout_(timeout) {}

    HttpResponse post_json(const std::string& body) override {
        httplib::Client client(endpoint_.origin);
        client.set_connection_timeout(10);
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client.Post(endpoint_.path, headers, body, "application/json");
        if (!res) {
            throw TransportFailure("POST " + endpoint_.origin + endpoint_.path + " failed: " + httplib::to_string(res.error()));
        }
        HttpResponse out{res->status, res->body, std::nullopt};
        if (res->has_header("Retry-After")) {
            try {
                out.retry_after_seconds = std::stod(res->get_header_value("Retry-After"));
            } catch (const std::exception&) {
            }
        }
        return out;
    }

private:
    Endpoint endpoint_;
    std::string api_key_;
    std::chrono::seconds timeout_;
};

struct RetryPolicy {
    int max_retries = 4;
    std::chrono::milliseconds base_delay{250};
    std::chrono::milliseconds max_delay{8000};

    std::chrono::milliseconds delay_for(int attempt, std::optional<double> retry_after) const {
        auto d = base_delay * (1LL << std::min(attempt, 20));
        if (retry_after) {
            d = std::max<std::chrono::milliseconds>(d, std::chrono::milliseconds(static_cast<long long>(*retry_after * 1000)));
        }
        return std::min<std::chrono::milliseconds>(d, max_delay);
    }
};

inline bool is_retryable_status(int status) { return status == 429 || status >= 500; }

// Posts `body`, retrying transport failures, 429 and 5xx. Returns the first 2xx body.
inline std::string post_with_retries(Transport& transport, const std::string& body, const RetryPolicy& policy) {
    std::string last_error;
    for (int attempt = 0;; ++attempt) {
        std::optional<double> retry_after;
        try {
            auto res = transport.post_json(body);
            if (res.status >= 200 && res.status < 300) return std::move(res.body);
            last_error = "HTTP " + std::to_string(res.status) + (res.status == 429 ? " (rate limited)" : "") + ": " +
                         res.body.substr(0, 200);
            if (!is_retryable_status(res.status)) throw UpstreamError(last_error);
            retry_after = res.retry_after_seconds;
        } catch (const TransportFailure& e) {
            last_error = e.what();
        }
        if (attempt >= policy.max_retries) {
            throw UpstreamError("giving up after " + std::to_string(attempt + 1) + " attempts: " + last_error);
        }
        std::this_thread::sleep_for(policy.delay_for(attempt, retry_after));
    }
}

}  // namespace scotd
