#include "support.hpp"

#include <httplib.h>

#include <gtest/gtest.h>

#include <cmath>
#include <thread>

using namespace scotd;
using namespace scotd::testing;

namespace {

CompletionRequest basic_request(int n = 4) {
    CompletionRequest r;
    r.model_id = "teacher";
    r.prompt = "Q: why?\nAnswer Choices:\n(a) x\n(b) y\nA:";
    r.temperature = 1.0;
    r.num_samples = n;
    return r;
}

json echo_handler(const json& req) {
    json choices = json::array();
    for (std::size_t i = 0; i < req.at("n").get<std::size_t>(); ++i) {
        choices.push_back(choice_json("t" + std::to_string(i) + " So the answer is: (a)", std::vector<double>{-0.5, -1.5}, i));
    }
    return json{{"choices", choices}};
}

TEST(TeacherClient, RequestBodyShape) {
    auto r = basic_request(3);
    const auto body = json::parse(TeacherClient::request_body(r, 3));
    EXPECT_EQ(body.at("model"), "teacher");
    EXPECT_EQ(body.at("n"), 3);
    EXPECT_EQ(body.at("temperature"), 1.0);
    EXPECT_EQ(body.at("max_tokens"), 256);
    EXPECT_EQ(body.at("stop"), json::array({"\n\n"}));
    EXPECT_EQ(body.at("logprobs"), 1);
    r.want_logprobs = false;
    EXPECT_TRUE(json::parse(TeacherClient::request_body(r, 3)).at("logprobs").is_null());
}

TEST(TeacherClient, CacheMakesRerunFree) {
    auto transport = std::make_shared<ScriptedTransport>(echo_handler);
    auto cache = std::make_shared<ContentStore>();
    TeacherClient first(transport, cache);
    const auto a = first.complete(basic_request(5));
    EXPECT_EQ(transport->calls(), 1u);
    TeacherClient second(transport, cache);
    const auto b = second.complete(basic_request(5));
    EXPECT_EQ(transport->calls(), 1u);
    EXPECT_EQ(second.network_calls(), 0u);
    EXPECT_EQ(second.cache_hits(), 5u);
    EXPECT_EQ(a, b);
}

TEST(TeacherClient, GrowingNFetchesOnlyMissing) {
    auto transport = std::make_shared<ScriptedTransport>(echo_handler);
    TeacherClient client(transport, nullptr);
    client.complete(basic_request(3));
    const auto more = client.complete(basic_request(5));
    ASSERT_EQ(more.size(), 5u);
    EXPECT_EQ(transport->calls(), 2u);
    EXPECT_EQ(json::parse(transport->bodies().back()).at("n"), 2);
    // The first three came from the cache, so they keep their original text.
    EXPECT_EQ(more[0].text.substr(0, 2), "t0");
}

TEST(TeacherClient, CachedEntryWithoutLogprobsIsAMissWhenNeeded) {
    auto transport = std::make_shared<ScriptedTransport>(echo_handler);
    TeacherClient client(transport, nullptr);
    auto r = basic_request(2);
    r.want_logprobs = false;
    client.complete(r);
    r.want_logprobs = true;
    const auto out = client.complete(r);
    EXPECT_EQ(transport->calls(), 2u);
    EXPECT_TRUE(out[0].token_logprobs);
}

TEST(TeacherClient, InvalidRequestsFailBeforeTheNetwork) {
    auto transport = std::make_shared<ScriptedTransport>(echo_handler);
    TeacherClient client(transport, nullptr);
    auto r = basic_request();
    r.temperature = -1;
    EXPECT_THROW(client.complete(r), InvalidArgument);
    r = basic_request();
    r.temperature = 2.5;
    EXPECT_THROW(client.complete(r), InvalidArgument);
    r = basic_request(0);
    EXPECT_THROW(client.complete(r), InvalidArgument);
    r = basic_request(129);
    EXPECT_THROW(client.complete(r), InvalidArgument);
    r = basic_request();
    r.max_tokens = 8;
    EXPECT_THROW(client.complete(r), InvalidArgument);
    EXPECT_EQ(transport->calls(), 0u);
}

TEST(TeacherClient, ChoicesAreOrderedByIndex) {
    auto transport = std::make_shared<ScriptedTransport>([](const json& req) {
        json choices = json::array();
        const auto n = req.at("n").get<std::size_t>();
        for (std::size_t i = n; i-- > 0;) choices.push_back(choice_json("c" + std::to_string(i), std::vector<double>{-1.0}, i));
        return json{{"choices", choices}};
    });
    TeacherClient client(transport, nullptr);
    const auto out = client.complete(basic_request(4));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i].text, "c" + std::to_string(i));
}

TEST(TeacherClient, WrongChoiceCountIsUpstreamError) {
    auto transport = std::make_shared<ScriptedTransport>([](const json&) {
        return json{{"choices", json::array({choice_json("x", std::nullopt, 0)})}};
    });
    TeacherClient client(transport, nullptr);
    EXPECT_THROW(client.complete(basic_request(2)), UpstreamError);
}

TEST(TeacherClient, MalformedResponsesAreUpstreamErrors) {
    EXPECT_THROW(TeacherClient::parse_response("nope", 1, true), UpstreamError);
    EXPECT_THROW(TeacherClient::parse_response(R"({"choices":{}})", 1, true), UpstreamError);
    EXPECT_THROW(TeacherClient::parse_response(R"({"choices":[{"finish_reason":"stop"}]})", 1, true), UpstreamError);
    EXPECT_THROW(TeacherClient::parse_response(R"({"choices":[{"text":"x","logprobs":{"token_logprobs":[0.5]}}]})", 1, true),
                 UpstreamError);
    const auto ok = TeacherClient::parse_response(R"({"choices":[{"text":"x","finish_reason":"length"}]})", 1, true);
    EXPECT_EQ(ok[0].finish_reason, FinishReason::length);
    EXPECT_FALSE(ok[0].token_logprobs);
}

TEST(TeacherClient, RetriesTransientFailures) {
    auto transport = std::make_shared<ScriptedTransport>(echo_handler);
    transport->script({429, 503, -1});
    ClientOptions opts;
    opts.retry = fast_retry(4);
    TeacherClient client(transport, nullptr, opts);
    EXPECT_EQ(client.complete(basic_request(2)).size(), 2u);
    EXPECT_EQ(transport->calls(), 4u);
}

TEST(TeacherClient, GivesUpAfterRetryBudget) {
    auto transport = std::make_shared<ScriptedTransport>(echo_handler);
    transport->script({500, 500, 500});
    ClientOptions opts;
    opts.retry = fast_retry(2);
    TeacherClient client(transport, nullptr, opts);
    EXPECT_THROW(client.complete(basic_request(2)), UpstreamError);
    EXPECT_EQ(transport->calls(), 3u);
}

TEST(TeacherClient, ClientErrorsAreNotRetried) {
    auto transport = std::make_shared<ScriptedTransport>(echo_handler);
    transport->script({400});
    ClientOptions opts;
    opts.retry = fast_retry(4);
    TeacherClient client(transport, nullptr, opts);
    EXPECT_THROW(client.complete(basic_request(2)), UpstreamError);
    EXPECT_EQ(transport->calls(), 1u);
}

TEST(TeacherClient, LargeNIsChunked) {
    auto transport = std::make_shared<ScriptedTransport>(echo_handler);
    ClientOptions opts;
    opts.max_samples_per_request = 3;
    TeacherClient client(transport, nullptr, opts);
    const auto out = client.complete(basic_request(10));
    EXPECT_EQ(out.size(), 10u);
    EXPECT_EQ(transport->calls(), 4u);
}

TEST(TeacherClient, DiskCacheSurvivesNewClient) {
    TempDir dir;
    auto transport = std::make_shared<ScriptedTransport>(echo_handler);
    {
        TeacherClient client(transport, std::make_shared<ContentStore>(dir.path()));
        client.complete(basic_request(3));
    }
    TeacherClient client(transport, std::make_shared<ContentStore>(dir.path()));
    client.complete(basic_request(3));
    EXPECT_EQ(transport->calls(), 1u);
}

TEST(MeanLogprob, MatchesOracle) {
    detail::Rng rng(5);
    for (int i = 0; i < 500; ++i) {
        Completion c;
        c.text = "x";
        std::vector<double> lp;
        const auto n = 1 + rng.below(50);
        long double sum = 0;
        for (std::size_t k = 0; k < n; ++k) {
            lp.push_back(-rng.uniform() * 10);
            sum += lp.back();
        }
        c.token_logprobs = lp;
        EXPECT_NEAR(mean_token_logprob(c), static_cast<double>(sum / n), 1e-12);
    }
    Completion none;
    EXPECT_THROW(mean_token_logprob(none), DataError);
}

TEST(Endpoint, Parsing) {
    const auto e = parse_endpoint("http://127.0.0.1:8000/v1/completions");
    EXPECT_EQ(e.origin, "http://127.0.0.1:8000");
    EXPECT_EQ(e.path, "/v1/completions");
    EXPECT_EQ(parse_endpoint("http://host").path, "/");
    EXPECT_THROW(parse_endpoint("host:80/x"), InvalidArgument);
}

TEST(HttpTransport, TalksToARealServer) {
    httplib::Server server;
    std::atomic<int> hits{0};
    std::string auth;
    server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
        if (hits++ == 0) {
            res.status = 503;
            return;
        }
        auth = req.get_header_value("Authorization");
        res.set_content(echo_handler(json::parse(req.body)).dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    auto transport = std::make_shared<HttpTransport>("http://127.0.0.1:" + std::to_string(port) + "/v1/completions", "secret");
    ClientOptions opts;
    opts.retry = fast_retry(2);
    TeacherClient client(transport, nullptr, opts);
    const auto out = client.complete(basic_request(3));
    server.stop();
    th.join();
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(hits.load(), 2);
    EXPECT_EQ(auth, "Bearer secret");
}

TEST(HttpTransport, ConnectionRefusedIsUpstreamError) {
    auto transport = std::make_shared<HttpTransport>("http://127.0.0.1:1/v1/completions");
    ClientOptions opts;
    opts.retry = fast_retry(1);
    TeacherClient client(transport, nullptr, opts);
    EXPECT_THROW(client.complete(basic_request(1)), UpstreamError);
}

}  // namespace
