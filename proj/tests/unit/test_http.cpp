#include <httplib.h>

#include "capval/error.hpp"
#include "capval/http.hpp"
#include "capval/lossmeter.hpp"
#include "capval/synthesis/llm_client.hpp"

#include <doctest.h>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <thread>

using namespace capval;
using nlohmann::json;

namespace {

// Local server on an ephemeral port, stopped on destruction.
class TestServer {
public:
    TestServer() {
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~TestServer() {
        server_.stop();
        thread_.join();
    }
    httplib::Server& server() { return server_; }
    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

RetryPolicy no_wait(std::size_t attempts) {
    RetryPolicy p;
    p.max_attempts = attempts;
    p.initial_backoff = std::chrono::milliseconds(0);
    return p;
}

} // namespace

TEST_SUITE("http") {

TEST_CASE("chat completion wire format") {
    TestServer srv;
    json seen;
    std::string auth;
    srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen = json::parse(req.body);
        auth = req.get_header_value("Authorization");
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Judgment Result: [Yes]"}}]})",
                        "application/json");
    });
    ::setenv("CAPVAL_TEST_TOKEN", "secret", 1);
    synthesis::LlmEndpointConfig cfg;
    cfg.base_url = srv.url("/v1");
    cfg.model_id = "judge-model";
    cfg.auth_env = "CAPVAL_TEST_TOKEN";
    cfg.retry = no_wait(1);
    cfg.timeout = std::chrono::seconds(5);
    const synthesis::LlmClient client(std::make_shared<synthesis::HttpChatBackend>(cfg), cfg);
    CHECK(client.complete("Is it relevant?") == "Judgment Result: [Yes]");
    CHECK(seen["model"] == "judge-model");
    CHECK(seen["temperature"] == 0);
    CHECK(seen["messages"][0]["role"] == "user");
    CHECK(seen["messages"][0]["content"] == "Is it relevant?");
    CHECK(auth == "Bearer secret");
}

TEST_CASE("reply parsing") {
    using synthesis::HttpChatBackend;
    CHECK(HttpChatBackend::parse_reply(R"({"choices":[{"text":"legacy"}]})") == "legacy");
    CHECK_THROWS_AS(HttpChatBackend::parse_reply(R"({"choices":[]})"), EndpointError);
    CHECK_THROWS_AS(HttpChatBackend::parse_reply("not json"), EndpointError);
}

TEST_CASE("503 is retried and then succeeds") {
    TestServer srv;
    std::atomic<int> hits{0};
    srv.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        if (++hits <= 2) {
            res.status = 503;
            return;
        }
        res.set_content(R"({"choices":[{"message":{"content":"fine"}}]})", "application/json");
    });
    synthesis::LlmEndpointConfig cfg;
    cfg.base_url = srv.url("/v1");
    cfg.model_id = "m";
    cfg.retry = no_wait(3);
    cfg.timeout = std::chrono::seconds(5);
    const synthesis::LlmClient client(std::make_shared<synthesis::HttpChatBackend>(cfg), cfg);
    CHECK(client.complete("hi") == "fine");
    CHECK(hits == 3);
}

TEST_CASE("client errors are not retried") {
    TestServer srv;
    std::atomic<int> hits{0};
    srv.server().Post("/score", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 400;
        res.set_content("bad request", "text/plain");
    });
    lossmeter::ScoringEndpointConfig cfg;
    cfg.url = srv.url("/score");
    cfg.retry = no_wait(4);
    cfg.timeout = std::chrono::seconds(5);
    lossmeter::HttpScoringBackend backend(cfg);
    synthesis::ValidationSample s;
    s.id = "s";
    s.text = "text";
    CHECK_THROWS_AS(lossmeter::score_sample(backend, cfg, "m", s), EndpointError);
    CHECK(hits == 1);
}

TEST_CASE("scoring wire format") {
    TestServer srv;
    json seen;
    srv.server().Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
        seen = json::parse(req.body);
        res.set_content(R"({"token_logprobs":[-1.0,-2.0,-3.0]})", "application/json");
    });
    lossmeter::ScoringEndpointConfig cfg;
    cfg.url = srv.url("/score");
    cfg.model_id = "lm-7b";
    cfg.retry = no_wait(1);
    cfg.timeout = std::chrono::seconds(5);
    lossmeter::HttpScoringBackend backend(cfg);
    synthesis::ValidationSample s;
    s.id = "s1";
    s.domain_id = "d";
    s.text = "the validation text";
    const auto loss = lossmeter::score_sample(backend, cfg, "lm-7b", s);
    CHECK(seen["text"] == "the validation text");
    CHECK(seen["model"] == "lm-7b");
    CHECK(loss.mean_ce == doctest::Approx(2.0));
    CHECK(loss.token_count == 3);
}

TEST_CASE("unreachable endpoint is transient") {
    // Port 9 (discard) is closed on loopback in the sandbox.
    CHECK_THROWS_AS(http::post_json("http://127.0.0.1:9/x", "{}", {}, std::chrono::seconds(2)), TransientEndpointError);
    CHECK_THROWS_AS(http::post_json("127.0.0.1/x", "{}", {}, std::chrono::seconds(2)), ConfigError);
}

} // TEST_SUITE
