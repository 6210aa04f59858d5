#pragma once

#include "capval/retry.hpp"

#include <atomic>
#include <chrono>
#include <cstddef>
#include <memory>
#include <string>

namespace capval::synthesis {

struct LlmEndpointConfig {
    std::string base_url; // e.g. http://host:8000/v1 ; "/chat/completions" is appended
    std::string model_id;
    std::string auth_env; // env var holding a bearer token
    RetryPolicy retry;
    std::chrono::seconds timeout{120};
    std::size_t max_in_flight = 4;
};

// Raw transport for one prompt -> completion exchange. Implementations must be
// safe to call from several threads and signal retryable failures with
// TransientEndpointError.
class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

// Chat-completions JSON POST with temperature 0.
class HttpChatBackend final : public CompletionBackend {
public:
    explicit HttpChatBackend(LlmEndpointConfig config);
    std::string complete(const std::string& prompt) override;

    static std::string request_body(const std::string& model_id, const std::string& prompt);
    static std::string parse_reply(const std::string& body);

private:
    LlmEndpointConfig config_;
    std::string url_;
};

// One prompt through the backend with the configured retry policy. Empty
// prompts raise PreconditionError, blank completions EmptyOutputError.
std::string llm_complete(CompletionBackend& backend, const LlmEndpointConfig& config, const std::string& prompt);

// A backend bound to its endpoint settings, shared by the pipeline stages.
class LlmClient {
public:
    LlmClient(std::shared_ptr<CompletionBackend> backend, LlmEndpointConfig config);

    std::string complete(const std::string& prompt) const;
    const LlmEndpointConfig& config() const noexcept { return config_; }
    std::size_t calls() const noexcept { return calls_->load(); }

private:
    std::shared_ptr<CompletionBackend> backend_;
    LlmEndpointConfig config_;
    std::shared_ptr<std::atomic<std::size_t>> calls_;
};

} // namespace capval::synthesis
