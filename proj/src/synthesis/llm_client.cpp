#include "capval/synthesis/llm_client.hpp"

#include "capval/error.hpp"
#include "capval/http.hpp"
#include "capval/text.hpp"

#include <json.hpp>

namespace capval::synthesis {

using nlohmann::json;

HttpChatBackend::HttpChatBackend(LlmEndpointConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw ConfigError("LLM endpoint base_url is empty");
    url_ = config_.base_url;
    while (!url_.empty() && url_.back() == '/') url_.pop_back();
    constexpr std::string_view kSuffix = "/chat/completions";
    if (url_.size() < kSuffix.size() || url_.compare(url_.size() - kSuffix.size(), kSuffix.size(), kSuffix) != 0) {
        url_ += kSuffix;
    }
}

std::string HttpChatBackend::request_body(const std::string& model_id, const std::string& prompt) {
    json body = {{"model", model_id},
                 {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                 {"temperature", 0}};
    return body.dump();
}

std::string HttpChatBackend::parse_reply(const std::string& body) {
    try {
        const json reply = json::parse(body);
        const auto& choice = reply.at("choices").at(0);
        if (choice.contains("message")) return choice.at("message").at("content").get<std::string>();
        return choice.at("text").get<std::string>();
    } catch (const json::exception& e) {
        throw EndpointError("LLM endpoint returned a malformed reply: " + std::string(e.what()));
    }
}

std::string HttpChatBackend::complete(const std::string& prompt) {
    std::vector<std::pair<std::string, std::string>> headers;
    if (auto token = http::token_from_env(config_.auth_env); !token.empty()) {
        headers.emplace_back("Authorization", "Bearer " + token);
    }
    const auto res = http::post_json(url_, request_body(config_.model_id, prompt), headers, config_.timeout);
    return parse_reply(res.body);
}

std::string llm_complete(CompletionBackend& backend, const LlmEndpointConfig& config, const std::string& prompt) {
    if (prompt.empty()) throw PreconditionError("LLM prompt is empty");
    std::string out = with_retries(config.retry, [&] { return backend.complete(prompt); });
    if (text::trim(out).empty()) throw EmptyOutputError("LLM endpoint '" + config.model_id + "' returned an empty completion");
    return out;
}

LlmClient::LlmClient(std::shared_ptr<CompletionBackend> backend, LlmEndpointConfig config)
    : backend_(std::move(backend)), config_(std::move(config)), calls_(std::make_shared<std::atomic<std::size_t>>(0)) {
    if (!backend_) throw ConfigError("LLM client needs a backend");
}

std::string LlmClient::complete(const std::string& prompt) const {
    ++*calls_;
    return llm_complete(*backend_, config_, prompt);
}

} // namespace capval::synthesis
