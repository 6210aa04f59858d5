#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace capval::http {

struct Response {
    int status = 0;
    std::string body;
};

// POSTs a JSON body to an absolute http(s) URL. Connection failures, timeouts,
// 429 and 5xx raise TransientEndpointError; other non-2xx statuses raise
// EndpointError.
Response post_json(const std::string& url, const std::string& body,
                   const std::vector<std::pair<std::string, std::string>>& headers,
                   std::chrono::seconds timeout);

// Reads a bearer token from the named environment variable; empty if unset.
std::string token_from_env(const std::string& env_var);

} // namespace capval::http
