#include <httplib.h>

#include "capval/error.hpp"
#include "capval/http.hpp"

#include <cstdlib>

namespace capval::http {

namespace {

struct SplitUrl {
    std::string origin; // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint URL '" + url + "' lacks a scheme");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

Response post_json(const std::string& url, const std::string& body,
                   const std::vector<std::pair<std::string, std::string>>& headers, std::chrono::seconds timeout) {
    const auto parts = split_url(url);
    httplib::Client client(parts.origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(parts.path, h, body, "application/json");
    if (!res) {
        throw TransientEndpointError("POST " + url + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status == 429 || res->status >= 500) {
        throw TransientEndpointError("POST " + url + " returned HTTP " + std::to_string(res->status));
    }
    if (res->status < 200 || res->status >= 300) {
        throw EndpointError("POST " + url + " returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    return {res->status, res->body};
}

std::string token_from_env(const std::string& env_var) {
    if (env_var.empty()) return {};
    const char* v = std::getenv(env_var.c_str());
    return v ? std::string(v) : std::string{};
}

} // namespace capval::http
