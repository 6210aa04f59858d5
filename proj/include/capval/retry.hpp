#pragma once

#include "capval/error.hpp"

#include <chrono>
#include <cstddef>
#include <string>
#include <thread>

namespace capval {

struct RetryPolicy {
    std::size_t max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_backoff{30000};
};

// Calls `fn` until it returns, retrying only on TransientEndpointError with
// exponential backoff. Exhaustion rethrows as EndpointError naming the count.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn, std::size_t* attempts_out = nullptr) {
    const std::size_t max_attempts = policy.max_attempts == 0 ? 1 : policy.max_attempts;
    auto delay = policy.initial_backoff;
    for (std::size_t attempt = 1;; ++attempt) {
        if (attempts_out) *attempts_out = attempt;
        try {
            return fn();
        } catch (const TransientEndpointError& e) {
            if (attempt >= max_attempts) {
                throw EndpointError("endpoint failed after " + std::to_string(attempt) + " attempts: " + e.what());
            }
        }
        if (delay.count() > 0) std::this_thread::sleep_for(delay);
        delay = std::min(policy.max_backoff,
                         std::chrono::milliseconds(static_cast<long long>(static_cast<double>(delay.count()) * policy.multiplier)));
    }
}

} // namespace capval
