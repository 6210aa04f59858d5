#pragma once

#include "capval/retry.hpp"
#include "capval/synthesis/types.hpp"

#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace capval::lossmeter {

struct SampleLoss {
    std::string sample_id;
    std::string model_id;
    std::string domain_id;
    std::size_t token_count = 0;
    double mean_ce = 0.0; // nats per token
    double sum_ce = 0.0;  // nats
    bool truncated = false;
    std::string text_sha256; // of the scored text; cache entries with another hash are stale
};

// Builds a SampleLoss from per-token natural-log probabilities.
SampleLoss sample_loss_from_logprobs(std::string sample_id, std::string model_id, std::string domain_id,
                                     std::span<const double> token_logprobs, bool truncated = false);

struct ScoringResponse {
    std::vector<double> token_logprobs;
    bool truncated = false;
};

// Anything that can return per-token log-probabilities for a text under one
// model. Implementations must tolerate concurrent calls.
class ScoringBackend {
public:
    virtual ~ScoringBackend() = default;
    virtual ScoringResponse score(const std::string& text) = 0;
};

struct ScoringEndpointConfig {
    std::string url; // full URL the {text} POST goes to
    std::string model_id;
    std::string auth_env;
    RetryPolicy retry;
    std::chrono::seconds timeout{120};
    std::size_t max_context_tokens = 8192;
    std::size_t max_in_flight = 4;
};

// JSON POST {"text": ...} -> {"token_logprobs": [...], "truncated"?: bool}.
class HttpScoringBackend final : public ScoringBackend {
public:
    explicit HttpScoringBackend(ScoringEndpointConfig config);
    ScoringResponse score(const std::string& text) override;

private:
    ScoringEndpointConfig config_;
};

// Scores the full sample text. Responses longer than max_context_tokens are
// cut to that length and flagged as truncated.
SampleLoss score_sample(ScoringBackend& backend, const ScoringEndpointConfig& config, const std::string& model_id,
                        const synthesis::ValidationSample& sample);

enum class Aggregation { macro, micro };
Aggregation parse_aggregation(const std::string& name);

// Macro: unweighted mean of per-sample mean_ce. Micro: token-weighted.
double domain_loss(std::span<const SampleLoss> losses, Aggregation mode = Aggregation::macro);

// Append-only JSONL cache keyed by (model_id, sample_id). Later lines win.
// A lookup with a text hash misses when the stored entry scored other text.
class SampleLossCache {
public:
    SampleLossCache() = default;
    explicit SampleLossCache(std::string path);

    std::optional<SampleLoss> find(const std::string& model_id, const std::string& sample_id,
                                   const std::string& text_sha256 = {}) const;
    void put(const SampleLoss& loss);
    std::size_t size() const;

private:
    std::string path_;
    mutable std::mutex mutex_;
    std::map<std::pair<std::string, std::string>, SampleLoss> entries_;
};

struct ScoreRunResult {
    std::vector<SampleLoss> losses;      // in sample order, successes only
    std::vector<std::pair<std::string, std::string>> failures; // sample_id, message
    std::size_t endpoint_calls = 0;
    std::size_t cache_hits = 0;
};

// Scores every sample, consulting and filling the cache, with at most
// config.max_in_flight concurrent requests.
ScoreRunResult score_samples(ScoringBackend& backend, const ScoringEndpointConfig& config, const std::string& model_id,
                             std::span<const synthesis::ValidationSample> samples, SampleLossCache* cache);

struct LossCurvePoint {
    std::string model_id;
    std::string domain_id;
    std::string metric; // "iid" or "supervalid"
    std::string stage;
    double tokens_seen = 0.0;
    double loss = 0.0; // nats per token
    std::size_t source_row = 0;
};

struct LossSeries {
    std::string model_id;
    std::string domain_id;
    std::string metric;
    std::string stage;
    std::vector<LossCurvePoint> points; // tokens_seen strictly increasing
};

// CSV with header model_id,domain_id,metric,stage,tokens_seen,loss and an
// optional "unit" column (nats|bits), or JSONL objects with the same keys.
// Groups come back ordered by (model, domain, metric, first tokens_seen).
// Two rows with equal tokens_seen in one (model, domain, metric) series raise
// OrderingError citing the later row.
std::vector<LossSeries> parse_loss_log(const std::string& contents, const std::string& source, bool jsonl = false);
std::vector<LossSeries> ingest_loss_log(const std::string& path);

} // namespace capval::lossmeter
