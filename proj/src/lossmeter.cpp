#include "capval/lossmeter.hpp"

#include "capval/hash.hpp"

#include "capval/error.hpp"
#include "capval/http.hpp"
#include "capval/parallel.hpp"
#include "capval/text.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <tuple>

namespace capval::lossmeter {

using nlohmann::json;

SampleLoss sample_loss_from_logprobs(std::string sample_id, std::string model_id, std::string domain_id,
                                     std::span<const double> token_logprobs, bool truncated) {
    if (token_logprobs.empty()) throw PreconditionError("sample '" + sample_id + "' scored zero tokens");
    double sum = 0.0;
    for (double lp : token_logprobs) {
        if (!std::isfinite(lp) || lp > 1e-9) {
            throw RangeError("sample '" + sample_id + "' has an invalid token log-probability " + fmt::format("{}", lp));
        }
        sum -= std::min(lp, 0.0);
    }
    SampleLoss loss;
    loss.sample_id = std::move(sample_id);
    loss.model_id = std::move(model_id);
    loss.domain_id = std::move(domain_id);
    loss.token_count = token_logprobs.size();
    loss.sum_ce = sum;
    loss.mean_ce = sum / static_cast<double>(token_logprobs.size());
    loss.truncated = truncated;
    return loss;
}

HttpScoringBackend::HttpScoringBackend(ScoringEndpointConfig config) : config_(std::move(config)) {
    if (config_.url.empty()) throw ConfigError("scoring endpoint URL is empty");
}

ScoringResponse HttpScoringBackend::score(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> headers;
    if (auto token = http::token_from_env(config_.auth_env); !token.empty()) {
        headers.emplace_back("Authorization", "Bearer " + token);
    }
    json body = {{"text", text}};
    if (!config_.model_id.empty()) body["model"] = config_.model_id;
    const auto res = http::post_json(config_.url, body.dump(), headers, config_.timeout);
    try {
        const json reply = json::parse(res.body);
        ScoringResponse out;
        out.token_logprobs = reply.at("token_logprobs").get<std::vector<double>>();
        out.truncated = reply.value("truncated", false);
        return out;
    } catch (const json::exception& e) {
        throw EndpointError("scoring endpoint returned a malformed reply: " + std::string(e.what()));
    }
}

SampleLoss score_sample(ScoringBackend& backend, const ScoringEndpointConfig& config, const std::string& model_id,
                        const synthesis::ValidationSample& sample) {
    auto response = with_retries(config.retry, [&] { return backend.score(sample.text); });
    bool truncated = response.truncated;
    if (config.max_context_tokens > 0 && response.token_logprobs.size() > config.max_context_tokens) {
        response.token_logprobs.resize(config.max_context_tokens);
        truncated = true;
    }
    if (truncated) spdlog::warn("sample '{}' exceeded the scoring context and was truncated", sample.id);
    auto loss = sample_loss_from_logprobs(sample.id, model_id, sample.domain_id, response.token_logprobs, truncated);
    loss.text_sha256 = sha256_hex(sample.text);
    return loss;
}

Aggregation parse_aggregation(const std::string& name) {
    if (name == "macro") return Aggregation::macro;
    if (name == "micro") return Aggregation::micro;
    throw ConfigError("unknown aggregation '" + name + "' (expected macro or micro)");
}

double domain_loss(std::span<const SampleLoss> losses, Aggregation mode) {
    if (losses.empty()) throw PreconditionError("domain loss needs at least one sample");
    const auto& first = losses.front();
    for (const auto& l : losses) {
        if (l.model_id != first.model_id || l.domain_id != first.domain_id) {
            throw ConsistencyError("domain loss mixes (" + first.model_id + "," + first.domain_id + ") with (" +
                                   l.model_id + "," + l.domain_id + ")");
        }
    }
    // Sorting the terms makes the result independent of sample order.
    std::vector<double> terms;
    terms.reserve(losses.size());
    if (mode == Aggregation::macro) {
        for (const auto& l : losses) terms.push_back(l.mean_ce);
        std::sort(terms.begin(), terms.end());
        const double mean = std::accumulate(terms.begin(), terms.end(), 0.0) / static_cast<double>(terms.size());
        return std::clamp(mean, terms.front(), terms.back());
    }
    double tokens = 0.0;
    for (const auto& l : losses) {
        terms.push_back(l.sum_ce);
        tokens += static_cast<double>(l.token_count);
    }
    std::sort(terms.begin(), terms.end());
    return std::accumulate(terms.begin(), terms.end(), 0.0) / tokens;
}

namespace {

json loss_to_json(const SampleLoss& l) {
    return {{"model_id", l.model_id},       {"sample_id", l.sample_id}, {"domain_id", l.domain_id},
            {"token_count", l.token_count}, {"mean_ce", l.mean_ce},     {"sum_ce", l.sum_ce},
            {"truncated", l.truncated},     {"text_sha256", l.text_sha256}};
}

SampleLoss loss_from_json(const json& j) {
    SampleLoss l;
    l.model_id = j.at("model_id").get<std::string>();
    l.sample_id = j.at("sample_id").get<std::string>();
    l.domain_id = j.value("domain_id", std::string{});
    l.token_count = j.at("token_count").get<std::size_t>();
    l.mean_ce = j.at("mean_ce").get<double>();
    l.sum_ce = j.at("sum_ce").get<double>();
    l.truncated = j.value("truncated", false);
    l.text_sha256 = j.value("text_sha256", std::string{});
    return l;
}

} // namespace

SampleLossCache::SampleLossCache(std::string path) : path_(std::move(path)) {
    std::error_code ec;
    if (!std::filesystem::exists(path_, ec)) return;
    const std::string contents = text::read_file(path_);
    std::size_t line_no = 0;
    for (std::string_view line : text::split_lines(contents)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            auto l = loss_from_json(json::parse(line));
            entries_[{l.model_id, l.sample_id}] = std::move(l);
        } catch (const json::exception& e) {
            // A torn final line from an interrupted run is tolerated.
            spdlog::warn("{}:{}: skipping unreadable cache line ({})", path_, line_no, e.what());
        }
    }
}

std::optional<SampleLoss> SampleLossCache::find(const std::string& model_id, const std::string& sample_id,
                                                const std::string& text_sha256) const {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find({model_id, sample_id});
    if (it == entries_.end()) return std::nullopt;
    if (!text_sha256.empty() && it->second.text_sha256 != text_sha256) return std::nullopt;
    return it->second;
}

void SampleLossCache::put(const SampleLoss& loss) {
    std::lock_guard lock(mutex_);
    entries_[{loss.model_id, loss.sample_id}] = loss;
    if (path_.empty()) return;
    if (auto parent = std::filesystem::path(path_).parent_path(); !parent.empty()) {
        std::filesystem::create_directories(parent);
    }
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw IoError("cannot append to cache '" + path_ + "'");
    out << loss_to_json(loss).dump() << '\n';
    out.flush();
}

std::size_t SampleLossCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

ScoreRunResult score_samples(ScoringBackend& backend, const ScoringEndpointConfig& config, const std::string& model_id,
                             std::span<const synthesis::ValidationSample> samples, SampleLossCache* cache) {
    struct Slot {
        std::optional<SampleLoss> loss;
        std::string error;
        bool from_cache = false;
        bool called = false;
    };
    std::vector<Slot> slots(samples.size());
    parallel_for(samples.size(), config.max_in_flight, [&](std::size_t i) {
        const auto& s = samples[i];
        if (cache) {
            if (auto hit = cache->find(model_id, s.id, sha256_hex(s.text))) {
                slots[i].loss = std::move(hit);
                slots[i].from_cache = true;
                return;
            }
        }
        slots[i].called = true;
        try {
            auto loss = score_sample(backend, config, model_id, s);
            if (cache) cache->put(loss);
            slots[i].loss = std::move(loss);
        } catch (const Error& e) {
            slots[i].error = e.what();
        }
    });
    ScoreRunResult result;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].from_cache) ++result.cache_hits;
        if (slots[i].called) ++result.endpoint_calls;
        if (slots[i].loss) {
            result.losses.push_back(std::move(*slots[i].loss));
        } else {
            result.failures.emplace_back(samples[i].id, slots[i].error);
        }
    }
    return result;
}

namespace {

double parse_number(const std::string& field, const std::string& where, std::size_t row) {
    const auto t = text::trim(field);
    try {
        std::size_t used = 0;
        const double v = std::stod(std::string(t), &used);
        if (used != t.size() || !std::isfinite(v)) throw std::invalid_argument("bad");
        return v;
    } catch (const std::exception&) {
        throw ParseError(where + ": not a finite number: '" + std::string(t) + "'", field, row);
    }
}

double to_nats(double loss, const std::string& unit, const std::string& where, std::size_t row) {
    if (unit.empty() || unit == "nats" || unit == "nat") return loss;
    if (unit == "bits" || unit == "bit") return loss * std::numbers::ln2;
    throw ParseError(where + ": unknown loss unit '" + unit + "'", unit, row);
}

} // namespace

std::vector<LossSeries> parse_loss_log(const std::string& contents, const std::string& source, bool jsonl) {
    std::vector<LossCurvePoint> rows;
    const auto lines = text::split_lines(contents);
    if (jsonl) {
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (text::trim(lines[i]).empty()) continue;
            const std::string where = source + ":" + std::to_string(i + 1);
            try {
                const json j = json::parse(lines[i]);
                LossCurvePoint p;
                p.model_id = j.at("model_id").get<std::string>();
                p.domain_id = j.at("domain_id").get<std::string>();
                p.metric = j.at("metric").get<std::string>();
                p.stage = j.value("stage", std::string{});
                p.tokens_seen = j.at("tokens_seen").get<double>();
                p.loss = to_nats(j.at("loss").get<double>(), j.value("unit", std::string{}), where, i + 1);
                p.source_row = i + 1;
                rows.push_back(std::move(p));
            } catch (const json::exception& e) {
                throw ParseError(where + ": " + e.what(), std::string(lines[i]), i + 1);
            }
        }
    } else if (!lines.empty()) {
        const auto header = text::split_csv_record(lines.front());
        std::map<std::string, std::size_t> col;
        for (std::size_t i = 0; i < header.size(); ++i) col[std::string(text::trim(header[i]))] = i;
        for (const char* need : {"model_id", "domain_id", "metric", "stage", "tokens_seen", "loss"}) {
            if (!col.contains(need)) {
                throw ParseError(source + ": loss log header lacks column '" + need + "'", std::string(lines.front()), 1);
            }
        }
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (text::trim(lines[i]).empty()) continue;
            const auto f = text::split_csv_record(lines[i]);
            const std::string where = source + ":" + std::to_string(i + 1);
            auto get = [&](const char* name) {
                const auto it = col.find(name);
                return it != col.end() && it->second < f.size() ? std::string(text::trim(f[it->second])) : std::string{};
            };
            LossCurvePoint p;
            p.model_id = get("model_id");
            p.domain_id = get("domain_id");
            p.metric = get("metric");
            p.stage = get("stage");
            p.tokens_seen = parse_number(get("tokens_seen"), where, i + 1);
            p.loss = to_nats(parse_number(get("loss"), where, i + 1), get("unit"), where, i + 1);
            p.source_row = i + 1;
            rows.push_back(std::move(p));
        }
    }

    // Strictly increasing tokens within each (model, domain, metric) series.
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<const LossCurvePoint*>> series;
    for (const auto& p : rows) series[{p.model_id, p.domain_id, p.metric}].push_back(&p);
    for (auto& [key, pts] : series) {
        std::stable_sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->tokens_seen < b->tokens_seen; });
        for (std::size_t i = 1; i < pts.size(); ++i) {
            if (pts[i]->tokens_seen == pts[i - 1]->tokens_seen) {
                const auto* later = pts[i]->source_row > pts[i - 1]->source_row ? pts[i] : pts[i - 1];
                throw OrderingError(source + ":" + std::to_string(later->source_row) + ": tokens_seen " +
                                        fmt::format("{}", later->tokens_seen) + " repeats within series " +
                                        std::get<0>(key) + "/" + std::get<1>(key) + "/" + std::get<2>(key),
                                    later->source_row);
            }
        }
    }

    std::map<std::tuple<std::string, std::string, std::string, std::string>, LossSeries> groups;
    for (const auto& p : rows) {
        auto& g = groups[{p.model_id, p.domain_id, p.metric, p.stage}];
        g.model_id = p.model_id;
        g.domain_id = p.domain_id;
        g.metric = p.metric;
        g.stage = p.stage;
        g.points.push_back(p);
    }
    std::vector<LossSeries> out;
    for (auto& [key, g] : groups) {
        std::sort(g.points.begin(), g.points.end(), [](const auto& a, const auto& b) { return a.tokens_seen < b.tokens_seen; });
        out.push_back(std::move(g));
    }
    std::stable_sort(out.begin(), out.end(), [](const LossSeries& a, const LossSeries& b) {
        return std::tie(a.model_id, a.domain_id, a.metric, a.points.front().tokens_seen) <
               std::tie(b.model_id, b.domain_id, b.metric, b.points.front().tokens_seen);
    });
    return out;
}

std::vector<LossSeries> ingest_loss_log(const std::string& path) {
    const auto ext = std::filesystem::path(path).extension().string();
    return parse_loss_log(text::read_file(path), path, ext == ".jsonl" || ext == ".ndjson");
}

} // namespace capval::lossmeter
