#include "capval/cli/commands.hpp"

#include "capval/error.hpp"
#include "capval/text.hpp"

#include <filesystem>
#include <iostream>

namespace capval::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string resolve(const std::string& path, const std::string& base_dir) {
    if (path.empty() || base_dir.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(base_dir) / path).lexically_normal().string();
}

RetryPolicy parse_retry(const json& j) {
    RetryPolicy r;
    if (j.is_null()) return r;
    r.max_attempts = j.value("max_attempts", r.max_attempts);
    r.initial_backoff = std::chrono::milliseconds(j.value("initial_backoff_ms", r.initial_backoff.count()));
    r.multiplier = j.value("multiplier", r.multiplier);
    r.max_backoff = std::chrono::milliseconds(j.value("max_backoff_ms", r.max_backoff.count()));
    if (r.multiplier < 1.0) throw ConfigError("retry.multiplier must be >= 1");
    return r;
}

synthesis::LlmEndpointConfig parse_llm(const json& j, const std::string& key) {
    synthesis::LlmEndpointConfig c;
    c.base_url = j.value("base_url", std::string{});
    c.model_id = j.value("model", std::string{});
    if (c.base_url.empty() || c.model_id.empty()) throw ConfigError(key + " needs base_url and model");
    c.auth_env = j.value("auth_env", std::string{});
    c.timeout = std::chrono::seconds(j.value("timeout_s", c.timeout.count()));
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    if (c.max_in_flight == 0) throw ConfigError(key + ".max_in_flight must be positive");
    c.retry = parse_retry(j.contains("retry") ? j.at("retry") : json());
    return c;
}

lossmeter::ScoringEndpointConfig parse_scoring(const json& j) {
    lossmeter::ScoringEndpointConfig c;
    c.url = j.value("url", std::string{});
    if (c.url.empty()) throw ConfigError("scoring needs url");
    c.model_id = j.value("model", std::string{});
    c.auth_env = j.value("auth_env", std::string{});
    c.timeout = std::chrono::seconds(j.value("timeout_s", c.timeout.count()));
    c.max_context_tokens = j.value("max_context_tokens", c.max_context_tokens);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    if (c.max_in_flight == 0 || c.max_context_tokens == 0) {
        throw ConfigError("scoring.max_in_flight and scoring.max_context_tokens must be positive");
    }
    c.retry = parse_retry(j.contains("retry") ? j.at("retry") : json());
    return c;
}

} // namespace

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");

    RunConfig c;
    try {
        if (doc.contains("domains_file")) {
            const auto path = resolve(doc.at("domains_file").get<std::string>(), base_dir);
            if (!fs::exists(path)) throw ConfigError("domains_file not found: " + path);
            c.domains = load_domain_specs(path);
        } else if (doc.contains("domains")) {
            c.domains = parse_domain_specs(json{{"domains", doc.at("domains")}}.dump(), base_dir);
        }
        for (const auto& d : c.domains) {
            for (const auto& b : d.benchmarks) {
                if (b.sample_path.empty() || !fs::exists(b.sample_path)) {
                    throw ConfigError("benchmark '" + b.id + "' sample file not found: " + b.sample_path);
                }
            }
        }

        if (doc.contains("corpus")) {
            const auto& corpus = doc.at("corpus");
            c.corpus.index_dir = resolve(corpus.value("index", std::string{}), base_dir);
            for (const auto& s : corpus.value("shards", json::array())) {
                c.corpus.shards.push_back(resolve(s.get<std::string>(), base_dir));
            }
            if (corpus.contains("chunking")) {
                const auto& ch = corpus.at("chunking");
                c.corpus.chunking.target_chars = ch.value("target", c.corpus.chunking.target_chars);
                c.corpus.chunking.min_chars = ch.value("min", c.corpus.chunking.min_chars);
                c.corpus.chunking.max_chars = ch.value("max", c.corpus.chunking.max_chars);
                retrieval::validate(c.corpus.chunking);
            }
        }

        if (doc.contains("llm")) c.llm = parse_llm(doc.at("llm"), "llm");
        if (doc.contains("judge")) c.judge = parse_llm(doc.at("judge"), "judge");
        if (doc.contains("generator")) c.generator = parse_llm(doc.at("generator"), "generator");
        if (doc.contains("scoring")) c.scoring = parse_scoring(doc.at("scoring"));

        c.output_dir = resolve(doc.value("output_dir", c.output_dir), base_dir);

        if (doc.contains("synthesis")) {
            const auto& s = doc.at("synthesis");
            c.retrieval_k = s.value("retrieval_k", c.retrieval_k);
            c.retrieval_only_cap = s.value("retrieval_only_cap", c.retrieval_only_cap);
            c.split_per_question = s.value("split_per_question", c.split_per_question);
            c.prompt_dir = resolve(s.value("prompt_dir", std::string{}), base_dir);
            if (c.retrieval_k == 0) throw ConfigError("synthesis.retrieval_k must be at least 1");
        }
        c.aggregation = lossmeter::parse_aggregation(doc.value("aggregation", std::string("macro")));
        const auto p95 = doc.value("p95_mode", std::string("population_sd"));
        if (p95 == "population_sd") {
            c.p95_mode = caplaw::P95Mode::population_sd;
        } else if (p95 == "mean_abs") {
            c.p95_mode = caplaw::P95Mode::mean_abs;
        } else {
            throw ConfigError("p95_mode must be population_sd or mean_abs");
        }
        c.seed = doc.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
    auto c = parse_run_config(text::read_file(path), fs::path(path).parent_path().string());
    c.source = path;
    return c;
}

Context make_context(RunConfig config, std::ostream& out, std::ostream& err) {
    Context ctx;
    ctx.config = std::move(config);
    ctx.out = &out;
    ctx.err = &err;
    ctx.llm_factory = [](const synthesis::LlmEndpointConfig& c) {
        return std::make_shared<synthesis::HttpChatBackend>(c);
    };
    ctx.scoring_factory = [](const lossmeter::ScoringEndpointConfig& c) {
        return std::make_shared<lossmeter::HttpScoringBackend>(c);
    };
    ctx.clock = synthesis::utc_timestamp;
    return ctx;
}

std::string OutputLayout::validation_dir() const { return (fs::path(root) / "validation").string(); }
std::string OutputLayout::validation_set(const std::string& domain_id) const {
    return (fs::path(validation_dir()) / (domain_id + ".jsonl")).string();
}
std::string OutputLayout::validation_manifest() const { return (fs::path(validation_dir()) / "manifest.json").string(); }
std::string OutputLayout::journal(const std::string& domain_id) const {
    return (fs::path(root) / "journal" / (domain_id + ".jsonl")).string();
}
std::string OutputLayout::loss_cache() const { return (fs::path(root) / "cache" / "sample_losses.jsonl").string(); }
std::string OutputLayout::observations() const { return (fs::path(root) / "observations.csv").string(); }
std::string OutputLayout::fits_dir() const { return (fs::path(root) / "fits").string(); }
std::string OutputLayout::fit(const std::string& domain_id) const {
    return (fs::path(fits_dir()) / (domain_id + ".json")).string();
}
std::string OutputLayout::predictions_dir() const { return (fs::path(root) / "predictions").string(); }
std::string OutputLayout::scalefit_dir() const { return (fs::path(root) / "scalefit").string(); }

} // namespace capval::cli
