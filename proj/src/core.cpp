#include "capval/core.hpp"

#include "capval/error.hpp"
#include "capval/text.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

namespace capval {

using nlohmann::json;

std::string to_string(SynthesisMode mode) {
    switch (mode) {
    case SynthesisMode::full: return "full";
    case SynthesisMode::retrieval_only: return "retrieval_only";
    case SynthesisMode::blank_filling: return "blank_filling";
    }
    return "full";
}

SynthesisMode parse_synthesis_mode(const std::string& name) {
    if (name == "full") return SynthesisMode::full;
    if (name == "retrieval_only") return SynthesisMode::retrieval_only;
    if (name == "blank_filling") return SynthesisMode::blank_filling;
    throw ConfigError("unknown synthesis_mode '" + name + "'");
}

ScoreKind ScoreKind::bounded(double lo, double hi) {
    if (!(lo < hi)) {
        throw ConfigError("raw_with_bounds requires min < max (got " + std::to_string(lo) + ", " +
                          std::to_string(hi) + ")");
    }
    return {Tag::raw_with_bounds, lo, hi};
}

void validate(const DomainSpec& domain) {
    if (domain.id.empty()) throw ConfigError("domain id is empty");
    if (domain.benchmarks.empty()) {
        throw ConfigError("domain '" + domain.id + "' has no benchmarks");
    }
    std::set<std::string> seen;
    for (const auto& b : domain.benchmarks) {
        if (!seen.insert(b.id).second) {
            throw ConfigError("domain '" + domain.id + "' lists benchmark '" + b.id + "' twice");
        }
        if (b.score_kind.tag == ScoreKind::Tag::raw_with_bounds && !(b.score_kind.min < b.score_kind.max)) {
            throw ConfigError("benchmark '" + b.id + "' has min >= max");
        }
    }
    if (!(domain.gamma >= 0.0 && domain.gamma < 1.0)) {
        throw ConfigError("domain '" + domain.id + "' gamma must lie in [0,1)");
    }
}

double clamp_capability(double value, double gamma, const std::string& context) {
    if (!std::isfinite(value)) throw RangeError("capability is not finite" + (context.empty() ? "" : " (" + context + ")"));
    if (value < gamma || value > 1.0) {
        const double clamped = std::clamp(value, gamma, 1.0);
        spdlog::warn("capability {} outside [{}, 1]{}; clamped to {}", value, gamma,
                     context.empty() ? "" : " for " + context, clamped);
        return clamped;
    }
    return value;
}

ModelObservation make_observation(std::string model_id, std::string domain_id, double loss,
                                  std::optional<double> capability, double gamma) {
    if (!(std::isfinite(loss) && loss > 0.0)) {
        throw RangeError("observation " + model_id + "/" + domain_id + " has non-positive loss");
    }
    ModelObservation obs;
    obs.model_id = std::move(model_id);
    obs.domain_id = std::move(domain_id);
    obs.loss = loss;
    if (capability) obs.capability = clamp_capability(*capability, gamma, obs.model_id + "/" + obs.domain_id);
    return obs;
}

double normalize_score(double raw, const ScoreKind& kind, const std::string& benchmark_id) {
    const std::string who = benchmark_id.empty() ? "" : " for benchmark '" + benchmark_id + "'";
    if (!std::isfinite(raw)) throw RangeError("score is not finite" + who);
    switch (kind.tag) {
    case ScoreKind::Tag::accuracy_fraction:
        if (raw < 0.0 || raw > 1.0) throw RangeError("fraction score " + std::to_string(raw) + " outside [0,1]" + who);
        return raw;
    case ScoreKind::Tag::accuracy_percent:
        if (raw < 0.0 || raw > 100.0) throw RangeError("percent score " + std::to_string(raw) + " outside [0,100]" + who);
        return raw / 100.0;
    case ScoreKind::Tag::raw_with_bounds:
        if (raw < kind.min || raw > kind.max) {
            throw RangeError("raw score " + std::to_string(raw) + " outside [" + std::to_string(kind.min) + "," +
                             std::to_string(kind.max) + "]" + who);
        }
        return (raw - kind.min) / (kind.max - kind.min);
    }
    throw RangeError("unknown score kind" + who);
}

double estimate_domain_capability(std::span<const double> normalized_scores) {
    if (normalized_scores.empty()) throw PreconditionError("cannot estimate capability from zero benchmark scores");
    for (double s : normalized_scores) {
        if (!(s >= 0.0 && s <= 1.0)) throw RangeError("normalized score " + std::to_string(s) + " outside [0,1]");
    }
    // Sorted summation makes the mean independent of input order bit-for-bit.
    std::vector<double> sorted(normalized_scores.begin(), normalized_scores.end());
    std::sort(sorted.begin(), sorted.end());
    const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
    return std::clamp(mean, sorted.front(), sorted.back());
}

std::vector<BenchmarkSample> load_benchmark_samples(const BenchmarkRef& ref) {
    const std::string contents = text::read_file(ref.sample_path);
    std::vector<BenchmarkSample> samples;
    std::set<std::string> ids;
    std::size_t line_no = 0;
    for (std::string_view line : text::split_lines(contents)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(ref.sample_path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what(),
                             std::string(line), line_no);
        }
        if (!obj.is_object() || !obj.contains("id") || !obj.contains("text")) {
            throw ParseError(ref.sample_path + ":" + std::to_string(line_no) + ": expected object with \"id\" and \"text\"",
                             std::string(line), line_no);
        }
        BenchmarkSample s;
        try {
            s.id = obj.at("id").is_string() ? obj.at("id").get<std::string>() : obj.at("id").dump();
            s.benchmark_id = obj.value("benchmark_id", ref.id);
            s.text = obj.at("text").get<std::string>();
            s.answer = obj.value("answer", std::string{});
            if (obj.contains("metadata") && obj.at("metadata").is_object()) {
                for (const auto& [k, v] : obj.at("metadata").items()) {
                    s.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
                }
            }
        } catch (const json::exception& e) {
            throw ParseError(ref.sample_path + ":" + std::to_string(line_no) + ": bad field: " + e.what(),
                             std::string(line), line_no);
        }
        if (text::trim(s.text).empty()) {
            throw ParseError(ref.sample_path + ":" + std::to_string(line_no) + ": empty text", std::string(line), line_no);
        }
        if (!ids.insert(s.id).second) {
            throw DuplicateError(ref.sample_path + ":" + std::to_string(line_no) + ": duplicate sample id '" + s.id + "'",
                                 line_no);
        }
        samples.push_back(std::move(s));
    }
    if (samples.empty()) spdlog::warn("benchmark '{}' file '{}' holds no samples", ref.id, ref.sample_path);
    return samples;
}

namespace {

ScoreKind parse_score_kind(const json& j) {
    if (j.is_null()) return ScoreKind::fraction();
    if (j.is_string()) {
        const auto name = j.get<std::string>();
        if (name == "accuracy_fraction") return ScoreKind::fraction();
        if (name == "accuracy_percent") return ScoreKind::percent();
        throw ConfigError("unknown score_kind '" + name + "'");
    }
    if (j.is_object() && j.value("kind", std::string{}) == "raw_with_bounds") {
        return ScoreKind::bounded(j.at("min").get<double>(), j.at("max").get<double>());
    }
    throw ConfigError("score_kind must be a name or {\"kind\":\"raw_with_bounds\",\"min\",\"max\"}");
}

} // namespace

std::vector<DomainSpec> parse_domain_specs(const std::string& json_text, const std::string& base_dir) {
    namespace fs = std::filesystem;
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("domain config is not valid JSON: ") + e.what());
    }
    const json& list = doc.is_array() ? doc : doc.value("domains", json::array());
    std::vector<DomainSpec> domains;
    std::set<std::string> ids;
    try {
        for (const auto& d : list) {
            DomainSpec spec;
            spec.id = d.at("id").get<std::string>();
            spec.name = d.value("name", spec.id);
            spec.gamma = d.value("gamma", 0.0);
            spec.synthesis_mode = parse_synthesis_mode(d.value("synthesis_mode", std::string("full")));
            for (const auto& b : d.at("benchmarks")) {
                BenchmarkRef ref;
                ref.id = b.at("id").get<std::string>();
                const auto path = b.value("sample_path", std::string{});
                ref.sample_path = path.empty() || fs::path(path).is_absolute() || base_dir.empty()
                                      ? path
                                      : (fs::path(base_dir) / path).lexically_normal().string();
                ref.score_kind = parse_score_kind(b.contains("score_kind") ? b.at("score_kind") : json());
                spec.benchmarks.push_back(std::move(ref));
            }
            validate(spec);
            if (!ids.insert(spec.id).second) throw ConfigError("duplicate domain id '" + spec.id + "'");
            domains.push_back(std::move(spec));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("domain config: ") + e.what());
    }
    return domains;
}

std::vector<DomainSpec> load_domain_specs(const std::string& path) {
    return parse_domain_specs(text::read_file(path), std::filesystem::path(path).parent_path().string());
}

const DomainSpec& find_domain(std::span<const DomainSpec> domains, const std::string& id) {
    for (const auto& d : domains) {
        if (d.id == id) return d;
    }
    throw ConfigError("unknown domain id '" + id + "'");
}

} // namespace capval
