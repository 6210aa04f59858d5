#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace capval {

enum class SynthesisMode { full, retrieval_only, blank_filling };

std::string to_string(SynthesisMode mode);
SynthesisMode parse_synthesis_mode(const std::string& name);

// How a benchmark reports its score before normalization to [0,1].
struct ScoreKind {
    enum class Tag { accuracy_fraction, accuracy_percent, raw_with_bounds };

    Tag tag = Tag::accuracy_fraction;
    double min = 0.0; // only meaningful for raw_with_bounds
    double max = 1.0;

    static ScoreKind fraction() { return {}; }
    static ScoreKind percent() { return {Tag::accuracy_percent, 0.0, 100.0}; }
    static ScoreKind bounded(double lo, double hi);
};

struct BenchmarkRef {
    std::string id;
    std::string sample_path;
    ScoreKind score_kind;
};

// A capability domain: the benchmarks that probe one latent skill and the
// chance-level floor of their normalized scores.
struct DomainSpec {
    std::string id;
    std::string name;
    std::vector<BenchmarkRef> benchmarks;
    double gamma = 0.0;
    SynthesisMode synthesis_mode = SynthesisMode::full;
};

// Throws ConfigError on an empty benchmark list, duplicate benchmark ids or
// gamma outside [0,1).
void validate(const DomainSpec& domain);

struct BenchmarkSample {
    std::string id;
    std::string benchmark_id;
    std::string text;
    std::string answer;
    std::map<std::string, std::string> metadata;
};

struct ModelObservation {
    std::string model_id;
    std::string domain_id;
    double loss = 0.0; // mean cross-entropy, nats per token
    std::optional<double> capability;
    std::optional<double> compute; // FLOPs
    std::optional<double> tokens_seen;
    std::optional<std::string> stage;
};

// Builds an observation, enforcing loss > 0 and clamping the capability into
// [gamma, 1] with a logged warning.
ModelObservation make_observation(std::string model_id, std::string domain_id, double loss,
                                  std::optional<double> capability, double gamma);

double clamp_capability(double value, double gamma, const std::string& context = {});

// Maps a raw benchmark score into [0,1]. `benchmark_id` only feeds error text.
double normalize_score(double raw, const ScoreKind& kind, const std::string& benchmark_id = {});

// Macro average over benchmarks: every benchmark weighs the same no matter how
// many samples it has.
double estimate_domain_capability(std::span<const double> normalized_scores);

// One JSON object per line: {"id","benchmark_id","text","answer","metadata"}.
// Blank lines are skipped. An empty file yields an empty list and a warning.
std::vector<BenchmarkSample> load_benchmark_samples(const BenchmarkRef& ref);

// Domain config document: {"domains":[{id,name,gamma,synthesis_mode,benchmarks:[...]}]}.
// Relative sample paths are resolved against `base_dir`.
std::vector<DomainSpec> parse_domain_specs(const std::string& json_text, const std::string& base_dir);
std::vector<DomainSpec> load_domain_specs(const std::string& path);

const DomainSpec& find_domain(std::span<const DomainSpec> domains, const std::string& id);

} // namespace capval
