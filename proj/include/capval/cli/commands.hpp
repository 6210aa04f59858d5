#pragma once

#include "capval/caplaw.hpp"
#include "capval/core.hpp"
#include "capval/lossmeter.hpp"
#include "capval/retrieval.hpp"
#include "capval/synthesis/llm_client.hpp"
#include "capval/synthesis/pipeline.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace capval::cli {

struct CorpusConfig {
    std::string index_dir;
    std::vector<std::string> shards;
    retrieval::ChunkConfig chunking;
};

struct RunConfig {
    std::string source; // config file the settings came from, if any
    std::vector<DomainSpec> domains;
    CorpusConfig corpus;
    std::optional<synthesis::LlmEndpointConfig> llm;       // extraction, and the fallback for the others
    std::optional<synthesis::LlmEndpointConfig> judge;
    std::optional<synthesis::LlmEndpointConfig> generator;
    std::optional<lossmeter::ScoringEndpointConfig> scoring;
    std::string output_dir = "capval-out";
    std::size_t retrieval_k = 8;
    std::size_t retrieval_only_cap = 80000;
    bool split_per_question = false;
    std::string prompt_dir;
    lossmeter::Aggregation aggregation = lossmeter::Aggregation::macro;
    caplaw::P95Mode p95_mode = caplaw::P95Mode::population_sd;
    std::uint64_t seed = 0;
};

// Relative paths are resolved against `base_dir`. Throws ConfigError naming
// the offending key or missing path.
RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir);
RunConfig load_run_config(const std::string& path);

using LlmFactory = std::function<std::shared_ptr<synthesis::CompletionBackend>(const synthesis::LlmEndpointConfig&)>;
using ScoringFactory =
    std::function<std::shared_ptr<lossmeter::ScoringBackend>(const lossmeter::ScoringEndpointConfig&)>;

// Everything a subcommand needs besides its own arguments. Factories default
// to the HTTP backends; tests swap in mocks.
struct Context {
    RunConfig config;
    bool force = false;
    std::ostream* out = nullptr;
    std::ostream* err = nullptr;
    LlmFactory llm_factory;
    ScoringFactory scoring_factory;
    synthesis::Clock clock;
};

Context make_context(RunConfig config, std::ostream& out, std::ostream& err);

// Output layout under RunConfig::output_dir.
struct OutputLayout {
    std::string root;
    std::string validation_dir() const;
    std::string validation_set(const std::string& domain_id) const;
    std::string validation_manifest() const;
    std::string journal(const std::string& domain_id) const;
    std::string loss_cache() const;
    std::string observations() const;
    std::string fits_dir() const;
    std::string fit(const std::string& domain_id) const;
    std::string predictions_dir() const;
    std::string scalefit_dir() const;
};

// Each returns the process exit code: 0 when at least one requested unit
// succeeded. Configuration problems throw ConfigError.
int cmd_index(Context& ctx);

int cmd_synth(Context& ctx, const std::vector<std::string>& domain_ids);

struct ScoreOptions {
    std::string model_id;
    std::vector<std::string> domain_ids;
    std::string benchmark_scores; // optional CSV model_id,benchmark_id,score
};
int cmd_score(Context& ctx, const ScoreOptions& options);

struct FitOptions {
    std::string observations; // defaults to the layout's observation table
    std::vector<std::string> domain_ids;
    std::map<std::string, double> gamma_overrides;
    bool svg = true;
};
int cmd_fit(Context& ctx, const FitOptions& options);

struct PredictOptions {
    std::string fit_path;
    std::vector<double> losses;
    std::string loss_log;
    std::string metric; // optional filter on the loss log
};
int cmd_predict(Context& ctx, const PredictOptions& options);

struct ScalefitOptions {
    std::string input; // CSV series_id,compute,loss or series_id,n_params,tokens,loss
    bool svg = true;
};
int cmd_scalefit(Context& ctx, const ScalefitOptions& options);

int cmd_report(Context& ctx);

// SigmoidFit <-> the JSON written by cmd_fit.
nlohmann::json fit_to_json(const caplaw::SigmoidFit& fit);
caplaw::SigmoidFit fit_from_json(const nlohmann::json& j);

struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points; // one <circle> each
    std::vector<std::pair<double, double>> curve;  // drawn as a polyline
};

// Self-contained SVG scatter-plus-curve chart. With log_x the x values must be
// positive and are placed on a log10 axis.
std::string render_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<PlotSeries>& series, bool log_x = false);

} // namespace capval::cli
