#include "capval/cli/commands.hpp"
#include "capval/error.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>

using namespace capval;

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("capval"));
    spdlog::set_pattern("%^%l%$: %v");

    CLI::App app{"capval: capability-aligned validation sets, loss scoring and loss-capability laws"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    bool force = false, verbose = false;
    app.add_option("--config", config_path, "run configuration JSON");
    app.add_option("--seed", seed, "override the configured seed");
    app.add_option("--out", out_dir, "override the output directory");
    app.add_flag("--force", force, "overwrite existing index or journals");
    app.add_flag("-v,--verbose", verbose, "debug logging");

    auto* index = app.add_subcommand("index", "build the BM25 passage index from corpus shards");

    std::vector<std::string> synth_domains;
    auto* synth = app.add_subcommand("synth", "synthesize validation sets for domains");
    synth->add_option("--domain", synth_domains, "domain id (repeatable; default all)");

    cli::ScoreOptions score_opts;
    auto* score = app.add_subcommand("score", "score validation sets with a model and update observations");
    score->add_option("--model", score_opts.model_id, "model id sent to the scoring endpoint");
    score->add_option("--domain", score_opts.domain_ids, "domain id (repeatable; default all)");
    score->add_option("--benchmark-scores", score_opts.benchmark_scores, "CSV model_id,benchmark_id,score");

    cli::FitOptions fit_opts;
    std::vector<std::string> gammas;
    bool fit_no_svg = false;
    auto* fit = app.add_subcommand("fit", "fit loss-to-capability sigmoids per domain");
    fit->add_option("--observations", fit_opts.observations, "observation table CSV");
    fit->add_option("--domain", fit_opts.domain_ids, "domain id (repeatable; default all in table)");
    fit->add_option("--gamma", gammas, "chance floor override, DOMAIN=VALUE (repeatable)");
    fit->add_flag("--no-svg", fit_no_svg, "skip plots");

    cli::PredictOptions predict_opts;
    auto* predict = app.add_subcommand("predict", "predict capability from losses or a training loss log");
    predict->add_option("--fit", predict_opts.fit_path, "fit artifact JSON")->required();
    predict->add_option("--loss", predict_opts.losses, "loss value (repeatable)");
    predict->add_option("--loss-log", predict_opts.loss_log, "CSV or JSONL training loss log");
    predict->add_option("--metric", predict_opts.metric, "restrict the loss log to one metric");

    cli::ScalefitOptions scale_opts;
    bool scale_no_svg = false;
    auto* scalefit = app.add_subcommand("scalefit", "fit loss against log training compute per series");
    scalefit->add_option("--input", scale_opts.input, "CSV series_id,compute,loss")->required();
    scalefit->add_flag("--no-svg", scale_no_svg, "skip the plot");

    auto* report = app.add_subcommand("report", "summarize artifacts under the output directory");

    CLI11_PARSE(app, argc, argv);
    if (verbose) spdlog::set_level(spdlog::level::debug);

    try {
        cli::RunConfig config;
        if (!config_path.empty()) config = cli::load_run_config(config_path);
        if (!out_dir.empty()) config.output_dir = out_dir;
        if (seed) config.seed = *seed;
        auto ctx = cli::make_context(std::move(config), std::cout, std::cerr);
        ctx.force = force;

        if (index->parsed()) return cli::cmd_index(ctx);
        if (synth->parsed()) return cli::cmd_synth(ctx, synth_domains);
        if (score->parsed()) return cli::cmd_score(ctx, score_opts);
        if (fit->parsed()) {
            for (const auto& g : gammas) {
                const auto eq = g.find('=');
                if (eq == std::string::npos) throw ConfigError("--gamma expects DOMAIN=VALUE, got '" + g + "'");
                try {
                    fit_opts.gamma_overrides[g.substr(0, eq)] = std::stod(g.substr(eq + 1));
                } catch (const std::exception&) {
                    throw ConfigError("--gamma value is not a number: '" + g + "'");
                }
            }
            fit_opts.svg = !fit_no_svg;
            return cli::cmd_fit(ctx, fit_opts);
        }
        if (predict->parsed()) return cli::cmd_predict(ctx, predict_opts);
        if (scalefit->parsed()) {
            scale_opts.svg = !scale_no_svg;
            return cli::cmd_scalefit(ctx, scale_opts);
        }
        if (report->parsed()) return cli::cmd_report(ctx);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
