#include "capval/cli/commands.hpp"

#include "capval/error.hpp"
#include "capval/hash.hpp"
#include "capval/observations.hpp"
#include "capval/text.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <ostream>
#include <set>

namespace capval::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::ostream& out(Context& ctx) { return *ctx.out; }
std::ostream& err(Context& ctx) { return *ctx.err; }

OutputLayout layout_of(const Context& ctx) { return {ctx.config.output_dir}; }

std::vector<DomainSpec> select_domains(const Context& ctx, const std::vector<std::string>& ids) {
    if (ids.empty()) {
        if (ctx.config.domains.empty()) throw ConfigError("no domains configured");
        return ctx.config.domains;
    }
    std::vector<DomainSpec> picked;
    for (const auto& id : ids) picked.push_back(find_domain(ctx.config.domains, id));
    return picked;
}

// Exclusive advisory lock on <output_dir>/.lock for commands that write caches.
class OutputLock {
public:
    explicit OutputLock(const std::string& dir) {
        fs::create_directories(dir);
        path_ = (fs::path(dir) / ".lock").string();
        fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0) throw IoError("cannot open lock file " + path_);
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw ConfigError("another capval process is writing to " + dir);
        }
    }
    ~OutputLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    std::string path_;
    int fd_ = -1;
};

std::string validation_checksum(const std::vector<synthesis::ValidationSample>& samples) {
    std::string lines;
    for (const auto& s : synthesis::without_timestamps(samples)) lines += json(s).dump() + "\n";
    return sha256_hex(lines);
}

json read_json_file(const std::string& path) {
    try {
        return json::parse(text::read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what(), {}, 0);
    }
}

const char* p95_mode_name(caplaw::P95Mode m) {
    return m == caplaw::P95Mode::mean_abs ? "mean_abs" : "population_sd";
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

} // namespace

json fit_to_json(const caplaw::SigmoidFit& fit) {
    json residuals = json::array();
    for (const auto& [model, r] : fit.residuals) residuals.push_back({{"model_id", model}, {"residual", r}});
    return {{"domain_id", fit.domain_id},
            {"alpha", fit.alpha},
            {"beta", fit.beta},
            {"gamma", fit.gamma},
            {"mse", fit.mse},
            {"p95", fit.p95},
            {"p95_mode", p95_mode_name(fit.p95_mode)},
            {"degenerate_p95", fit.degenerate_p95},
            {"n_points", fit.n_points},
            {"converged_starts", fit.converged_starts},
            {"residuals", residuals}};
}

caplaw::SigmoidFit fit_from_json(const json& j) {
    try {
        caplaw::SigmoidFit fit;
        fit.domain_id = j.value("domain_id", std::string{});
        fit.alpha = j.at("alpha").get<double>();
        fit.beta = j.at("beta").get<double>();
        fit.gamma = j.at("gamma").get<double>();
        fit.mse = j.value("mse", 0.0);
        fit.p95 = j.value("p95", 0.0);
        fit.p95_mode = j.value("p95_mode", std::string{}) == "mean_abs" ? caplaw::P95Mode::mean_abs
                                                                         : caplaw::P95Mode::population_sd;
        fit.degenerate_p95 = j.value("degenerate_p95", false);
        fit.n_points = j.value("n_points", std::size_t{0});
        fit.converged_starts = j.value("converged_starts", std::size_t{0});
        for (const auto& r : j.value("residuals", json::array())) {
            fit.residuals.emplace_back(r.at("model_id").get<std::string>(), r.at("residual").get<double>());
        }
        if (!(fit.alpha > 0) || !(fit.gamma >= 0 && fit.gamma < 1)) {
            throw ConfigError("fit artifact has alpha <= 0 or gamma outside [0,1)");
        }
        return fit;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("fit artifact: ") + e.what());
    }
}

int cmd_index(Context& ctx) {
    const auto& corpus = ctx.config.corpus;
    if (corpus.index_dir.empty()) throw ConfigError("corpus.index is not set");
    if (corpus.shards.empty()) throw ConfigError("corpus.shards is empty");
    for (const auto& s : corpus.shards) {
        if (!fs::exists(s)) throw ConfigError("shard not found: " + s);
    }
    if (fs::exists(corpus.index_dir) && !fs::is_empty(corpus.index_dir)) {
        if (!ctx.force) {
            throw ConfigError("index directory " + corpus.index_dir + " already exists; rerun with --force to rebuild");
        }
        fs::remove_all(corpus.index_dir);
    }
    retrieval::IndexConfig ic;
    ic.chunking = corpus.chunking;
    const auto index = retrieval::Index::build(corpus.shards, ic);
    index.save(corpus.index_dir);
    const auto& st = index.stats();
    out(ctx) << fmt::format("index written to {}\n", corpus.index_dir)
             << fmt::format("  shards              {}\n", corpus.shards.size())
             << fmt::format("  documents           {}\n", st.documents)
             << fmt::format("  passages            {}\n", st.passages)
             << fmt::format("  terms               {}\n", st.terms)
             << fmt::format("  duplicates dropped  {}\n", st.dropped_duplicates)
             << fmt::format("  short dropped       {}\n", st.dropped_short)
             << fmt::format("  avg passage tokens  {:.2f}\n", st.avg_passage_tokens)
             << fmt::format("  manifest sha256     {}\n", index.manifest_checksum());
    return 0;
}

int cmd_synth(Context& ctx, const std::vector<std::string>& domain_ids) {
    const auto domains = select_domains(ctx, domain_ids);
    const auto layout = layout_of(ctx);
    const auto& cfg = ctx.config;
    OutputLock lock(layout.root);

    const auto prompts = synthesis::PromptSet::load(cfg.prompt_dir.empty() ? synthesis::default_prompt_dir()
                                                                            : cfg.prompt_dir);
    const bool needs_llm = std::any_of(domains.begin(), domains.end(), [](const DomainSpec& d) {
        return d.synthesis_mode != SynthesisMode::blank_filling;
    });
    std::optional<retrieval::Index> index;
    if (needs_llm) {
        if (cfg.corpus.index_dir.empty()) throw ConfigError("corpus.index is not set");
        if (!fs::exists(fs::path(cfg.corpus.index_dir) / "manifest.json")) {
            throw ConfigError("no index at " + cfg.corpus.index_dir + "; run the index command first");
        }
        if (!cfg.llm) throw ConfigError("llm endpoint is not configured");
        index = retrieval::Index::load(cfg.corpus.index_dir);
    }
    auto client = [&](const synthesis::LlmEndpointConfig& c) { return synthesis::LlmClient(ctx.llm_factory(c), c); };

    json manifest = json::object();
    if (fs::exists(layout.validation_manifest())) manifest = read_json_file(layout.validation_manifest());
    if (!manifest.contains("domains") || !manifest["domains"].is_object()) manifest["domains"] = json::object();

    std::size_t succeeded = 0;
    std::vector<std::string> rows;
    for (const auto& domain : domains) {
        synthesis::SynthesisConfig sc;
        sc.retrieval_k = cfg.retrieval_k;
        sc.retrieval_only_cap = cfg.retrieval_only_cap;
        sc.seed = cfg.seed;
        sc.split_per_question = cfg.split_per_question;
        sc.journal_path = layout.journal(domain.id);
        sc.clock = ctx.clock ? ctx.clock : synthesis::Clock(synthesis::utc_timestamp);
        if (ctx.force) fs::remove(sc.journal_path);

        synthesis::Endpoints ep;
        if (domain.synthesis_mode != SynthesisMode::blank_filling) {
            ep.extractor = client(*cfg.llm);
            ep.judge = client(cfg.judge ? *cfg.judge : *cfg.llm);
            if (domain.synthesis_mode == SynthesisMode::full) {
                ep.generator = client(cfg.generator ? *cfg.generator : *cfg.llm);
            }
        }

        synthesis::SynthesisResult result;
        try {
            result = synthesis::synthesize_domain(domain, index ? &*index : nullptr, ep, prompts, sc);
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            err(ctx) << fmt::format("domain {}: {}\n", domain.id, e.what());
            continue;
        }
        const auto& rep = result.report;
        synthesis::write_validation_set(layout.validation_set(domain.id), result.samples);

        std::size_t total_chars = 0;
        for (const auto& s : result.samples) total_chars += text::codepoint_count(s.text);
        const double mean_chars =
            result.samples.empty() ? 0.0 : static_cast<double>(total_chars) / static_cast<double>(result.samples.size());

        manifest["domains"][domain.id] = {
            {"domain_id", domain.id},
            {"name", domain.name},
            {"mode", to_string(domain.synthesis_mode)},
            {"file", fs::path(layout.validation_set(domain.id)).filename().string()},
            {"samples", result.samples.size()},
            {"mean_chars", mean_chars},
            {"benchmark_samples", rep.benchmark_samples},
            {"samples_without_factors", rep.samples_without_factors},
            {"factors", rep.factors},
            {"factors_with_evidence", rep.factors_with_evidence},
            {"factors_filtered_empty", rep.factors_filtered_empty},
            {"passages_judged", rep.passages_judged},
            {"passages_kept", rep.passages_kept},
            {"failures", rep.failures.size()},
            {"complete", rep.journal_complete},
            {"content_sha256", validation_checksum(result.samples)},
        };
        for (std::size_t i = 0; i < rep.failures.size() && i < 10; ++i) {
            const auto& f = rep.failures[i];
            err(ctx) << fmt::format("  {} [{}] {}: {}\n", domain.id, f.stage, f.unit, f.message);
        }
        if (rep.failures.size() > 10) {
            err(ctx) << fmt::format("  {} ... {} more failures\n", domain.id, rep.failures.size() - 10);
        }
        rows.push_back(fmt::format("{:<20} {:<15} {:>8} {:>12.1f} {:>8} {:>9} {:>8}/{}", domain.id,
                                   to_string(domain.synthesis_mode), result.samples.size(), mean_chars, rep.factors,
                                   rep.failures.size(), rep.resumed_units, rep.resumed_units + rep.processed_units));
        ++succeeded;
    }
    if (succeeded > 0) text::write_file_atomic(layout.validation_manifest(), manifest.dump(2) + "\n");

    out(ctx) << fmt::format("{:<20} {:<15} {:>8} {:>12} {:>8} {:>9} {:>10}\n", "domain", "mode", "samples",
                            "mean chars", "factors", "failures", "resumed");
    for (const auto& r : rows) out(ctx) << r << "\n";
    return succeeded > 0 ? 0 : 1;
}

namespace {

// model_id -> benchmark_id -> raw score
std::map<std::string, std::map<std::string, double>> read_benchmark_scores(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("benchmark scores file not found: " + path);
    const auto contents = text::read_file(path);
    const auto lines = text::split_lines(contents);
    std::map<std::string, std::map<std::string, double>> scores;
    std::vector<std::string> header;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (text::trim(lines[i]).empty()) continue;
        auto fields = text::split_csv_record(lines[i]);
        if (header.empty()) {
            header = fields;
            for (const char* need : {"model_id", "benchmark_id", "score"}) {
                if (std::find(header.begin(), header.end(), need) == header.end()) {
                    throw ParseError(path + ": header needs model_id,benchmark_id,score", std::string(lines[i]), i + 1);
                }
            }
            continue;
        }
        if (fields.size() != header.size()) {
            throw ParseError(path + ":" + std::to_string(i + 1) + ": wrong field count", std::string(lines[i]), i + 1);
        }
        std::map<std::string, std::string> row;
        for (std::size_t c = 0; c < header.size(); ++c) row[header[c]] = fields[c];
        try {
            scores[row["model_id"]][row["benchmark_id"]] = std::stod(row["score"]);
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(i + 1) + ": bad score", std::string(lines[i]), i + 1);
        }
    }
    return scores;
}

} // namespace

int cmd_score(Context& ctx, const ScoreOptions& options) {
    const auto& cfg = ctx.config;
    if (!cfg.scoring) throw ConfigError("scoring endpoint is not configured");
    auto scoring = *cfg.scoring;
    if (!options.model_id.empty()) scoring.model_id = options.model_id;
    if (scoring.model_id.empty()) throw ConfigError("no model id: pass --model or set scoring.model");
    const auto domains = select_domains(ctx, options.domain_ids);
    const auto layout = layout_of(ctx);
    OutputLock lock(layout.root);

    std::map<std::string, std::map<std::string, double>> bench_scores;
    if (!options.benchmark_scores.empty()) bench_scores = read_benchmark_scores(options.benchmark_scores);

    auto backend = ctx.scoring_factory(scoring);
    lossmeter::SampleLossCache cache(layout.loss_cache());
    std::vector<ModelObservation> table;
    if (fs::exists(layout.observations())) table = read_observation_table(layout.observations());

    std::size_t succeeded = 0;
    for (const auto& domain : domains) {
        const auto path = layout.validation_set(domain.id);
        if (!fs::exists(path)) {
            err(ctx) << fmt::format("domain {}: no validation set at {}\n", domain.id, path);
            continue;
        }
        const auto samples = synthesis::read_validation_set(path);
        if (samples.empty()) {
            err(ctx) << fmt::format("domain {}: validation set is empty\n", domain.id);
            continue;
        }
        const auto run = lossmeter::score_samples(*backend, scoring, scoring.model_id, samples, &cache);
        for (const auto& [id, msg] : run.failures) err(ctx) << fmt::format("  {} sample {}: {}\n", domain.id, id, msg);
        if (run.losses.empty()) {
            err(ctx) << fmt::format("domain {}: no sample could be scored\n", domain.id);
            continue;
        }
        const double loss = lossmeter::domain_loss(run.losses, cfg.aggregation);

        std::optional<double> capability;
        if (auto it = bench_scores.find(scoring.model_id); it != bench_scores.end()) {
            std::vector<double> normalized;
            for (const auto& b : domain.benchmarks) {
                if (auto s = it->second.find(b.id); s != it->second.end()) {
                    normalized.push_back(normalize_score(s->second, b.score_kind, b.id));
                } else {
                    err(ctx) << fmt::format("domain {}: no score for benchmark {} under model {}\n", domain.id, b.id,
                                            scoring.model_id);
                }
            }
            if (!normalized.empty()) capability = estimate_domain_capability(normalized);
        }
        // Keep a capability recorded earlier when this run brings none.
        if (!capability) {
            for (const auto& row : table) {
                if (row.model_id == scoring.model_id && row.domain_id == domain.id && !row.stage && !row.tokens_seen) {
                    capability = row.capability;
                }
            }
        }
        upsert_observation(table, make_observation(scoring.model_id, domain.id, loss, capability, domain.gamma));
        out(ctx) << fmt::format("{:<20} loss {:.6f}  scored {}  calls {}  cache hits {}  failures {}\n", domain.id,
                                loss, run.losses.size(), run.endpoint_calls, run.cache_hits, run.failures.size());
        ++succeeded;
    }
    if (succeeded > 0) write_observation_table(layout.observations(), table);
    return succeeded > 0 ? 0 : 1;
}

int cmd_fit(Context& ctx, const FitOptions& options) {
    const auto layout = layout_of(ctx);
    const auto path = options.observations.empty() ? layout.observations() : options.observations;
    if (!fs::exists(path)) throw ConfigError("observation table not found: " + path);
    const auto rows = read_observation_table(path);
    const auto input_sha = sha256_file(path);

    std::vector<std::string> ids = options.domain_ids;
    if (ids.empty()) {
        std::set<std::string> seen;
        for (const auto& r : rows) {
            if (seen.insert(r.domain_id).second) ids.push_back(r.domain_id);
        }
    }
    if (ids.empty()) throw ConfigError("observation table " + path + " has no rows");

    auto gamma_for = [&](const std::string& id) {
        if (auto it = options.gamma_overrides.find(id); it != options.gamma_overrides.end()) return it->second;
        for (const auto& d : ctx.config.domains) {
            if (d.id == id) return d.gamma;
        }
        throw ConfigError("no gamma for domain '" + id + "': configure the domain or pass --gamma " + id + "=<value>");
    };

    caplaw::SigmoidFitOptions fo;
    fo.p95_mode = ctx.config.p95_mode;
    fs::create_directories(layout.fits_dir());
    std::string summary = "domain_id,n_points,alpha,beta,gamma,mse,p95\n";
    std::vector<std::string> table;
    std::size_t succeeded = 0;
    for (const auto& id : ids) {
        const double gamma = gamma_for(id);
        if (gamma < 0 || gamma >= 1) throw ConfigError("gamma for domain '" + id + "' must lie in [0,1)");
        std::vector<ModelObservation> pts;
        for (const auto& r : rows) {
            if (r.domain_id == id && r.capability) pts.push_back(r);
        }
        caplaw::SigmoidFit fit;
        try {
            fit = caplaw::fit_sigmoid(pts, gamma, fo);
        } catch (const FitError& e) {
            err(ctx) << fmt::format("skipping domain {}: {}\n", id, e.what());
            continue;
        }
        fit.domain_id = id;
        auto j = fit_to_json(fit);
        j["inputs"] = json::array({{{"path", path}, {"sha256", input_sha}}});
        text::write_file_atomic(layout.fit(id), j.dump(2) + "\n");
        summary += fmt::format("{},{},{},{},{},{},{}\n", text::csv_escape(id), fit.n_points, num(fit.alpha),
                               num(fit.beta), num(fit.gamma), num(fit.mse), num(fit.p95));
        table.push_back(fmt::format("{:<20} {:>4} {:>12.5g} {:>12.5g} {:>6.3f} {:>12.3e} {:>12.3e}{}", id,
                                    fit.n_points, fit.alpha, fit.beta, fit.gamma, fit.mse, fit.p95,
                                    fit.degenerate_p95 ? " (degenerate p95)" : ""));

        if (options.svg) {
            PlotSeries s;
            s.label = id;
            double lo = pts.front().loss, hi = lo;
            for (const auto& p : pts) {
                s.points.emplace_back(p.loss, *p.capability);
                lo = std::min(lo, p.loss);
                hi = std::max(hi, p.loss);
            }
            const double pad = std::max((hi - lo) * 0.15, 0.05);
            lo = std::max(lo - pad, 1e-6);
            hi += pad;
            for (int i = 0; i <= 200; ++i) {
                const double L = lo + (hi - lo) * i / 200.0;
                s.curve.emplace_back(L, caplaw::predict_capability(L, fit));
            }
            text::write_file_atomic((fs::path(layout.fits_dir()) / (id + ".svg")).string(),
                                    render_svg(id + ": loss vs capability", "validation loss (nats/token)",
                                               "capability", {s}));
        }
        ++succeeded;
    }
    if (succeeded > 0) {
        text::write_file_atomic((fs::path(layout.fits_dir()) / "fit_summary.csv").string(), summary);
    }
    out(ctx) << fmt::format("{:<20} {:>4} {:>12} {:>12} {:>6} {:>12} {:>12}\n", "domain", "n", "alpha", "beta",
                            "gamma", "MSE", "P95");
    for (const auto& t : table) out(ctx) << t << "\n";
    return succeeded > 0 ? 0 : 1;
}

int cmd_predict(Context& ctx, const PredictOptions& options) {
    if (options.fit_path.empty()) throw ConfigError("a fit artifact is required");
    if (!fs::exists(options.fit_path)) throw ConfigError("fit artifact not found: " + options.fit_path);
    if (options.losses.empty() && options.loss_log.empty()) throw ConfigError("give loss values or a loss log");
    const auto fit = fit_from_json(read_json_file(options.fit_path));
    const auto layout = layout_of(ctx);
    fs::create_directories(layout.predictions_dir());
    const std::string stem = fit.domain_id.empty() ? "predictions" : fit.domain_id;

    if (!options.losses.empty()) {
        std::string csv = "loss,capability\n";
        out(ctx) << fmt::format("{:>14} {:>14}\n", "loss", "capability");
        for (double L : options.losses) {
            if (!(L > 0) || !std::isfinite(L)) throw ConfigError("loss values must be positive and finite");
            const double c = caplaw::predict_capability(L, fit);
            csv += num(L) + "," + num(c) + "\n";
            out(ctx) << fmt::format("{:>14.6f} {:>14.6f}\n", L, c);
        }
        text::write_file_atomic((fs::path(layout.predictions_dir()) / (stem + "_losses.csv")).string(), csv);
    }
    if (options.loss_log.empty()) return 0;

    const auto all = lossmeter::ingest_loss_log(options.loss_log);
    std::vector<const lossmeter::LossSeries*> picked;
    std::set<std::string> found;
    for (const auto& s : all) {
        found.insert(s.domain_id + "/" + s.metric);
        if (!fit.domain_id.empty() && s.domain_id != fit.domain_id) continue;
        if (!options.metric.empty() && s.metric != options.metric) continue;
        picked.push_back(&s);
    }
    if (picked.empty()) {
        std::string have;
        for (const auto& f : found) have += (have.empty() ? "" : ", ") + f;
        throw ConfigError(fmt::format("loss log has no series for domain '{}'{}; it holds: {}", fit.domain_id,
                                      options.metric.empty() ? "" : " metric '" + options.metric + "'", have));
    }

    std::string csv = "model_id,domain_id,metric,stage,tokens_seen,loss,capability\n";
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<lossmeter::LossCurvePoint>> curves;
    for (const auto* s : picked) {
        for (const auto& p : s->points) {
            csv += fmt::format("{},{},{},{},{},{},{}\n", text::csv_escape(p.model_id), text::csv_escape(p.domain_id),
                               text::csv_escape(p.metric), text::csv_escape(p.stage), num(p.tokens_seen), num(p.loss),
                               num(caplaw::predict_capability(p.loss, fit)));
            curves[{p.model_id, p.domain_id, p.metric}].push_back(p);
        }
    }
    text::write_file_atomic((fs::path(layout.predictions_dir()) / (stem + "_curve.csv")).string(), csv);
    out(ctx) << fmt::format("{} capability points written for {} series\n", std::count(csv.begin(), csv.end(), '\n') - 1,
                            picked.size());

    json reports = json::array();
    for (const auto& [key, points] : curves) {
        std::set<std::string> stages;
        for (const auto& p : points) stages.insert(p.stage);
        if (stages.size() < 2) continue;
        const auto& [model, domain, metric] = key;
        if (stages.size() > 2) {
            err(ctx) << fmt::format("{} {} {}: {} stages present, gap needs exactly two\n", model, domain, metric,
                                    stages.size());
            continue;
        }
        caplaw::StageGapReport g;
        try {
            g = caplaw::stage_gap(points);
        } catch (const Error& e) {
            err(ctx) << fmt::format("{} {} {}: {}\n", model, domain, metric, e.what());
            continue;
        }
        const double before_loss = g.before.fit.evaluate(g.transition_tokens);
        const double after_loss = g.after.fit.evaluate(g.transition_tokens);
        const double cap_gap =
            caplaw::predict_capability(after_loss, fit) - caplaw::predict_capability(before_loss, fit);
        reports.push_back({{"model_id", g.model_id},
                           {"domain_id", g.domain_id},
                           {"metric", g.metric},
                           {"before_stage", g.before.stage},
                           {"after_stage", g.after.stage},
                           {"transition_tokens", g.transition_tokens},
                           {"loss_before", before_loss},
                           {"loss_after", after_loss},
                           {"gap", g.gap},
                           {"gap_stderr", g.gap_stderr},
                           {"noise_bound", g.noise_bound},
                           {"significant", std::abs(g.gap) > g.noise_bound},
                           {"capability_gap", cap_gap}});
        out(ctx) << fmt::format("{} {} {}: {} -> {} at {:.4g} tokens, loss gap {:.6f} (noise bound {:.3g}), "
                                "capability gap {:+.6f}\n",
                                model, domain, metric, g.before.stage, g.after.stage, g.transition_tokens, g.gap,
                                g.noise_bound, cap_gap);
    }
    if (!reports.empty()) {
        text::write_file_atomic((fs::path(layout.predictions_dir()) / (stem + "_stage_gap.json")).string(),
                                reports.dump(2) + "\n");
    }
    return 0;
}

int cmd_scalefit(Context& ctx, const ScalefitOptions& options) {
    if (options.input.empty()) throw ConfigError("a compute-loss CSV is required");
    if (!fs::exists(options.input)) throw ConfigError("compute-loss CSV not found: " + options.input);
    const auto contents = text::read_file(options.input);
    const auto lines = text::split_lines(contents);

    std::vector<std::string> order;
    std::map<std::string, std::vector<caplaw::ComputeLossPoint>> groups;
    std::set<std::string> derived; // series with any 6ND compute
    std::vector<std::string> header;
    auto col = [&](const char* name) -> std::optional<std::size_t> {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    };
    std::optional<std::size_t> c_series, c_compute, c_params, c_tokens, c_loss;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (text::trim(lines[i]).empty()) continue;
        const auto fields = text::split_csv_record(lines[i]);
        if (header.empty()) {
            header = fields;
            c_series = col("series_id");
            c_compute = col("compute");
            c_params = col("n_params");
            c_tokens = col("tokens");
            c_loss = col("loss");
            if (!c_series || !c_loss || (!c_compute && !(c_params && c_tokens))) {
                throw ParseError(options.input + ": header needs series_id, loss and compute (or n_params,tokens)",
                                 std::string(lines[i]), i + 1);
            }
            continue;
        }
        if (fields.size() != header.size()) {
            throw ParseError(options.input + ":" + std::to_string(i + 1) + ": wrong field count", std::string(lines[i]),
                             i + 1);
        }
        caplaw::ComputeLossPoint p;
        const auto& id = fields[*c_series];
        try {
            if (c_compute && !text::trim(fields[*c_compute]).empty()) {
                p.compute = std::stod(fields[*c_compute]);
            } else if (c_params && c_tokens) {
                p.compute = caplaw::training_compute(std::stod(fields[*c_params]), std::stod(fields[*c_tokens]));
                derived.insert(id);
            } else {
                throw std::invalid_argument("no compute");
            }
            p.loss = std::stod(fields[*c_loss]);
        } catch (const std::logic_error&) {
            throw ParseError(options.input + ":" + std::to_string(i + 1) + ": bad number", std::string(lines[i]), i + 1);
        }
        if (!(p.compute > 0) || !std::isfinite(p.loss)) {
            throw ParseError(options.input + ":" + std::to_string(i + 1) + ": compute must be positive",
                             std::string(lines[i]), i + 1);
        }
        if (!groups.contains(id)) order.push_back(id);
        groups[id].push_back(p);
    }

    const auto layout = layout_of(ctx);
    fs::create_directories(layout.scalefit_dir());
    json fits = json::array();
    std::string summary = "series_id,n_points,intercept,slope,r_squared,residual_sd\n";
    std::vector<PlotSeries> plot;
    out(ctx) << fmt::format("{:<20} {:>4} {:>14} {:>14} {:>10}\n", "series", "n", "intercept", "slope", "r2");
    for (const auto& id : order) {
        const auto& pts = groups[id];
        if (pts.size() < 2) {
            err(ctx) << fmt::format("skipping series {}: needs at least 2 points, has {}\n", id, pts.size());
            continue;
        }
        caplaw::LogLinearFit f;
        try {
            f = caplaw::fit_loglinear(pts, id);
        } catch (const FitError& e) {
            err(ctx) << fmt::format("skipping series {}: {}\n", id, e.what());
            continue;
        }
        fits.push_back({{"series_id", id},
                        {"n_points", f.n_points},
                        {"intercept", f.intercept},
                        {"slope", f.slope},
                        {"r_squared", f.r_squared},
                        {"residual_sd", f.residual_sd},
                        {"compute_source", derived.contains(id) ? "6*n_params*tokens" : "compute column"}});
        summary += fmt::format("{},{},{},{},{},{}\n", text::csv_escape(id), f.n_points, num(f.intercept), num(f.slope),
                               num(f.r_squared), num(f.residual_sd));
        out(ctx) << fmt::format("{:<20} {:>4} {:>14.6g} {:>14.6g} {:>10.6f}\n", id, f.n_points, f.intercept, f.slope,
                                f.r_squared);
        PlotSeries s;
        s.label = id;
        double lo = pts.front().compute, hi = lo;
        for (const auto& p : pts) {
            s.points.emplace_back(p.compute, p.loss);
            lo = std::min(lo, p.compute);
            hi = std::max(hi, p.compute);
        }
        for (int i = 0; i <= 50; ++i) {
            const double c = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / 50.0);
            s.curve.emplace_back(c, f.evaluate(c));
        }
        plot.push_back(std::move(s));
    }
    if (fits.empty()) return 1;
    text::write_file_atomic((fs::path(layout.scalefit_dir()) / "fits.json").string(), fits.dump(2) + "\n");
    text::write_file_atomic((fs::path(layout.scalefit_dir()) / "summary.csv").string(), summary);
    if (options.svg) {
        text::write_file_atomic((fs::path(layout.scalefit_dir()) / "scalefit.svg").string(),
                                render_svg("loss vs training compute", "compute (FLOPs)", "loss (nats/token)", plot,
                                           true));
    }
    return 0;
}

int cmd_report(Context& ctx) {
    const auto layout = layout_of(ctx);
    json report = json::object();
    std::size_t sections = 0;

    if (fs::exists(layout.validation_manifest())) {
        const auto manifest = read_json_file(layout.validation_manifest());
        out(ctx) << "validation sets\n"
                 << fmt::format("  {:<20} {:<15} {:>8} {:>12} {:>9}\n", "domain", "mode", "samples", "mean chars",
                                "failures");
        const json domains = manifest.value("domains", json::object());
        for (const auto& [id, d] : domains.items()) {
            out(ctx) << fmt::format("  {:<20} {:<15} {:>8} {:>12.1f} {:>9}\n", id, d.value("mode", ""),
                                    d.value("samples", 0), d.value("mean_chars", 0.0), d.value("failures", 0));
        }
        report["validation"] = domains;
        ++sections;
    }
    if (fs::exists(layout.observations())) {
        const auto rows = read_observation_table(layout.observations());
        out(ctx) << "observations\n"
                 << fmt::format("  {:<24} {:<20} {:>10} {:>10}\n", "model", "domain", "loss", "capability");
        json obs = json::array();
        for (const auto& r : rows) {
            out(ctx) << fmt::format("  {:<24} {:<20} {:>10.5f} {:>10}\n", r.model_id, r.domain_id, r.loss,
                                    r.capability ? fmt::format("{:.4f}", *r.capability) : "-");
            json o = {{"model_id", r.model_id}, {"domain_id", r.domain_id}, {"loss", r.loss}};
            if (r.capability) o["capability"] = *r.capability;
            obs.push_back(o);
        }
        report["observations"] = obs;
        ++sections;
    }
    if (fs::exists(layout.fits_dir())) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(layout.fits_dir())) {
            if (e.path().extension() == ".json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (!files.empty()) {
            out(ctx) << "fits\n"
                     << fmt::format("  {:<20} {:>4} {:>12} {:>12} {:>12} {:>12}\n", "domain", "n", "alpha", "beta",
                                    "MSE", "P95");
            json fits = json::array();
            for (const auto& f : files) {
                const auto fit = fit_from_json(read_json_file(f.string()));
                out(ctx) << fmt::format("  {:<20} {:>4} {:>12.5g} {:>12.5g} {:>12.3e} {:>12.3e}\n", fit.domain_id,
                                        fit.n_points, fit.alpha, fit.beta, fit.mse, fit.p95);
                fits.push_back(fit_to_json(fit));
            }
            report["fits"] = fits;
            ++sections;
        }
    }
    if (sections == 0) {
        err(ctx) << fmt::format("nothing to report under {}\n", layout.root);
        return 1;
    }
    text::write_file_atomic((fs::path(layout.root) / "report.json").string(), report.dump(2) + "\n");
    return 0;
}

} // namespace capval::cli
