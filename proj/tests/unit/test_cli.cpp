#include "capval/caplaw.hpp"
#include "capval/cli/commands.hpp"
#include "capval/error.hpp"
#include "capval/observations.hpp"
#include "capval/text.hpp"
#include "mocks.hpp"
#include "toy.hpp"

#include <doctest.h>
#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace capval;
using namespace capval::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Harness {
    testing::ToyWorkspace ws;
    std::ostringstream out, err;
    std::shared_ptr<testing::MockLlm> llm = std::make_shared<testing::MockLlm>();
    std::shared_ptr<testing::MockScorer> scorer = std::make_shared<testing::MockScorer>();
    Context ctx;

    explicit Harness(const std::string& name)
        : ws(testing::make_toy_workspace(testing::fresh_temp_dir(name))),
          ctx(make_context(load_run_config(ws.config.string()), out, err)) {
        ctx.llm_factory = [this](const synthesis::LlmEndpointConfig&) { return llm; };
        ctx.scoring_factory = [this](const lossmeter::ScoringEndpointConfig&) { return scorer; };
        ctx.clock = [] { return std::string("2024-01-01T00:00:00Z"); };
        for (auto* c : {&ctx.config.llm, &ctx.config.judge, &ctx.config.generator}) {
            if (*c) (*c)->retry.initial_backoff = std::chrono::milliseconds(0);
        }
    }

    OutputLayout layout() const { return {ctx.config.output_dir}; }
    json manifest() const { return json::parse(text::read_file(layout().validation_manifest())); }
};

std::string write(const fs::path& path, const std::string& contents) {
    text::write_file_atomic(path.string(), contents);
    return path.string();
}

std::size_t count_of(const std::string& haystack, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
    return n;
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("config loading resolves paths and rejects bad input") {
    const auto ws = testing::make_toy_workspace(testing::fresh_temp_dir("cli-config"));
    const auto cfg = load_run_config(ws.config.string());
    CHECK(cfg.domains.size() == 3);
    CHECK(cfg.corpus.index_dir == (ws.root / "index").string());
    CHECK(cfg.output_dir == (ws.root / "out").string());
    CHECK(cfg.retrieval_k == 6);
    CHECK(cfg.seed == 7);
    REQUIRE(cfg.llm.has_value());
    CHECK(cfg.llm->max_in_flight == 2);

    CHECK_THROWS_AS(parse_run_config("{not json", ws.root.string()), ConfigError);
    CHECK_THROWS_AS(load_run_config((ws.root / "missing.json").string()), ConfigError);
    auto doc = json::parse(text::read_file(ws.config.string()));
    doc["domains"][0]["benchmarks"][0]["sample_path"] = "nowhere.jsonl";
    CHECK_THROWS_AS(parse_run_config(doc.dump(), ws.root.string()), ConfigError);
}

TEST_CASE("index refuses to overwrite without force") {
    Harness h("cli-index");
    CHECK(cmd_index(h.ctx) == 0);
    CHECK(fs::exists(fs::path(h.ctx.config.corpus.index_dir) / "manifest.json"));
    CHECK(h.out.str().find("passages") != std::string::npos);
    CHECK_THROWS_AS(cmd_index(h.ctx), ConfigError);
    h.ctx.force = true;
    CHECK(cmd_index(h.ctx) == 0);

    h.ctx.config.corpus.shards.push_back((h.ws.root / "absent.jsonl").string());
    try {
        cmd_index(h.ctx);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("absent.jsonl") != std::string::npos);
    }
}

TEST_CASE("synth writes validation sets and a manifest") {
    Harness h("cli-synth");
    CHECK_THROWS_AS(cmd_synth(h.ctx, {"science"}), ConfigError); // no index yet
    REQUIRE(cmd_index(h.ctx) == 0);
    CHECK(cmd_synth(h.ctx, {}) == 0);

    const auto m = h.manifest();
    REQUIRE(m["domains"].size() == 3);
    const auto& blank = m["domains"]["science_blank"];
    CHECK(blank["samples"] == 4);
    CHECK(blank["benchmark_samples"] == 4);
    CHECK(blank["mode"] == "blank_filling");
    const auto& full = m["domains"]["science"];
    CHECK(full["samples"].get<int>() > 0);
    CHECK(full["complete"] == true);
    CHECK(full["failures"] == 0);
    const auto& retr = m["domains"]["science_retrieval"];
    CHECK(retr["samples"] == 3); // capped by the toy config

    for (const char* id : {"science", "science_retrieval", "science_blank"}) {
        const auto set = synthesis::read_validation_set(h.layout().validation_set(id));
        CHECK(set.size() == m["domains"][id]["samples"].get<std::size_t>());
    }
    CHECK_THROWS_AS(cmd_synth(h.ctx, {"no_such_domain"}), ConfigError);
}

TEST_CASE("an interrupted synth resumes to the same manifest") {
    Harness clean("cli-resume-clean");
    REQUIRE(cmd_index(clean.ctx) == 0);
    REQUIRE(cmd_synth(clean.ctx, {"science"}) == 0);
    const long total = clean.llm->calls;

    Harness h("cli-resume");
    REQUIRE(cmd_index(h.ctx) == 0);
    h.llm->fail_after = total / 2;
    cmd_synth(h.ctx, {"science"});
    CHECK(h.manifest()["domains"]["science"]["complete"] == false);
    CHECK_FALSE(h.err.str().empty());

    h.llm = std::make_shared<testing::MockLlm>();
    REQUIRE(cmd_synth(h.ctx, {"science"}) == 0);
    CHECK(h.llm->calls < total);
    CHECK(h.manifest() == clean.manifest());
    CHECK(text::read_file(h.layout().validation_set("science")) ==
          text::read_file(clean.layout().validation_set("science")));

    // --force starts over and still lands on the same content.
    h.ctx.force = true;
    h.llm = std::make_shared<testing::MockLlm>();
    REQUIRE(cmd_synth(h.ctx, {"science"}) == 0);
    CHECK(h.llm->calls == total);
    CHECK(h.manifest() == clean.manifest());
}

TEST_CASE("score records observations and reuses the loss cache") {
    Harness h("cli-score");
    REQUIRE(cmd_synth(h.ctx, {"science_blank"}) == 0);
    const auto scores = write(h.ws.root / "scores.csv", "model_id,benchmark_id,score\n"
                                                        "mock-lm,bench_a,0.5\n"
                                                        "mock-lm,bench_b,70\n");
    CHECK(cmd_score(h.ctx, {"", {"science_blank"}, scores}) == 0);
    CHECK(h.scorer->calls == 4);
    auto rows = read_observation_table(h.layout().observations());
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].model_id == "mock-lm");
    CHECK(rows[0].loss > 0);
    REQUIRE(rows[0].capability.has_value());
    CHECK(*rows[0].capability == doctest::Approx(0.6));

    h.scorer = std::make_shared<testing::MockScorer>();
    CHECK(cmd_score(h.ctx, {"", {"science_blank"}, ""}) == 0);
    CHECK(h.scorer->calls == 0);
    rows = read_observation_table(h.layout().observations());
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].capability == doctest::Approx(0.6));

    CHECK(cmd_score(h.ctx, {"other-lm", {"science_blank"}, ""}) == 0);
    CHECK(read_observation_table(h.layout().observations()).size() == 2);

    // No validation set for the domain: nothing scored.
    CHECK(cmd_score(h.ctx, {"", {"science"}, ""}) == 1);
    h.ctx.config.scoring.reset();
    CHECK_THROWS_AS(cmd_score(h.ctx, {"", {"science_blank"}, ""}), ConfigError);
}

TEST_CASE("fit writes artifacts and skips domains without enough points") {
    Harness h("cli-fit");
    std::vector<ModelObservation> rows;
    for (int i = 0; i < 8; ++i) {
        const double L = 0.8 + 0.25 * i;
        rows.push_back({"m" + std::to_string(i), "science", L, caplaw::sigmoid_capability(L, 4.0, 1.6, 0.25), {}, {}, {}});
    }
    rows.push_back({"m0", "science_blank", 1.2, 0.5, {}, {}, {}});
    write_observation_table(h.layout().observations(), rows);

    CHECK(cmd_fit(h.ctx, {}) == 0);
    CHECK(h.err.str().find("skipping domain science_blank") != std::string::npos);
    const auto fit = fit_from_json(json::parse(text::read_file(h.layout().fit("science"))));
    CHECK(fit.alpha == doctest::Approx(4.0).epsilon(1e-4));
    CHECK(fit.beta == doctest::Approx(1.6).epsilon(1e-4));
    CHECK(fit.n_points == 8);
    const auto artifact = json::parse(text::read_file(h.layout().fit("science")));
    CHECK(artifact["inputs"][0]["sha256"].get<std::string>().size() == 64);
    const auto svg = text::read_file((fs::path(h.layout().fits_dir()) / "science.svg").string());
    CHECK(count_of(svg, "<circle") == 8);
    CHECK(count_of(svg, "<polyline") == 1);
    const auto summary = text::read_file((fs::path(h.layout().fits_dir()) / "fit_summary.csv").string());
    CHECK(summary.starts_with("domain_id,n_points,alpha,beta,gamma,mse,p95\nscience,8,"));

    CHECK_THROWS_AS(cmd_fit(h.ctx, {"", {"unknown"}, {}, true}), ConfigError);
    CHECK(cmd_fit(h.ctx, {"", {"unknown"}, {{"unknown", 0.1}}, false}) == 1);
}

TEST_CASE("predict maps losses and measures stage gaps") {
    Harness h("cli-predict");
    caplaw::SigmoidFit fit;
    fit.domain_id = "science";
    fit.alpha = 5;
    fit.beta = 1;
    fit.gamma = 0.25;
    fit.n_points = 5;
    const auto fit_path = write(h.ws.root / "fit.json", fit_to_json(fit).dump());

    CHECK(cmd_predict(h.ctx, {fit_path, {1.0, 3.0}, "", ""}) == 0);
    const auto csv = text::read_file((fs::path(h.layout().predictions_dir()) / "science_losses.csv").string());
    CHECK(csv.find("1,0.625\n") != std::string::npos);
    CHECK_THROWS_AS(cmd_predict(h.ctx, {fit_path, {-1.0}, "", ""}), ConfigError);

    std::string log = "model_id,domain_id,metric,stage,tokens_seen,loss\n";
    for (int i = 1; i <= 12; ++i) {
        const double t = 2.5e10 * i;
        const double loss = 3.2 - 0.05 * std::log(t) - (i > 6 ? 0.3 : 0.0);
        log += fmt::format("m,science,supervalid,{},{},{:.17g}\n", i > 6 ? "anneal" : "pretrain", t, loss);
    }
    log += "m,other,supervalid,pretrain,1e9,2.0\n";
    const auto log_path = write(h.ws.root / "curve.csv", log);
    CHECK(cmd_predict(h.ctx, {fit_path, {}, log_path, "supervalid"}) == 0);
    const auto gaps = json::parse(
        text::read_file((fs::path(h.layout().predictions_dir()) / "science_stage_gap.json").string()));
    REQUIRE(gaps.size() == 1);
    CHECK(std::abs(gaps[0]["gap"].get<double>() - 0.3) < 1e-6);
    CHECK(gaps[0]["significant"] == true);
    CHECK(gaps[0]["capability_gap"].get<double>() > 0);
    const auto curve = text::read_file((fs::path(h.layout().predictions_dir()) / "science_curve.csv").string());
    CHECK(count_of(curve, "\n") == 13);

    try {
        cmd_predict(h.ctx, {fit_path, {}, log_path, "iid"});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("science/supervalid") != std::string::npos);
    }
    CHECK_THROWS_AS(cmd_predict(h.ctx, {(h.ws.root / "nofit.json").string(), {1.0}, "", ""}), ConfigError);
}

TEST_CASE("scalefit fits each series and skips single points") {
    Harness h("cli-scalefit");
    std::string csv = "series_id,compute,loss\n";
    for (double c : {1e18, 1e19, 1e20, 1e21}) csv += fmt::format("exact,{},{:.17g}\n", c, 5.0 - 0.1 * std::log(c));
    csv += "lonely,1e20,2.0\n";
    const auto input = write(h.ws.root / "compute.csv", csv);
    CHECK(cmd_scalefit(h.ctx, {input, true}) == 0);
    CHECK(h.err.str().find("skipping series lonely") != std::string::npos);
    const auto fits = json::parse(text::read_file((fs::path(h.layout().scalefit_dir()) / "fits.json").string()));
    REQUIRE(fits.size() == 1);
    CHECK(fits[0]["r_squared"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fits[0]["slope"].get<double>() == doctest::Approx(-0.1).epsilon(1e-9));
    CHECK(fits[0]["compute_source"] == "compute column");
    const auto svg = text::read_file((fs::path(h.layout().scalefit_dir()) / "scalefit.svg").string());
    CHECK(count_of(svg, "<circle") == 4);

    const auto derived = write(h.ws.root / "nd.csv", "series_id,n_params,tokens,loss\n"
                                                     "s,1e8,1e10,3.1\ns,1e9,2e10,2.8\ns,1e10,2e11,2.4\n");
    CHECK(cmd_scalefit(h.ctx, {derived, false}) == 0);
    const auto f2 = json::parse(text::read_file((fs::path(h.layout().scalefit_dir()) / "fits.json").string()));
    CHECK(f2[0]["compute_source"] == "6*n_params*tokens");

    const auto single = write(h.ws.root / "single.csv", "series_id,compute,loss\na,1e20,2.0\n");
    CHECK(cmd_scalefit(h.ctx, {single, false}) == 1);
    CHECK_THROWS_AS(cmd_scalefit(h.ctx, {(h.ws.root / "none.csv").string(), false}), ConfigError);
    const auto bad = write(h.ws.root / "bad.csv", "series_id,loss\na,2.0\n");
    CHECK_THROWS_AS(cmd_scalefit(h.ctx, {bad, false}), ParseError);
}

TEST_CASE("report summarizes whatever exists") {
    Harness h("cli-report");
    REQUIRE(cmd_synth(h.ctx, {"science_blank"}) == 0);
    CHECK(cmd_report(h.ctx) == 0);
    CHECK(h.out.str().find("science_blank") != std::string::npos);
    CHECK(fs::exists(fs::path(h.layout().root) / "report.json"));
}

TEST_CASE("svg rendering") {
    PlotSeries s{"a", {{1, 2}, {2, 3}, {3, 5}}, {{1, 2}, {3, 5}}};
    const auto svg = render_svg("t & <x>", "x", "y", {s});
    CHECK(svg.starts_with("<svg"));
    CHECK(count_of(svg, "<circle") == 3);
    CHECK(svg.find("t &amp; &lt;x&gt;") != std::string::npos);
    PlotSeries neg{"n", {{-1, 2}}, {}};
    CHECK_THROWS_AS(render_svg("t", "x", "y", {neg}, true), PreconditionError);
}

} // TEST_SUITE
