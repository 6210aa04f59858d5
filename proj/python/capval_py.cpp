#include "capval/caplaw.hpp"
#include "capval/core.hpp"
#include "capval/error.hpp"
#include "capval/lossmeter.hpp"
#include "capval/retrieval.hpp"
#include "capval/synthesis/parsers.hpp"
#include "capval/synthesis/pipeline.hpp"
#include "capval/synthesis/prompts.hpp"

#include <json.hpp>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace capval;
using nlohmann::json;

namespace {

caplaw::P95Mode p95_mode_from(const std::string& name) {
    if (name == "population_sd") return caplaw::P95Mode::population_sd;
    if (name == "mean_abs") return caplaw::P95Mode::mean_abs;
    throw ConfigError("p95_mode must be population_sd or mean_abs, got '" + name + "'");
}

std::string to_string(caplaw::P95Mode mode) {
    return mode == caplaw::P95Mode::mean_abs ? "mean_abs" : "population_sd";
}

// Completion backend that calls back into Python. The pipeline runs with the
// GIL released, so each call takes it for the duration of the callable.
class PyCompletionBackend final : public synthesis::CompletionBackend {
public:
    explicit PyCompletionBackend(py::function fn) : fn_(std::move(fn)) {}
    ~PyCompletionBackend() override {
        py::gil_scoped_acquire gil;
        fn_ = py::function();
    }

    std::string complete(const std::string& prompt) override {
        py::gil_scoped_acquire gil;
        try {
            return fn_(prompt).cast<std::string>();
        } catch (py::error_already_set& e) {
            throw EndpointError(std::string("python backend raised: ") + e.what());
        }
    }

private:
    py::function fn_;
};

std::vector<caplaw::CurvePoint> curve_points(const std::vector<double>& losses, const std::vector<double>& caps,
                                             const std::vector<std::string>& model_ids) {
    if (losses.size() != caps.size()) throw PreconditionError("losses and capabilities differ in length");
    if (!model_ids.empty() && model_ids.size() != losses.size())
        throw PreconditionError("model_ids and losses differ in length");
    std::vector<caplaw::CurvePoint> pts(losses.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        pts[i].model_id = model_ids.empty() ? "m" + std::to_string(i) : model_ids[i];
        pts[i].loss = losses[i];
        pts[i].capability = caps[i];
    }
    return pts;
}

py::object json_to_py(const json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

} // namespace

PYBIND11_MODULE(_capval, m) {
    m.doc() = "capability-aligned validation: loss measurement and scaling-law fits";

    auto base = py::register_exception<Error>(m, "CapvalError");
    py::register_exception<PreconditionError>(m, "PreconditionError", base);
    py::register_exception<RangeError>(m, "RangeError", base);
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<IoError>(m, "IoError", base);
    py::register_exception<ConsistencyError>(m, "ConsistencyError", base);
    py::register_exception<OrderingError>(m, "OrderingError", base);
    auto endpoint = py::register_exception<EndpointError>(m, "EndpointError", base);
    py::register_exception<TransientEndpointError>(m, "TransientEndpointError", endpoint);
    auto parse = py::register_exception<ParseError>(m, "ParseError", base);
    py::register_exception<EmptyExpansionError>(m, "EmptyExpansionError", parse);
    auto fit = py::register_exception<FitError>(m, "FitError", base);
    py::register_exception<InsufficientDataError>(m, "InsufficientDataError", fit);

    // caplaw
    m.def("sigmoid_capability", &caplaw::sigmoid_capability, py::arg("loss"), py::arg("alpha"), py::arg("beta"),
          py::arg("gamma"));
    m.def("sigmoid_slope", &caplaw::sigmoid_slope, py::arg("loss"), py::arg("alpha"), py::arg("beta"),
          py::arg("gamma"));

    py::class_<caplaw::SigmoidFit>(m, "SigmoidFit")
        .def_readonly("domain_id", &caplaw::SigmoidFit::domain_id)
        .def_readonly("alpha", &caplaw::SigmoidFit::alpha)
        .def_readonly("beta", &caplaw::SigmoidFit::beta)
        .def_readonly("gamma", &caplaw::SigmoidFit::gamma)
        .def_readonly("mse", &caplaw::SigmoidFit::mse)
        .def_readonly("p95", &caplaw::SigmoidFit::p95)
        .def_readonly("degenerate_p95", &caplaw::SigmoidFit::degenerate_p95)
        .def_readonly("residuals", &caplaw::SigmoidFit::residuals)
        .def_readonly("n_points", &caplaw::SigmoidFit::n_points)
        .def_readonly("converged_starts", &caplaw::SigmoidFit::converged_starts)
        .def_property_readonly("p95_mode", [](const caplaw::SigmoidFit& f) { return to_string(f.p95_mode); })
        .def("predict", [](const caplaw::SigmoidFit& f, double loss) { return caplaw::predict_capability(loss, f); },
             py::arg("loss"))
        .def("__repr__", [](const caplaw::SigmoidFit& f) {
            return "SigmoidFit(alpha=" + std::to_string(f.alpha) + ", beta=" + std::to_string(f.beta) +
                   ", gamma=" + std::to_string(f.gamma) + ", mse=" + std::to_string(f.mse) + ")";
        });

    m.def(
        "fit_sigmoid",
        [](const std::vector<double>& losses, const std::vector<double>& capabilities, double gamma,
           const std::string& domain_id, const std::vector<std::string>& model_ids, const std::string& p95_mode) {
            const auto pts = curve_points(losses, capabilities, model_ids);
            caplaw::SigmoidFitOptions opts;
            opts.p95_mode = p95_mode_from(p95_mode);
            py::gil_scoped_release release;
            return caplaw::fit_sigmoid(pts, gamma, domain_id, opts);
        },
        py::arg("losses"), py::arg("capabilities"), py::arg("gamma"), py::arg("domain_id") = "",
        py::arg("model_ids") = std::vector<std::string>{}, py::arg("p95_mode") = "population_sd");

    m.def(
        "sigmoid_objective",
        [](const std::vector<double>& losses, const std::vector<double>& capabilities, double alpha, double beta,
           double gamma) {
            const auto pts = curve_points(losses, capabilities, {});
            const auto v = caplaw::sigmoid_objective(pts, alpha, beta, gamma);
            return py::make_tuple(v.mse, v.d_alpha, v.d_beta);
        },
        py::arg("losses"), py::arg("capabilities"), py::arg("alpha"), py::arg("beta"), py::arg("gamma"));

    m.def(
        "fit_metrics",
        [](const std::vector<double>& residuals, const std::string& p95_mode) {
            const auto fm = caplaw::fit_metrics(residuals, p95_mode_from(p95_mode));
            py::dict d;
            d["mse"] = fm.mse;
            d["p95"] = fm.p95;
            d["degenerate"] = fm.degenerate;
            return d;
        },
        py::arg("residuals"), py::arg("p95_mode") = "population_sd");

    py::class_<caplaw::LogLinearFit>(m, "LogLinearFit")
        .def_readonly("series_id", &caplaw::LogLinearFit::series_id)
        .def_readonly("intercept", &caplaw::LogLinearFit::intercept)
        .def_readonly("slope", &caplaw::LogLinearFit::slope)
        .def_readonly("r_squared", &caplaw::LogLinearFit::r_squared)
        .def_readonly("n_points", &caplaw::LogLinearFit::n_points)
        .def_readonly("residuals", &caplaw::LogLinearFit::residuals)
        .def_readonly("residual_sd", &caplaw::LogLinearFit::residual_sd)
        .def("evaluate", &caplaw::LogLinearFit::evaluate, py::arg("compute"))
        .def("prediction_stderr", &caplaw::LogLinearFit::prediction_stderr, py::arg("compute"));

    m.def(
        "fit_loglinear",
        [](const std::vector<double>& compute, const std::vector<double>& loss, const std::string& series_id) {
            if (compute.size() != loss.size()) throw PreconditionError("compute and loss differ in length");
            std::vector<caplaw::ComputeLossPoint> pts(compute.size());
            for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {compute[i], loss[i]};
            return caplaw::fit_loglinear(pts, series_id);
        },
        py::arg("compute"), py::arg("loss"), py::arg("series_id") = "");
    m.def("training_compute", &caplaw::training_compute, py::arg("parameters"), py::arg("tokens"));

    m.def(
        "stage_gap",
        [](const std::vector<py::dict>& rows) {
            std::vector<lossmeter::LossCurvePoint> curve;
            curve.reserve(rows.size());
            for (const auto& r : rows) {
                lossmeter::LossCurvePoint p;
                p.model_id = r.contains("model_id") ? r["model_id"].cast<std::string>() : "model";
                p.domain_id = r.contains("domain_id") ? r["domain_id"].cast<std::string>() : "domain";
                p.metric = r.contains("metric") ? r["metric"].cast<std::string>() : "supervalid";
                p.stage = r["stage"].cast<std::string>();
                p.tokens_seen = r["tokens_seen"].cast<double>();
                p.loss = r["loss"].cast<double>();
                p.source_row = curve.size() + 1;
                curve.push_back(std::move(p));
            }
            const auto g = caplaw::stage_gap(curve);
            py::dict d;
            d["model_id"] = g.model_id;
            d["domain_id"] = g.domain_id;
            d["metric"] = g.metric;
            d["before_stage"] = g.before.stage;
            d["after_stage"] = g.after.stage;
            d["before_slope"] = g.before.fit.slope;
            d["after_slope"] = g.after.fit.slope;
            d["transition_tokens"] = g.transition_tokens;
            d["gap"] = g.gap;
            d["gap_stderr"] = g.gap_stderr;
            d["noise_bound"] = g.noise_bound;
            return d;
        },
        py::arg("points"));

    // lossmeter
    py::class_<lossmeter::SampleLoss>(m, "SampleLoss")
        .def_readonly("sample_id", &lossmeter::SampleLoss::sample_id)
        .def_readonly("model_id", &lossmeter::SampleLoss::model_id)
        .def_readonly("domain_id", &lossmeter::SampleLoss::domain_id)
        .def_readonly("token_count", &lossmeter::SampleLoss::token_count)
        .def_readonly("mean_ce", &lossmeter::SampleLoss::mean_ce)
        .def_readonly("sum_ce", &lossmeter::SampleLoss::sum_ce)
        .def_readonly("truncated", &lossmeter::SampleLoss::truncated);

    m.def(
        "sample_loss_from_logprobs",
        [](const std::string& sample_id, const std::string& model_id, const std::string& domain_id,
           const std::vector<double>& logprobs, bool truncated) {
            return lossmeter::sample_loss_from_logprobs(sample_id, model_id, domain_id, logprobs, truncated);
        },
        py::arg("sample_id"), py::arg("model_id"), py::arg("domain_id"), py::arg("token_logprobs"),
        py::arg("truncated") = false);
    m.def(
        "domain_loss",
        [](const std::vector<lossmeter::SampleLoss>& losses, const std::string& aggregation) {
            return lossmeter::domain_loss(losses, lossmeter::parse_aggregation(aggregation));
        },
        py::arg("losses"), py::arg("aggregation") = "macro");

    // retrieval
    m.def("tokenize", [](const std::string& text) { return retrieval::tokenize(text); }, py::arg("text"));

    py::class_<retrieval::Index>(m, "Index")
        .def_static(
            "build",
            [](const std::vector<std::string>& shards, std::size_t target_chars, std::size_t min_chars,
               std::size_t max_chars) {
                retrieval::IndexConfig cfg;
                cfg.chunking = {target_chars, min_chars, max_chars};
                py::gil_scoped_release release;
                return retrieval::Index::build(shards, cfg);
            },
            py::arg("shards"), py::arg("target_chars") = 1024, py::arg("min_chars") = 200,
            py::arg("max_chars") = 2000)
        .def_static("load", &retrieval::Index::load, py::arg("directory"))
        .def("save", &retrieval::Index::save, py::arg("directory"))
        .def_property_readonly("passage_count", [](const retrieval::Index& ix) { return ix.stats().passages; })
        .def_property_readonly("document_count", [](const retrieval::Index& ix) { return ix.stats().documents; })
        .def(
            "retrieve",
            [](const retrieval::Index& ix, const std::string& query, std::size_t k) {
                const auto ev = ix.retrieve(query, k);
                py::list out;
                for (const auto& h : ev.hits) {
                    py::dict d;
                    d["passage_id"] = h.passage.passage_id;
                    d["document_id"] = h.passage.document_id;
                    d["shard"] = h.passage.shard;
                    d["text"] = h.passage.text;
                    d["score"] = h.score;
                    out.append(d);
                }
                return out;
            },
            py::arg("query"), py::arg("k") = 8);

    // synthesis parsers
    m.def("parse_extraction_output", [](const std::string& raw) { return synthesis::parse_extraction_output(raw); },
          py::arg("raw"));
    m.def(
        "parse_filter_verdict",
        [](const std::string& raw) { return synthesis::parse_filter_verdict(raw) == synthesis::Verdict::yes; },
        py::arg("raw"));
    m.def(
        "parse_expansion_output",
        [](const std::string& raw, bool require_questions) {
            const auto e = synthesis::parse_expansion_output(raw, require_questions);
            py::list questions;
            for (const auto& q : e.questions) {
                py::dict d;
                d["text"] = q.text;
                d["options"] = q.options;
                d["answer"] = q.answer;
                d["analysis"] = q.analysis ? py::cast(*q.analysis) : py::none();
                questions.append(d);
            }
            py::dict d;
            d["concepts"] = e.concepts;
            d["expansions"] = e.expansions;
            d["questions"] = questions;
            d["dropped_questions"] = e.dropped_questions;
            return d;
        },
        py::arg("raw"), py::arg("require_questions") = true);
    m.def(
        "blank_fill",
        [](const std::string& text, const std::string& answer) {
            BenchmarkSample s;
            s.id = "sample";
            s.text = text;
            s.answer = answer;
            return synthesis::blank_fill(s);
        },
        py::arg("text"), py::arg("answer"));
    m.def("default_prompt_dir", &synthesis::default_prompt_dir);

    m.def(
        "synthesize_json",
        [](const std::string& domains_json, const std::string& domain_id, py::function llm,
           const std::string& prompt_dir, const retrieval::Index* index, const std::string& base_dir,
           std::size_t retrieval_k, std::uint64_t seed) {
            const auto domains = parse_domain_specs(domains_json, base_dir);
            const auto& domain = find_domain(domains, domain_id);
            const auto prompts = synthesis::PromptSet::load(prompt_dir);

            synthesis::LlmEndpointConfig ep;
            ep.model_id = "python";
            ep.retry.initial_backoff = std::chrono::milliseconds(0);
            const synthesis::LlmClient client(std::make_shared<PyCompletionBackend>(std::move(llm)), ep);
            synthesis::Endpoints endpoints{client, client, client};

            synthesis::SynthesisConfig cfg;
            cfg.retrieval_k = retrieval_k;
            cfg.seed = seed;

            std::optional<synthesis::SynthesisResult> result;
            {
                py::gil_scoped_release release;
                result = synthesis::synthesize_domain(domain, index, endpoints, prompts, cfg);
            }
            json out;
            out["samples"] = result->samples;
            out["factors"] = json::array();
            for (const auto& f : result->factors) {
                out["factors"].push_back(
                    {{"id", f.id}, {"text", f.text}, {"source_sample_id", f.source_sample_id}, {"domain_id", f.domain_id}});
            }
            const auto& r = result->report;
            out["report"] = {{"benchmark_samples", r.benchmark_samples},
                             {"factors", r.factors},
                             {"passages_judged", r.passages_judged},
                             {"passages_kept", r.passages_kept},
                             {"samples_emitted", r.samples_emitted},
                             {"failures", r.failures.size()}};
            return json_to_py(out);
        },
        py::arg("domains_json"), py::arg("domain_id"), py::arg("llm"), py::arg("prompt_dir"),
        py::arg("index") = nullptr, py::arg("base_dir") = ".", py::arg("retrieval_k") = 8, py::arg("seed") = 0);
}
