#include "capval/caplaw.hpp"
#include "capval/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace capval::caplaw {

StageGapReport stage_gap(std::span<const lossmeter::LossCurvePoint> curve) {
    if (curve.empty()) throw PreconditionError("stage gap needs a non-empty curve");
    StageGapReport report;
    report.model_id = curve.front().model_id;
    report.domain_id = curve.front().domain_id;
    report.metric = curve.front().metric;

    std::map<std::string, std::vector<const lossmeter::LossCurvePoint*>> by_stage;
    for (const auto& p : curve) {
        if (p.model_id != report.model_id || p.domain_id != report.domain_id || p.metric != report.metric) {
            throw ConsistencyError("stage gap curve mixes series (" + report.model_id + "/" + report.domain_id + "/" +
                                   report.metric + " vs " + p.model_id + "/" + p.domain_id + "/" + p.metric + ")");
        }
        if (!(p.tokens_seen > 0.0)) throw PreconditionError("stage gap needs positive tokens_seen");
        by_stage[p.stage].push_back(&p);
    }
    if (by_stage.size() != 2) {
        throw PreconditionError("stage gap needs exactly two stages, found " + std::to_string(by_stage.size()));
    }

    std::vector<StageTrend> trends;
    for (auto& [stage, pts] : by_stage) {
        if (pts.size() < 3) {
            throw InsufficientDataError("stage '" + stage + "' has " + std::to_string(pts.size()) + " points; need 3");
        }
        std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->tokens_seen < b->tokens_seen; });
        std::vector<ComputeLossPoint> xy;
        for (const auto* p : pts) xy.push_back({p->tokens_seen, p->loss});
        StageTrend t;
        t.stage = stage;
        t.first_tokens = pts.front()->tokens_seen;
        t.last_tokens = pts.back()->tokens_seen;
        t.fit = fit_loglinear(xy, stage);
        trends.push_back(std::move(t));
    }
    std::sort(trends.begin(), trends.end(), [](const auto& a, const auto& b) { return a.first_tokens < b.first_tokens; });
    report.before = std::move(trends[0]);
    report.after = std::move(trends[1]);
    if (!(report.before.last_tokens < report.after.first_tokens)) {
        throw OrderingError("stages '" + report.before.stage + "' and '" + report.after.stage + "' overlap in tokens_seen", 0);
    }

    report.transition_tokens =
        std::exp(0.5 * (std::log(report.before.last_tokens) + std::log(report.after.first_tokens)));
    const double left = report.before.fit.evaluate(report.transition_tokens);
    const double right = report.after.fit.evaluate(report.transition_tokens);
    report.gap = left - right;
    const double se_left = report.before.fit.prediction_stderr(report.transition_tokens);
    const double se_right = report.after.fit.prediction_stderr(report.transition_tokens);
    report.gap_stderr = std::sqrt(se_left * se_left + se_right * se_right);
    report.noise_bound = 3.0 * report.gap_stderr + 1e-9 * std::max(1.0, std::abs(left));
    return report;
}

} // namespace capval::caplaw
