#include "capval/caplaw.hpp"
#include "capval/error.hpp"

#include <algorithm>
#include <cmath>

namespace capval::caplaw {

double training_compute(double parameters, double tokens) {
    if (!(parameters > 0.0) || !(tokens > 0.0)) throw PreconditionError("compute needs positive parameters and tokens");
    return 6.0 * parameters * tokens;
}

double LogLinearFit::evaluate(double compute) const { return intercept + slope * std::log(compute); }

double LogLinearFit::prediction_stderr(double compute) const {
    if (n_points == 0 || sxx <= 0.0) return 0.0;
    const double dx = std::log(compute) - mean_log_compute;
    return residual_sd * std::sqrt(1.0 / static_cast<double>(n_points) + dx * dx / sxx);
}

LogLinearFit fit_loglinear(std::span<const ComputeLossPoint> points, std::string series_id) {
    if (points.size() < 2) {
        throw FitError("log-linear fit for '" + series_id + "' needs at least 2 points, got " + std::to_string(points.size()));
    }
    const double n = static_cast<double>(points.size());
    double mx = 0.0;
    double my = 0.0;
    for (const auto& p : points) {
        if (!(p.compute > 0.0) || !std::isfinite(p.compute) || !std::isfinite(p.loss)) {
            throw PreconditionError("log-linear fit needs positive finite compute and finite loss");
        }
        mx += std::log(p.compute);
        my += p.loss;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    for (const auto& p : points) {
        const double dx = std::log(p.compute) - mx;
        const double dy = p.loss - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (!(sxx > 0.0)) throw FitError("log-linear fit for '" + series_id + "' has zero variance in ln(compute)");

    LogLinearFit fit;
    fit.series_id = std::move(series_id);
    fit.n_points = points.size();
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.mean_log_compute = mx;
    fit.sxx = sxx;
    double ss_res = 0.0;
    for (const auto& p : points) {
        // Centered form keeps the residuals summing to zero to rounding.
        const double r = (p.loss - my) - fit.slope * (std::log(p.compute) - mx);
        fit.residuals.push_back(r);
        ss_res += r * r;
    }
    fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
    fit.residual_sd = points.size() > 2 ? std::sqrt(ss_res / (n - 2.0)) : 0.0;
    return fit;
}

} // namespace capval::caplaw
