#include "capval/caplaw.hpp"
#include "capval/error.hpp"
#include "capval/optim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace capval::caplaw {

namespace {

double clamped_exponent(double loss, double alpha, double beta, bool* clamped = nullptr) {
    const double z = alpha * (loss - beta);
    const double c = std::clamp(z, -kExponentLimit, kExponentLimit);
    if (clamped) *clamped = (c != z) || std::isnan(z);
    return std::isnan(z) ? 0.0 : c;
}

// 1 / (1 + exp(z)) without overflow.
double logistic_tail(double z) {
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(z));
}

// s * (1 - s) for s = logistic_tail(z), computed without cancellation.
double logistic_curvature(double z) {
    const double t = std::exp(-std::abs(z));
    return t / ((1.0 + t) * (1.0 + t));
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

void check_gamma(double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw PreconditionError("gamma must lie in [0,1)");
}

} // namespace

double sigmoid_capability(double loss, double alpha, double beta, double gamma) {
    const double s = logistic_tail(clamped_exponent(loss, alpha, beta));
    return std::clamp(gamma + (1.0 - gamma) * s, gamma, 1.0);
}

double sigmoid_slope(double loss, double alpha, double beta, double gamma) {
    return -(1.0 - gamma) * alpha * logistic_curvature(clamped_exponent(loss, alpha, beta));
}

ObjectiveValue sigmoid_objective(std::span<const CurvePoint> points, double alpha, double beta, double gamma) {
    ObjectiveValue out;
    if (points.empty()) return out;
    double sum_sq = 0.0;
    double ga = 0.0;
    double gb = 0.0;
    for (const auto& p : points) {
        bool clamped = false;
        const double z = clamped_exponent(p.loss, alpha, beta, &clamped);
        const double r = p.capability - (gamma + (1.0 - gamma) * logistic_tail(z));
        sum_sq += r * r;
        if (!clamped) {
            const double w = r * logistic_curvature(z);
            ga += w * (p.loss - beta);
            gb -= w * alpha;
        }
    }
    const double n = static_cast<double>(points.size());
    out.mse = sum_sq / n;
    out.d_alpha = 2.0 * (1.0 - gamma) * ga / n;
    out.d_beta = 2.0 * (1.0 - gamma) * gb / n;
    return out;
}

FitMetrics fit_metrics(std::span<const double> residuals, P95Mode mode) {
    if (residuals.empty()) throw PreconditionError("fit metrics need at least one residual");
    const double n = static_cast<double>(residuals.size());
    double sum = 0.0;
    double sum_sq = 0.0;
    double sum_abs = 0.0;
    for (double r : residuals) {
        sum += r;
        sum_sq += r * r;
        sum_abs += std::abs(r);
    }
    FitMetrics m;
    m.mse = sum_sq / n;
    m.degenerate = residuals.size() < 2;
    if (mode == P95Mode::mean_abs) {
        m.p95 = m.degenerate ? 0.0 : 1.96 * sum_abs / n;
        return m;
    }
    const double mean = sum / n;
    double var = 0.0;
    for (double r : residuals) var += (r - mean) * (r - mean);
    m.p95 = 1.96 * std::sqrt(var / n);
    return m;
}

std::vector<std::pair<double, double>> sigmoid_start_points(std::span<const CurvePoint> points,
                                                            const SigmoidFitOptions& options) {
    std::vector<double> losses;
    for (const auto& p : points) losses.push_back(p.loss);
    std::sort(losses.begin(), losses.end());
    const double beta_hi = options.beta_upper_factor * losses.back();
    std::vector<std::pair<double, double>> starts;
    for (double alpha : {1.0, 10.0}) {
        for (double q : {0.2, 0.4, 0.6, 0.8}) {
            starts.emplace_back(std::clamp(alpha, options.alpha_min, options.alpha_max),
                                std::clamp(quantile_sorted(losses, q), 0.0, beta_hi));
        }
    }
    return starts;
}

SigmoidFit fit_sigmoid(std::span<const CurvePoint> points, double gamma, std::string domain_id,
                       const SigmoidFitOptions& options) {
    check_gamma(gamma);
    if (points.size() < 3) {
        throw InsufficientDataError("sigmoid fit for '" + domain_id + "' needs at least 3 points, got " +
                                    std::to_string(points.size()));
    }
    double max_loss = -std::numeric_limits<double>::infinity();
    for (const auto& p : points) {
        if (!std::isfinite(p.loss) || !std::isfinite(p.capability)) {
            throw PreconditionError("sigmoid fit input for '" + domain_id + "' has a non-finite value");
        }
        max_loss = std::max(max_loss, p.loss);
    }
    if (!(max_loss > 0.0)) throw PreconditionError("sigmoid fit needs a positive maximum loss");

    const std::array<double, 2> lower{options.alpha_min, 0.0};
    const std::array<double, 2> upper{options.alpha_max, options.beta_upper_factor * max_loss};
    const optim::Objective objective = [&](std::span<const double> x, std::span<double> grad) {
        const auto v = sigmoid_objective(points, x[0], x[1], gamma);
        grad[0] = v.d_alpha;
        grad[1] = v.d_beta;
        return v.mse;
    };

    SigmoidFit fit;
    fit.domain_id = std::move(domain_id);
    fit.gamma = gamma;
    fit.n_points = points.size();
    fit.p95_mode = options.p95_mode;
    double best = std::numeric_limits<double>::infinity();
    std::string diagnostics;
    for (const auto& [a0, b0] : sigmoid_start_points(points, options)) {
        const auto r = optim::minimize_bounded(objective, {a0, b0}, lower, upper);
        if (!r.converged) {
            diagnostics += " start(" + std::to_string(a0) + "," + std::to_string(b0) + "): " + r.message + ";";
            continue;
        }
        ++fit.converged_starts;
        if (r.value < best) {
            best = r.value;
            fit.alpha = r.x[0];
            fit.beta = r.x[1];
        }
    }
    if (fit.converged_starts == 0) {
        throw FitError("sigmoid fit for '" + fit.domain_id + "' did not converge from any start:" + diagnostics);
    }

    std::vector<double> residuals;
    for (const auto& p : points) {
        const double r = p.capability - sigmoid_capability(p.loss, fit.alpha, fit.beta, gamma);
        residuals.push_back(r);
        fit.residuals.emplace_back(p.model_id, r);
    }
    const auto m = fit_metrics(residuals, options.p95_mode);
    fit.mse = m.mse;
    fit.p95 = m.p95;
    fit.degenerate_p95 = m.degenerate;
    return fit;
}

SigmoidFit fit_sigmoid(std::span<const ModelObservation> observations, double gamma, const SigmoidFitOptions& options) {
    std::vector<CurvePoint> points;
    std::string domain;
    for (const auto& o : observations) {
        if (!o.capability) {
            throw PreconditionError("observation " + o.model_id + "/" + o.domain_id + " has no capability value");
        }
        if (domain.empty()) domain = o.domain_id;
        if (o.domain_id != domain) throw ConsistencyError("sigmoid fit mixes domains '" + domain + "' and '" + o.domain_id + "'");
        points.push_back({o.model_id, o.loss, *o.capability});
    }
    return fit_sigmoid(points, gamma, domain, options);
}

double predict_capability(double loss, const SigmoidFit& fit) {
    return sigmoid_capability(loss, fit.alpha, fit.beta, fit.gamma);
}

} // namespace capval::caplaw
