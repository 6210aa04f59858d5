#pragma once

#include "capval/core.hpp"
#include "capval/lossmeter.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace capval::caplaw {

// Exponents alpha*(L-beta) are clamped to this magnitude before exp().
inline constexpr double kExponentLimit = 700.0;

// gamma + (1-gamma) / (1 + exp(alpha*(L-beta))), guaranteed inside [gamma, 1].
double sigmoid_capability(double loss, double alpha, double beta, double gamma);

// d/dL of sigmoid_capability. Strictly negative for alpha > 0 and gamma < 1
// while the exponent is inside the clamp.
double sigmoid_slope(double loss, double alpha, double beta, double gamma);

struct CurvePoint {
    std::string model_id;
    double loss = 0.0;
    double capability = 0.0;
};

struct ObjectiveValue {
    double mse = 0.0;
    double d_alpha = 0.0;
    double d_beta = 0.0;
};

// Mean squared error between observed capability and the sigmoid, with its
// analytic gradient in (alpha, beta).
ObjectiveValue sigmoid_objective(std::span<const CurvePoint> points, double alpha, double beta, double gamma);

enum class P95Mode {
    population_sd, // 1.96 x population standard deviation of residuals
    mean_abs,      // 1.96 x mean absolute residual
};

struct FitMetrics {
    double mse = 0.0;
    double p95 = 0.0;
    bool degenerate = false; // fewer than two residuals
};

FitMetrics fit_metrics(std::span<const double> residuals, P95Mode mode = P95Mode::population_sd);

struct SigmoidFitOptions {
    double alpha_min = 1e-3;
    double alpha_max = 100.0;
    double beta_upper_factor = 2.0; // beta in [0, factor * max observed loss]
    P95Mode p95_mode = P95Mode::population_sd;
};

struct SigmoidFit {
    std::string domain_id;
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    double mse = 0.0;
    double p95 = 0.0;
    bool degenerate_p95 = false;
    P95Mode p95_mode = P95Mode::population_sd;
    std::vector<std::pair<std::string, double>> residuals; // observed - predicted
    std::size_t n_points = 0;
    std::size_t converged_starts = 0;
};

// Multi-start bounded quasi-Newton fit of (alpha, beta) with gamma held fixed.
// Needs at least 3 points; throws InsufficientDataError otherwise and FitError
// when no start converges.
SigmoidFit fit_sigmoid(std::span<const CurvePoint> points, double gamma, std::string domain_id = {},
                       const SigmoidFitOptions& options = {});
SigmoidFit fit_sigmoid(std::span<const ModelObservation> observations, double gamma,
                       const SigmoidFitOptions& options = {});

// The eight (alpha, beta) starting points used by fit_sigmoid.
std::vector<std::pair<double, double>> sigmoid_start_points(std::span<const CurvePoint> points,
                                                            const SigmoidFitOptions& options = {});

double predict_capability(double loss, const SigmoidFit& fit);

struct ComputeLossPoint {
    double compute = 0.0; // FLOPs
    double loss = 0.0;
};

// Training compute from parameter and token counts: 6 * N * D.
double training_compute(double parameters, double tokens);

struct LogLinearFit {
    std::string series_id;
    double intercept = 0.0;
    double slope = 0.0; // loss per unit ln(compute)
    double r_squared = 0.0;
    std::size_t n_points = 0;
    std::vector<double> residuals;
    double residual_sd = 0.0; // sqrt(SSres / (n - 2)), 0 when n <= 2

    double evaluate(double compute) const;
    // Standard error of the fitted mean at `compute`.
    double prediction_stderr(double compute) const;

    double mean_log_compute = 0.0;
    double sxx = 0.0;
};

// Ordinary least squares of loss on ln(compute).
LogLinearFit fit_loglinear(std::span<const ComputeLossPoint> points, std::string series_id = {});

struct StageTrend {
    std::string stage;
    double first_tokens = 0.0;
    double last_tokens = 0.0;
    LogLinearFit fit; // loss against ln(tokens_seen)
};

struct StageGapReport {
    std::string model_id;
    std::string domain_id;
    std::string metric;
    StageTrend before;
    StageTrend after;
    double transition_tokens = 0.0; // geometric midpoint of the stage boundary
    double gap = 0.0;               // before-trend minus after-trend at the transition
    double gap_stderr = 0.0;
    double noise_bound = 0.0; // 3 x gap_stderr plus a rounding floor
};

// Per-stage OLS trend of loss against ln(tokens) and the jump between the two
// trends at the transition. Requires exactly two stages of one series with at
// least three points each and non-overlapping token ranges.
StageGapReport stage_gap(std::span<const lossmeter::LossCurvePoint> curve);

} // namespace capval::caplaw
