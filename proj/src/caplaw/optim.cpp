#include "capval/optim.hpp"

#include "capval/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace capval::optim {

namespace {

struct Pair {
    std::vector<double> s;
    std::vector<double> y;
    double rho = 0.0;
};

double dot_masked(const std::vector<double>& a, const std::vector<double>& b, const std::vector<bool>& free) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (free[i]) acc += a[i] * b[i];
    }
    return acc;
}

// Two-loop recursion restricted to the free variables.
std::vector<double> lbfgs_direction(const std::vector<double>& g, const std::deque<Pair>& memory,
                                    const std::vector<bool>& free) {
    const std::size_t n = g.size();
    std::vector<double> q(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) q[i] = free[i] ? g[i] : 0.0;
    std::vector<double> alpha(memory.size(), 0.0);
    std::vector<double> rho(memory.size(), 0.0);
    for (std::size_t j = memory.size(); j-- > 0;) {
        const auto& p = memory[j];
        const double sy = dot_masked(p.s, p.y, free);
        if (!(sy > 0.0)) continue;
        rho[j] = 1.0 / sy;
        alpha[j] = rho[j] * dot_masked(p.s, q, free);
        for (std::size_t i = 0; i < n; ++i) {
            if (free[i]) q[i] -= alpha[j] * p.y[i];
        }
    }
    double gamma = 1.0;
    if (!memory.empty()) {
        const auto& last = memory.back();
        const double sy = dot_masked(last.s, last.y, free);
        const double yy = dot_masked(last.y, last.y, free);
        if (sy > 0.0 && yy > 0.0) gamma = sy / yy;
    }
    for (double& v : q) v *= gamma;
    for (std::size_t j = 0; j < memory.size(); ++j) {
        if (rho[j] == 0.0) continue;
        const auto& p = memory[j];
        const double beta = rho[j] * dot_masked(p.y, q, free);
        for (std::size_t i = 0; i < n; ++i) {
            if (free[i]) q[i] += p.s[i] * (alpha[j] - beta);
        }
    }
    for (double& v : q) v = -v;
    return q;
}

} // namespace

BoundedResult minimize_bounded(const Objective& objective, std::vector<double> x0, std::span<const double> lower,
                               std::span<const double> upper, const BoundedOptions& options) {
    const std::size_t n = x0.size();
    if (lower.size() != n || upper.size() != n) throw PreconditionError("bounds must match the parameter count");
    for (std::size_t i = 0; i < n; ++i) {
        if (!(lower[i] <= upper[i])) throw PreconditionError("lower bound exceeds upper bound");
    }
    auto project = [&](std::vector<double>& x) {
        for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i], lower[i], upper[i]);
    };

    BoundedResult result;
    std::vector<double> x = std::move(x0);
    project(x);
    std::vector<double> g(n, 0.0);
    double f = objective(x, g);
    result.evaluations = 1;
    if (!std::isfinite(f)) {
        result.x = x;
        result.value = f;
        result.message = "objective not finite at the starting point";
        return result;
    }

    std::deque<Pair> memory;
    std::vector<double> x_new(n);
    std::vector<double> g_new(n);
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
        result.iterations = it + 1;
        std::vector<bool> free(n, true);
        double pg_norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool at_lower = x[i] <= lower[i] && g[i] > 0.0;
            const bool at_upper = x[i] >= upper[i] && g[i] < 0.0;
            free[i] = !(at_lower || at_upper);
            if (free[i]) pg_norm = std::max(pg_norm, std::abs(g[i]));
        }
        if (pg_norm <= options.pgtol) {
            result.converged = true;
            result.message = "projected gradient below tolerance";
            break;
        }

        std::vector<double> d = lbfgs_direction(g, memory, free);
        double slope = dot_masked(g, d, free);
        if (!(slope < 0.0)) {
            memory.clear();
            for (std::size_t i = 0; i < n; ++i) d[i] = free[i] ? -g[i] : 0.0;
            slope = dot_masked(g, d, free);
        }

        double step = 1.0;
        if (memory.empty()) {
            double dn = 0.0;
            for (double v : d) dn = std::max(dn, std::abs(v));
            if (dn > 0.0) step = std::min(1.0, 1.0 / dn);
        }

        bool accepted = false;
        double f_new = f;
        for (int attempt = 0; attempt < 60; ++attempt) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + step * d[i];
            project(x_new);
            double decrease = 0.0;
            for (std::size_t i = 0; i < n; ++i) decrease += g[i] * (x_new[i] - x[i]);
            f_new = objective(x_new, g_new);
            ++result.evaluations;
            if (std::isfinite(f_new) && f_new <= f + options.armijo * decrease) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (!memory.empty()) {
                memory.clear();
                continue;
            }
            result.message = "line search failed";
            break;
        }

        Pair pair{std::vector<double>(n), std::vector<double>(n)};
        double s_norm = 0.0;
        double x_norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            pair.s[i] = x_new[i] - x[i];
            pair.y[i] = g_new[i] - g[i];
            s_norm = std::max(s_norm, std::abs(pair.s[i]));
            x_norm = std::max(x_norm, std::abs(x_new[i]));
        }
        double sy = 0.0;
        double yy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sy += pair.s[i] * pair.y[i];
            yy += pair.y[i] * pair.y[i];
        }
        if (sy > std::numeric_limits<double>::epsilon() * yy) {
            pair.rho = 1.0 / sy;
            memory.push_back(std::move(pair));
            if (memory.size() > options.memory) memory.pop_front();
        }

        const double reduction = f - f_new;
        x.swap(x_new);
        g.swap(g_new);
        f = f_new;
        if (reduction <= options.ftol * std::max(std::abs(f), std::abs(f + reduction)) && reduction >= 0.0) {
            result.converged = true;
            result.message = "relative reduction below tolerance";
            break;
        }
        if (s_norm <= 1e-15 * (1.0 + x_norm)) {
            result.converged = true;
            result.message = "step below tolerance";
            break;
        }
    }
    if (!result.converged && result.message.empty()) result.message = "iteration limit reached";
    result.x = std::move(x);
    result.value = f;
    return result;
}

} // namespace capval::optim
