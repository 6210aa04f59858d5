#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace capval::optim {

// Objective callback: returns f(x) and writes the gradient into `grad`.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct BoundedOptions {
    std::size_t max_iterations = 15000;
    std::size_t memory = 10;
    double pgtol = 1e-12;   // projected-gradient infinity norm
    double ftol = 1e-15;    // relative decrease between iterations
    double armijo = 1e-4;
};

struct BoundedResult {
    std::vector<double> x;
    double value = 0.0;
    std::size_t iterations = 0;
    std::size_t evaluations = 0;
    bool converged = false;
    std::string message;
};

// Box-constrained limited-memory quasi-Newton minimizer. Variables pinned at a
// bound whose gradient points outward are held fixed for the iteration; the
// quasi-Newton direction is built over the remaining free variables and the
// step is projected back into the box with an Armijo backtracking search.
BoundedResult minimize_bounded(const Objective& objective, std::vector<double> x0, std::span<const double> lower,
                               std::span<const double> upper, const BoundedOptions& options = {});

} // namespace capval::optim
