#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pdectrl {

struct LbfgsConfig {
    int memory = 10;
    double lr = 1.0;  // initial line-search step scale
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_iters = 200;
    double tolerance_change = 1e-9;  // stop when max|dx| falls below
    int max_line_search = 25;        // objective evaluations per line search
};

// Optional decomposition of the objective for reporting (tracking term and
// reconstruction regularizer of the phase-2 objectives).
struct ObjectiveParts {
    double obj = 0.0;
    double rec = 0.0;
};

// Evaluates f(x), writes the gradient into grad (same length as x), and may
// fill parts. Must tolerate arbitrary trial points; may return a non-finite
// value, which the line search treats as out of range.
using ObjectiveFn =
    std::function<double(std::span<const double>, std::span<double>, ObjectiveParts*)>;

struct LbfgsHistoryRow {
    int iter;
    double f, j_obj, j_rec, step, grad_norm, wall_ms;
};

struct LbfgsResult {
    std::vector<double> x;
    double f = 0.0;
    ObjectiveParts parts;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;           // tolerance_change reached
    bool line_search_failed = false;  // gave up after max_line_search trials
    std::vector<LbfgsHistoryRow> history;
};

// Two-loop-recursion L-BFGS with a strong Wolfe line search. With bounds,
// accepted steps are clamped into [lower, upper] and curvature pairs with
// s.y <= 0 are discarded (projected L-BFGS). Returns the best iterate seen.
LbfgsResult lbfgs_minimize(const ObjectiveFn& f, std::vector<double> x0, const LbfgsConfig& cfg,
                           std::span<const double> lower = {}, std::span<const double> upper = {});

void write_history_csv(const std::string& path, const std::vector<LbfgsHistoryRow>& history);

}  // namespace pdectrl
