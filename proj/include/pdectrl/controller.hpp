#pragma once

#include <optional>

#include "pdectrl/lbfgs.hpp"
#include "pdectrl/losses.hpp"
#include "pdectrl/nets.hpp"
#include "pdectrl/pde.hpp"

namespace pdectrl {

// Steady control problem: min 1/2 int (u(m)-u_d)^2 + alpha/2 int m^2 with an
// optional reconstruction regularizer lambda2 * J_rec and optional box bounds.
struct ControlProblem {
    PdeSpec pde;
    Field target;  // u_d
    double alpha = 0.0;
    double lambda2 = 0.0;
    std::optional<Field> lower, upper;
};

// J(u_theta(m), m): tracking + alpha-penalty under the rectangle rule.
double j_obj_steady(const OperatorSurrogate& s, const ControlProblem& prob, const Field& m);
// Reconstruction error of the frozen autoencoder at m. Rejects ||m|| = 0.
double j_rec(const OperatorSurrogate& s, const Field& m);
// j_obj + lambda2 * j_rec
double j_total(const OperatorSurrogate& s, const ControlProblem& prob, const Field& m);

struct Phase2Result {
    Field control;          // m*
    Field predicted_state;  // u_theta(m*)
    LbfgsResult opt;
    double wall_ms = 0.0;
};

// Minimizes j_total over m through the frozen surrogate.
Phase2Result phase2_steady(const OperatorSurrogate& s, const ControlProblem& prob,
                           const Field& m_init, const LbfgsConfig& cfg);

// Time-dependent problem on interior points: terminal tracking plus the
// space-time control penalty, with rollout through the frozen TimeSurrogate.
struct TimeControlProblem {
    PdeSpec pde;                 // burgers parameters (nu, dt, substeps)
    Grid full_grid;              // solver grid including boundary points
    std::vector<double> u0;      // interior initial state
    std::vector<double> target;  // interior u_d
    double alpha = 0.01;
    int steps = 10;
    double jobj_weight = 10.0;
    double jrec_weight = 0.3;
};

struct Phase2TimeResult {
    std::vector<std::vector<double>> controls;  // m^0 .. m^{(n-1)dt}
    std::vector<std::vector<double>> states;    // decoded rollout u^{dt} .. u^{n dt}
    LbfgsResult opt;
    double wall_ms = 0.0;
};

// Surrogate objective value at given controls (for tests and reporting).
double j_total_time(const TimeSurrogate& ts, const TimeControlProblem& prob,
                    std::span<const std::vector<double>> controls, double* jobj_out = nullptr,
                    double* jrec_out = nullptr);

// Optimizes all n control slices jointly.
Phase2TimeResult phase2_time(const TimeSurrogate& ts, const TimeControlProblem& prob,
                             std::span<const std::vector<double>> m_init, const LbfgsConfig& cfg);

}  // namespace pdectrl
