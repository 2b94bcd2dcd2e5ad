#pragma once

#include "pdectrl/controller.hpp"
#include "pdectrl/lbfgs.hpp"
#include "pdectrl/pde.hpp"

namespace pdectrl {

// Discrete-adjoint gradients of the true (solver-backed) objectives. These
// differentiate the implemented schemes exactly, so directional finite
// differences of the discrete objective match to rounding.

// J(m) = 1/2 h^2 sum (S_h m - u_d)^2 + alpha/2 h^2 sum m^2
double poisson_objective(const Field& m, const ControlProblem& prob, double cg_tol = 1e-10);
// L2 representer of the objective gradient: p + alpha m with -lap p = u - u_d.
// The coordinate gradient is h^2 times this; <grad, d>_L2 matches directional
// finite differences of the objective.
Field poisson_grad(const Field& m, const ControlProblem& prob, double cg_tol = 1e-10);

// Terminal tracking J(m) = 1/2 h sum (u(T; m) - u_d)^2, m the initial
// velocity. Returns the coordinate gradient dJ/dm_i (backward leapfrog of the
// adjoint; dt-weighted trace at t = 0).
double wave_objective(const Field& m, const ControlProblem& prob);
Field wave_grad(const Field& m, const ControlProblem& prob);

// J(m) = 1/2 h sum (u(T) - u_d)^2 + alpha/2 dt h sum_jt m^2 over interior
// points, controls piecewise constant on the coarse dt grid while the state
// advances with the stability-limited substeps. Returns coordinate gradients
// per control slice.
std::vector<std::vector<double>> burgers_grad(std::span<const std::vector<double>> controls,
                                              const TimeControlProblem& prob,
                                              double* objective_out = nullptr);
double burgers_objective(std::span<const std::vector<double>> controls,
                         const TimeControlProblem& prob);

struct AdjointRunResult {
    Field control;  // steady problems
    std::vector<std::vector<double>> control_slices;  // burgers
    LbfgsResult opt;
    double wall_ms = 0.0;
};

// L-BFGS over the true discrete objective; same optimizer settings as the
// surrogate phase 2 for a fair comparison. Dispatches on prob.pde.kind
// (poisson or wave).
AdjointRunResult adjoint_control(const ControlProblem& prob, const Field& m_init,
                                 const LbfgsConfig& cfg);
AdjointRunResult adjoint_control_time(const TimeControlProblem& prob,
                                      std::span<const std::vector<double>> m_init,
                                      const LbfgsConfig& cfg);

}  // namespace pdectrl
