#pragma once

#include <span>

#include "pdectrl/nets.hpp"
#include "pdectrl/pde.hpp"

namespace pdectrl {

enum class Phase1Mode { Supervised, Residual };

struct LossWeights {
    double lambda1 = 1.5;
    // Time-dependent training terms, in order: latent match, state match,
    // state reconstruction, control reconstruction.
    double w_latent = 1.0, w_state = 1.5, w_state_rec = 0.5, w_control_rec = 1.0;
};

// ||u - ref||_2 / ||ref||_2, differentiable in both arguments.
// Rejects a zero-norm reference.
Tensor relative_error_graph(Tape& tape, Tensor u, Tensor ref);

// Squared discrete PDE residual of one sample: h^2 * sum over interior of
// (-lap_h u_theta(m) - m)^2, with lap_h the fixed 5-point conv kernel.
// Requires the surrogate to enforce the Dirichlet boundary.
Tensor residual_poisson_graph(Tape& tape, const OperatorSurrogate& s, const BoundParams& b,
                              Tensor m_t, const Field& m);

// Sum (not mean) of per-sample phase-1 losses over the given samples;
// the caller divides by the full batch size.
Tensor phase1_loss_sum_graph(Tape& tape, const OperatorSurrogate& s, const BoundParams& b,
                             std::span<const Field> controls, std::span<const Field> states,
                             Phase1Mode mode, const LossWeights& w);

// Batch loss values (forward only).
double loss_supervised(const OperatorSurrogate& s, std::span<const Field> controls,
                       std::span<const Field> states);
double loss_residual_poisson(const OperatorSurrogate& s, std::span<const Field> controls);
double loss_reconstruction(const OperatorSurrogate& s, std::span<const Field> controls);
double loss_total_phase1(const OperatorSurrogate& s, std::span<const Field> controls,
                         std::span<const Field> states, Phase1Mode mode, const LossWeights& w);

// Mean relative error of predicted states against labels (the test metric).
double eval_state_error(const OperatorSurrogate& s, std::span<const Field> controls,
                        std::span<const Field> states);

// ---------------------------------------------------------------------------
// time-dependent
// ---------------------------------------------------------------------------

// One (u^t, m^t, u^{t+dt}) training tuple, teacher-forced. Interior-point
// arrays of length ts.arch.n.
Tensor time_tuple_loss_graph(Tape& tape, const TimeSurrogate& ts, const BoundParams& b,
                             std::span<const double> u_t, std::span<const double> m_t,
                             std::span<const double> u_next, const LossWeights& w);

// Latent rollout from u0 through n controls; returns the decoded states
// u(dt), ..., u(n dt). The latent state is carried between steps.
std::vector<Tensor> rollout_graph(Tape& tape, const TimeSurrogate& ts, const BoundParams& b,
                                  Tensor u0, std::span<const Tensor> controls);
std::vector<std::vector<double>> rollout(const TimeSurrogate& ts, std::span<const double> u0,
                                         std::span<const std::vector<double>> controls);

// One-step prediction error over tuples (the time test metric).
double eval_one_step_error(const TimeSurrogate& ts, std::span<const double> u_t,
                           std::span<const double> m_t, std::span<const double> u_next);

}  // namespace pdectrl
