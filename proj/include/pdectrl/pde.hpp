#pragma once

#include <vector>

#include "pdectrl/grid.hpp"

namespace pdectrl {

enum class PdeKind { Poisson, Wave, Burgers };

struct PdeSpec {
    PdeKind kind = PdeKind::Poisson;
    // wave: u_tt = speed^2 u_xx - (u + u^3), u(0)=0, u_t(0)=m, Dirichlet ends
    double wave_speed = 1.0 / 3.0;
    double wave_T = 5.0;
    int wave_nt = 0;  // 0 = pick from the CFL margin below
    double wave_cfl = 0.25;  // dt = wave_cfl * h / speed when wave_nt == 0
    // burgers: u_t = -u u_x + nu u_xx + m(t,x), Dirichlet ends
    double nu = 0.01;
    double burgers_T = 1.0;
    double burgers_dt = 0.1;  // control grid step
    int substeps = 40;        // explicit substeps per control step
};

int wave_steps(const PdeSpec& spec, const Grid& g);

// 5-point stencil on the interior, 0 on the boundary. 2D only.
Field laplacian2d(const Field& u);

// Min distance to the domain boundary, scaled so the grid max is 1;
// exactly 0 on boundary points.
Field boundary_distance_mask(const Grid& g);

// Conjugate gradient for -lap(u) = m with zero Dirichlet data, to relative
// interior residual tol. Throws NumericalError on non-convergence.
Field solve_poisson(const Field& m, double tol);

// Leapfrog for the nonlinear wave equation; returns all time slices
// u(0), u(dt), ..., u(T). m is the initial velocity.
std::vector<Field> solve_wave(const Field& m, const PdeSpec& spec);

// Advances one control interval (spec.burgers_dt) with spec.substeps explicit
// steps: first-order upwind convection, central diffusion, forcing m.
Field burgers_step(const Field& u, const Field& m, const PdeSpec& spec);
// Same scheme, returning every substep state (initial state included); the
// discrete adjoint differentiates exactly this trace.
std::vector<Field> burgers_step_traced(const Field& u, const Field& m, const PdeSpec& spec);

// --- control samplers ------------------------------------------------------

// sum_{1<=j,k<=max_freq} c_jk sin(j pi x) sin(k pi y), c_jk ~ U[-1,1].
Field sample_fourier_control(Rng& rng, int max_freq, const Grid& g);

// One Gaussian bump A exp(-(x-mu)^2 / (2 sigma^2)), A~U[0.5,2],
// mu~U[0.2,0.8], sigma~U[0.05,0.15]; boundary zeroed.
Field sample_gaussian_pulse(Rng& rng, const Grid& g);

// Sum of k signed bumps, A~U[-1,1]; k=0 gives the zero field.
Field sample_gaussian_bumps(Rng& rng, const Grid& g, int k);

struct TwoGaussianParams {
    double amp_left, center_left, sigma_left;
    double amp_right, center_right, sigma_right;
};

// Positive wave on the left half, negative on the right: the colliding pair
// that steepens into a shock.
Field burgers_initial(const TwoGaussianParams& p, const Grid& g);
Field burgers_initial(Rng& rng, const Grid& g);

}  // namespace pdectrl
