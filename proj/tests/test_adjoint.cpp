#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pdectrl/adjoint.hpp"
#include "pdectrl/bench.hpp"

using namespace pdectrl;

namespace {
constexpr double kPi = std::numbers::pi;

// directional derivative by central differences
template <typename F>
double fd_directional(const F& J, const Field& m, const Field& dir, double eps) {
    Field mp = m, mm = m;
    for (size_t i = 0; i < m.values.size(); ++i) {
        mp.values[i] += eps * dir.values[i];
        mm.values[i] -= eps * dir.values[i];
    }
    return (J(mp) - J(mm)) / (2.0 * eps);
}

Field random_direction(const Grid& g, uint64_t seed, bool zero_boundary = true) {
    Rng rng(seed);
    Field d(g);
    for (double& v : d.values) v = rng.uniform(-1, 1);
    if (zero_boundary) d.zero_boundary();
    return d;
}

}  // namespace

TEST_CASE("poisson adjoint gradient matches finite differences") {
    Grid g = make_grid_2d(24);
    ControlProblem prob;
    prob.pde.kind = PdeKind::Poisson;
    prob.alpha = 1e-6;
    prob.target = poisson_target_field(g);
    Rng rng(3);
    Field m = sample_fourier_control(rng, 3, g);
    Field grad = poisson_grad(m, prob);
    auto J = [&](const Field& mm) { return poisson_objective(mm, prob); };
    for (uint64_t s = 0; s < 5; ++s) {
        Field dir = random_direction(g, 100 + s, false);
        const double fd = fd_directional(J, m, dir, 1e-5);
        const double ad = dot_l2(grad, dir);  // L2 representer against L2 pairing
        CHECK(std::abs(fd - ad) / std::max({1e-12, std::abs(fd), std::abs(ad)}) <= 1e-6);
    }
}

TEST_CASE("poisson gradient is SPD-definite at alpha=0, ud=0") {
    Grid g = make_grid_2d(20);
    ControlProblem prob;
    prob.pde.kind = PdeKind::Poisson;
    prob.alpha = 0.0;
    prob.target = Field(g);
    Rng rng(5);
    Field m = sample_fourier_control(rng, 2, g);
    Field grad = poisson_grad(m, prob);  // S^2 m
    CHECK(dot_l2(grad, m) > 0.0);
}

TEST_CASE("poisson gradient at the analytic optimum is discretization-small and O(h^2)") {
    ControlProblem prob;
    prob.pde.kind = PdeKind::Poisson;
    prob.alpha = 1e-6;
    auto grad_norm_at = [&](int n) {
        Grid g = make_grid_2d(n);
        ControlProblem p = prob;
        p.target = poisson_target_field(g);
        Field mstar = poisson_optimal_control(g, prob.alpha);
        return norm_l2(poisson_grad(mstar, p)) / norm_l2(p.target);
    };
    const double g1 = grad_norm_at(33), g2 = grad_norm_at(65), g3 = grad_norm_at(129);
    CHECK(g2 <= 5e-3);  // discretization-limited stationarity
    CHECK(g1 / g2 >= 3.0);
    CHECK(g1 / g2 <= 5.0);
    CHECK(g2 / g3 >= 3.0);
    CHECK(g2 / g3 <= 5.0);
}

TEST_CASE("wave adjoint gradient") {
    Grid g = make_grid_1d(48);
    ControlProblem prob;
    prob.pde.kind = PdeKind::Wave;
    prob.pde.wave_T = 2.0;  // shorter horizon keeps the FD check cheap
    Rng rng(7);

    // zero terminal mismatch -> zero gradient
    Field m0 = sample_gaussian_pulse(rng, g);
    prob.target = solve_wave(m0, prob.pde).back();
    Field gz = wave_grad(m0, prob);
    CHECK(norm_l2(gz) <= 1e-10);

    // directional FD against a different target
    Rng rng2(8);
    prob.target = solve_wave(sample_gaussian_pulse(rng2, g), prob.pde).back();
    Field grad = wave_grad(m0, prob);
    auto J = [&](const Field& mm) { return wave_objective(mm, prob); };
    for (uint64_t s = 0; s < 5; ++s) {
        Field dir = random_direction(g, 200 + s);
        const double fd = fd_directional(J, m0, dir, 1e-5);
        double ad = 0.0;  // coordinate gradient against the euclidean pairing
        for (size_t i = 0; i < dir.values.size(); ++i) ad += grad.values[i] * dir.values[i];
        CHECK(std::abs(fd - ad) / std::max({1e-12, std::abs(fd), std::abs(ad)}) <= 1e-5);
    }
}

TEST_CASE("wave adjoint matches the linearized adjoint at small amplitude") {
    // with ||m||_inf ~ 1e-4 the cubic source is O(1e-12); f'(u) ~ 1 + O(1e-8),
    // so the nonlinear adjoint and the linearized one coincide to ~1e-8
    Grid g = make_grid_1d(48);
    ControlProblem prob;
    prob.pde.kind = PdeKind::Wave;
    prob.pde.wave_T = 2.0;
    Rng rng(9);
    Field m = sample_gaussian_pulse(rng, g);
    for (double& v : m.values) v *= 1e-4 / 2.0;
    prob.target = Field(g);  // pure energy-minimization target

    Field grad = wave_grad(m, prob);

    // linearized oracle: same leapfrog adjoint with f'(u) frozen to 1
    const auto traj = solve_wave(m, prob.pde);
    const int nt = static_cast<int>(traj.size()) - 1, n = g.n;
    const double dt = prob.pde.wave_T / nt, h = g.h();
    const double c2 = prob.pde.wave_speed * prob.pde.wave_speed, ih2 = 1.0 / (h * h);
    std::vector<std::vector<double>> lam(static_cast<size_t>(nt) + 1,
                                         std::vector<double>(static_cast<size_t>(n), 0.0));
    for (int i = 1; i < n - 1; ++i)
        lam[static_cast<size_t>(nt)][static_cast<size_t>(i)] = h * traj.back().at(i);
    for (int k = nt; k >= 2; --k) {
        const auto& lk = lam[static_cast<size_t>(k)];
        auto& lk1 = lam[static_cast<size_t>(k) - 1];
        auto& lk2 = lam[static_cast<size_t>(k) - 2];
        for (int i = 1; i < n - 1; ++i) {
            const double lap = ih2 * (lk[static_cast<size_t>(i - 1)] - 2 * lk[static_cast<size_t>(i)] +
                                      lk[static_cast<size_t>(i + 1)]);
            lk1[static_cast<size_t>(i)] += 2 * lk[static_cast<size_t>(i)] +
                                           dt * dt * (c2 * lap - lk[static_cast<size_t>(i)]);
            lk2[static_cast<size_t>(i)] -= lk[static_cast<size_t>(i)];
        }
    }
    double num = 0.0, den = 0.0;
    for (int i = 1; i < n - 1; ++i) {
        const double lin = dt * lam[1][static_cast<size_t>(i)];
        const double d = grad.at(i) - lin;
        num += d * d;
        den += lin * lin;
    }
    CHECK(std::sqrt(num / den) <= 0.01);
}

TEST_CASE("burgers adjoint gradient") {
    Grid g = make_grid_1d(34);  // 32 interior points
    TimeControlProblem prob;
    prob.pde.kind = PdeKind::Burgers;
    prob.pde.substeps = 20;
    prob.full_grid = g;
    prob.steps = 3;
    prob.alpha = 0.01;
    const int n_int = 32;
    Rng rng(11);
    Field u0f = burgers_initial(rng, g);
    prob.u0.resize(n_int);
    for (int i = 0; i < n_int; ++i) prob.u0[static_cast<size_t>(i)] = u0f.at(i + 1);
    // reachable-ish target from a forced trajectory
    Field force = sample_gaussian_bumps(rng, g, 3);
    Field u = u0f;
    for (int j = 0; j < prob.steps; ++j) u = burgers_step(u, force, prob.pde);
    prob.target.resize(n_int);
    for (int i = 0; i < n_int; ++i) prob.target[static_cast<size_t>(i)] = u.at(i + 1);

    std::vector<std::vector<double>> controls(static_cast<size_t>(prob.steps),
                                              std::vector<double>(n_int));
    for (auto& c : controls)
        for (double& x : c) x = rng.uniform(-0.5, 0.5);

    double J0 = 0.0;
    auto grads = burgers_grad(controls, prob, &J0);
    CHECK(J0 == doctest::Approx(burgers_objective(controls, prob)).epsilon(1e-12));

    // directional FD over all slices
    Rng drng(12);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::vector<double>> dir(static_cast<size_t>(prob.steps),
                                             std::vector<double>(n_int));
        for (auto& d : dir)
            for (double& x : d) x = drng.uniform(-1, 1);
        const double eps = 1e-6;
        auto shift = [&](double sgn) {
            auto c = controls;
            for (int j = 0; j < prob.steps; ++j)
                for (int i = 0; i < n_int; ++i)
                    c[static_cast<size_t>(j)][static_cast<size_t>(i)] +=
                        sgn * eps * dir[static_cast<size_t>(j)][static_cast<size_t>(i)];
            return burgers_objective(c, prob);
        };
        const double fd = (shift(1.0) - shift(-1.0)) / (2 * eps);
        double ad = 0.0;
        for (int j = 0; j < prob.steps; ++j)
            for (int i = 0; i < n_int; ++i)
                ad += grads[static_cast<size_t>(j)][static_cast<size_t>(i)] *
                      dir[static_cast<size_t>(j)][static_cast<size_t>(i)];
        CHECK(std::abs(fd - ad) / std::max({1e-12, std::abs(fd), std::abs(ad)}) <= 1e-4);
    }
}

TEST_CASE("burgers penalty-only gradient is alpha h dt m") {
    Grid g = make_grid_1d(34);
    TimeControlProblem prob;
    prob.pde.kind = PdeKind::Burgers;
    prob.pde.substeps = 20;
    prob.full_grid = g;
    prob.steps = 2;
    prob.alpha = 0.01;
    const int n_int = 32;
    prob.u0.assign(n_int, 0.0);
    prob.target.assign(n_int, 0.0);
    // u stays 0 under zero controls, so the tracking term and its adjoint
    // vanish and only the quadratic penalty remains
    std::vector<std::vector<double>> zero(static_cast<size_t>(prob.steps),
                                          std::vector<double>(n_int, 0.0));
    auto gz = burgers_grad(zero, prob);
    for (const auto& gj : gz)
        for (double v : gj) CHECK(v == 0.0);

    // analytic check of the penalty part via linearity in the target term:
    // with u == 0 the full gradient at small m is alpha h dt m + O(tracking)
    prob.alpha = 0.5;
    std::vector<std::vector<double>> m(static_cast<size_t>(prob.steps),
                                       std::vector<double>(n_int, 0.0));
    m[0][5] = 1e-9;  // negligible state response
    auto gm = burgers_grad(m, prob);
    const double expect = prob.alpha * g.h() * prob.pde.burgers_dt * 1e-9;
    CHECK(gm[0][5] == doctest::Approx(expect).epsilon(1e-3));
}

TEST_CASE("adjoint control on poisson reaches the analytic optimum from the bump start") {
    Grid g = make_grid_2d(32);
    ControlProblem prob;
    prob.pde.kind = PdeKind::Poisson;
    prob.alpha = 1e-6;
    prob.target = poisson_target_field(g);
    LbfgsConfig cfg;
    cfg.max_iters = 120;
    cfg.tolerance_change = 1e-9;
    Field m0 = make_m_init("xy(1-x)(1-y)", g);
    AdjointRunResult res = adjoint_control(prob, m0, cfg);
    Field mstar = poisson_optimal_control(g, prob.alpha);
    CHECK(rel_error(res.control, mstar) <= 0.05);
    // monotone history under the shared Wolfe line search
    for (size_t i = 1; i < res.opt.history.size(); ++i)
        CHECK(res.opt.history[i].f <= res.opt.history[i - 1].f);
}
