#include "pdectrl/adjoint.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "pdectrl/errors.hpp"

namespace pdectrl {

double poisson_objective(const Field& m, const ControlProblem& prob, double cg_tol) {
    const Field u = solve_poisson(m, cg_tol);
    const double vol = m.grid.cell_volume();
    double track = 0.0, pen = 0.0;
    for (size_t i = 0; i < u.values.size(); ++i) {
        const double d = u.values[i] - prob.target.values[i];
        track += d * d;
        pen += m.values[i] * m.values[i];
    }
    return 0.5 * vol * track + 0.5 * prob.alpha * vol * pen;
}

Field poisson_grad(const Field& m, const ControlProblem& prob, double cg_tol) {
    const Field u = solve_poisson(m, cg_tol);
    const Field p = solve_poisson(u - prob.target, cg_tol);
    Field g = p;
    for (size_t i = 0; i < g.values.size(); ++i) g.values[i] += prob.alpha * m.values[i];
    return g;
}

// ---------------------------------------------------------------------------

namespace {

double terminal_mismatch(const Field& uT, const Field& target, double h) {
    double s = 0.0;
    for (size_t i = 0; i < uT.values.size(); ++i) {
        const double d = uT.values[i] - target.values[i];
        s += d * d;
    }
    return 0.5 * h * s;
}

}  // namespace

double wave_objective(const Field& m, const ControlProblem& prob) {
    const auto traj = solve_wave(m, prob.pde);
    return terminal_mismatch(traj.back(), prob.target, m.grid.h());
}

Field wave_grad(const Field& m, const ControlProblem& prob) {
    const Grid& g = m.grid;
    const auto traj = solve_wave(m, prob.pde);
    const int nt = static_cast<int>(traj.size()) - 1;
    const int n = g.n;
    const double h = g.h();
    const double dt = prob.pde.wave_T / nt;
    const double c2 = prob.pde.wave_speed * prob.pde.wave_speed;
    const double ih2 = 1.0 / (h * h);

    // lam[k] accumulates dJ/du^k during the backward sweep.
    std::vector<std::vector<double>> lam(static_cast<size_t>(nt) + 1,
                                         std::vector<double>(static_cast<size_t>(n), 0.0));
    for (int i = 1; i < n - 1; ++i)
        lam[static_cast<size_t>(nt)][static_cast<size_t>(i)] =
            h * (traj.back().at(i) - prob.target.at(i));

    for (int k = nt; k >= 2; --k) {
        const auto& lk = lam[static_cast<size_t>(k)];
        auto& lk1 = lam[static_cast<size_t>(k) - 1];
        auto& lk2 = lam[static_cast<size_t>(k) - 2];
        const Field& u_prev = traj[static_cast<size_t>(k) - 1];
        for (int i = 1; i < n - 1; ++i) {
            const double lap = ih2 * (lk[static_cast<size_t>(i) - 1] - 2.0 * lk[static_cast<size_t>(i)] +
                                      lk[static_cast<size_t>(i) + 1]);
            const double fprime = 1.0 + 3.0 * u_prev.at(i) * u_prev.at(i);
            lk1[static_cast<size_t>(i)] +=
                2.0 * lk[static_cast<size_t>(i)] + dt * dt * (c2 * lap - fprime * lk[static_cast<size_t>(i)]);
            lk2[static_cast<size_t>(i)] -= lk[static_cast<size_t>(i)];
        }
    }

    Field grad(g);
    for (int i = 1; i < n - 1; ++i) grad.at(i) = dt * lam[1][static_cast<size_t>(i)];
    return grad;
}

// ---------------------------------------------------------------------------

namespace {

Field expand_interior(std::span<const double> interior, const Grid& full) {
    Field f(full);
    for (int i = 0; i < full.n - 2; ++i) f.at(i + 1) = interior[static_cast<size_t>(i)];
    return f;
}

}  // namespace

std::vector<std::vector<double>> burgers_grad(std::span<const std::vector<double>> controls,
                                              const TimeControlProblem& prob,
                                              double* objective_out) {
    const Grid& g = prob.full_grid;
    const int n = g.n, n_int = n - 2;
    const int steps = prob.steps;
    if (static_cast<int>(controls.size()) != steps)
        throw ConfigError("burgers_grad: expected " + std::to_string(steps) + " control slices");
    const double h = g.h();
    const double dt_c = prob.pde.burgers_dt;
    const double dt = dt_c / prob.pde.substeps;
    const double nu = prob.pde.nu;

    // forward with the full substep trace per control interval
    std::vector<std::vector<Field>> traces(static_cast<size_t>(steps));
    Field u = expand_interior(prob.u0, g);
    std::vector<Field> m_fields;
    m_fields.reserve(static_cast<size_t>(steps));
    for (int j = 0; j < steps; ++j) {
        m_fields.push_back(expand_interior(controls[static_cast<size_t>(j)], g));
        traces[static_cast<size_t>(j)] = burgers_step_traced(u, m_fields.back(), prob.pde);
        u = traces[static_cast<size_t>(j)].back();
    }

    const Field target = expand_interior(prob.target, g);
    double J = terminal_mismatch(u, target, h);
    double pen = 0.0;
    for (const auto& mj : controls)
        for (double v : mj) pen += v * v;
    J += 0.5 * prob.alpha * h * dt_c * pen;
    if (objective_out) *objective_out = J;

    // adjoint sweep
    std::vector<double> lam(static_cast<size_t>(n), 0.0), lam_new(static_cast<size_t>(n), 0.0);
    for (int i = 1; i < n - 1; ++i) lam[static_cast<size_t>(i)] = h * (u.at(i) - target.at(i));

    std::vector<std::vector<double>> grads(static_cast<size_t>(steps),
                                           std::vector<double>(static_cast<size_t>(n_int), 0.0));
    for (int j = steps - 1; j >= 0; --j) {
        auto& gj = grads[static_cast<size_t>(j)];
        const auto& trace = traces[static_cast<size_t>(j)];
        for (int s = prob.pde.substeps - 1; s >= 0; --s) {
            // dJ/dm picks up dt * lam^{s+1} from each substep of this interval
            for (int i = 1; i < n - 1; ++i)
                gj[static_cast<size_t>(i) - 1] += dt * lam[static_cast<size_t>(i)];
            const Field& us = trace[static_cast<size_t>(s)];
            std::fill(lam_new.begin(), lam_new.end(), 0.0);
            for (int i = 1; i < n - 1; ++i) {
                const double li = lam[static_cast<size_t>(i)];
                const double lap = (lam[static_cast<size_t>(i) - 1] - 2.0 * li +
                                    lam[static_cast<size_t>(i) + 1]) / (h * h);
                lam_new[static_cast<size_t>(i)] += li + dt * nu * lap;
                const double ui = us.at(i);
                if (ui > 0.0) {
                    lam_new[static_cast<size_t>(i)] -= dt * (2.0 * ui - us.at(i - 1)) / h * li;
                    lam_new[static_cast<size_t>(i) - 1] += dt * ui / h * li;
                } else {
                    lam_new[static_cast<size_t>(i)] -= dt * (us.at(i + 1) - 2.0 * ui) / h * li;
                    lam_new[static_cast<size_t>(i) + 1] -= dt * ui / h * li;
                }
            }
            lam_new[0] = 0.0;
            lam_new[static_cast<size_t>(n) - 1] = 0.0;
            std::swap(lam, lam_new);
        }
        for (int i = 0; i < n_int; ++i)
            gj[static_cast<size_t>(i)] += prob.alpha * h * dt_c * controls[static_cast<size_t>(j)][static_cast<size_t>(i)];
    }
    return grads;
}

double burgers_objective(std::span<const std::vector<double>> controls,
                         const TimeControlProblem& prob) {
    const Grid& g = prob.full_grid;
    Field u = expand_interior(prob.u0, g);
    for (int j = 0; j < prob.steps; ++j)
        u = burgers_step(u, expand_interior(controls[static_cast<size_t>(j)], g), prob.pde);
    const Field target = expand_interior(prob.target, g);
    double J = terminal_mismatch(u, target, g.h());
    double pen = 0.0;
    for (const auto& mj : controls)
        for (double v : mj) pen += v * v;
    return J + 0.5 * prob.alpha * g.h() * prob.pde.burgers_dt * pen;
}

// ---------------------------------------------------------------------------

AdjointRunResult adjoint_control(const ControlProblem& prob, const Field& m_init,
                                 const LbfgsConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const double vol = m_init.grid.cell_volume();
    const Grid grid = m_init.grid;

    ObjectiveFn obj;
    if (prob.pde.kind == PdeKind::Poisson) {
        obj = [&prob, grid, vol](std::span<const double> x, std::span<double> grad,
                                 ObjectiveParts* parts) -> double {
            Field m(grid);
            m.values.assign(x.begin(), x.end());
            try {
                const Field u = solve_poisson(m, 1e-10);
                const Field p = solve_poisson(u - prob.target, 1e-10);
                double track = 0.0, pen = 0.0;
                for (size_t i = 0; i < u.values.size(); ++i) {
                    const double d = u.values[i] - prob.target.values[i];
                    track += d * d;
                    pen += m.values[i] * m.values[i];
                    grad[i] = vol * (p.values[i] + prob.alpha * m.values[i]);
                }
                const double J = 0.5 * vol * track + 0.5 * prob.alpha * vol * pen;
                if (parts) {
                    parts->obj = J;
                    parts->rec = 0.0;
                }
                return J;
            } catch (const NumericalError&) {
                return std::numeric_limits<double>::quiet_NaN();
            }
        };
    } else if (prob.pde.kind == PdeKind::Wave) {
        obj = [&prob, grid](std::span<const double> x, std::span<double> grad,
                            ObjectiveParts* parts) -> double {
            Field m(grid);
            m.values.assign(x.begin(), x.end());
            try {
                const Field g = wave_grad(m, prob);
                std::copy(g.values.begin(), g.values.end(), grad.begin());
                const double J = wave_objective(m, prob);
                if (parts) {
                    parts->obj = J;
                    parts->rec = 0.0;
                }
                return J;
            } catch (const NumericalError&) {
                return std::numeric_limits<double>::quiet_NaN();
            }
        };
    } else {
        throw ConfigError("adjoint_control: use adjoint_control_time for burgers");
    }

    std::span<const double> lo, hi;
    if (prob.lower) lo = prob.lower->values;
    if (prob.upper) hi = prob.upper->values;
    LbfgsResult opt = lbfgs_minimize(obj, m_init.values, cfg, lo, hi);

    AdjointRunResult out;
    out.control = Field(grid);
    out.control.values = opt.x;
    out.opt = std::move(opt);
    out.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

AdjointRunResult adjoint_control_time(const TimeControlProblem& prob,
                                      std::span<const std::vector<double>> m_init,
                                      const LbfgsConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const int n_int = prob.full_grid.n - 2;
    if (static_cast<int>(m_init.size()) != prob.steps)
        throw ConfigError("adjoint_control_time: expected " + std::to_string(prob.steps) +
                          " control slices");

    ObjectiveFn obj = [&prob, n_int](std::span<const double> x, std::span<double> grad,
                                     ObjectiveParts* parts) -> double {
        std::vector<std::vector<double>> controls(static_cast<size_t>(prob.steps));
        for (int j = 0; j < prob.steps; ++j)
            controls[static_cast<size_t>(j)]
                .assign(x.begin() + static_cast<size_t>(j) * n_int,
                        x.begin() + static_cast<size_t>(j + 1) * n_int);
        try {
            double J = 0.0;
            auto grads = burgers_grad(controls, prob, &J);
            for (int j = 0; j < prob.steps; ++j)
                std::copy(grads[static_cast<size_t>(j)].begin(), grads[static_cast<size_t>(j)].end(),
                          grad.begin() + static_cast<size_t>(j) * n_int);
            if (parts) {
                parts->obj = J;
                parts->rec = 0.0;
            }
            return J;
        } catch (const NumericalError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };

    std::vector<double> x0;
    x0.reserve(m_init.size() * static_cast<size_t>(n_int));
    for (const auto& mj : m_init) {
        if (static_cast<int>(mj.size()) != n_int)
            throw ConfigError("adjoint_control_time: control slice size mismatch");
        x0.insert(x0.end(), mj.begin(), mj.end());
    }
    LbfgsResult opt = lbfgs_minimize(obj, std::move(x0), cfg);

    AdjointRunResult out;
    out.control_slices.resize(static_cast<size_t>(prob.steps));
    for (int j = 0; j < prob.steps; ++j)
        out.control_slices[static_cast<size_t>(j)]
            .assign(opt.x.begin() + static_cast<size_t>(j) * n_int,
                    opt.x.begin() + static_cast<size_t>(j + 1) * n_int);
    out.opt = std::move(opt);
    out.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace pdectrl
