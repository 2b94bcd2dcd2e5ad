#include "pdectrl/lbfgs.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <string>

#include "pdectrl/errors.hpp"

namespace pdectrl {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm_inf(std::span<const double> a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

double norm_1(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += std::abs(v);
    return s;
}

// Minimizer of the cubic through (x1,f1,g1), (x2,f2,g2), clamped to the
// interval; falls back to bisection when the cubic has no interior minimum.
double cubic_interpolate(double x1, double f1, double g1, double x2, double f2, double g2) {
    const double lo = std::min(x1, x2), hi = std::max(x1, x2);
    const double d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    const double d2_sq = d1 * d1 - g1 * g2;
    if (std::isfinite(d2_sq) && d2_sq >= 0.0) {
        const double d2 = std::sqrt(d2_sq);
        double t;
        if (x1 <= x2)
            t = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2));
        else
            t = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2));
        if (std::isfinite(t)) return std::clamp(t, lo, hi);
    }
    return 0.5 * (lo + hi);
}

struct Pair {
    std::vector<double> s, y;
    double rho;
};

}  // namespace

LbfgsResult lbfgs_minimize(const ObjectiveFn& f, std::vector<double> x0, const LbfgsConfig& cfg,
                           std::span<const double> lower, std::span<const double> upper) {
    if (!(cfg.c1 > 0.0 && cfg.c1 < cfg.c2 && cfg.c2 < 1.0))
        throw ConfigError("lbfgs: need 0 < c1 < c2 < 1");
    if (cfg.memory < 1) throw ConfigError("lbfgs: memory must be >= 1");
    const size_t n = x0.size();
    const bool bounded = !lower.empty();
    if (bounded && (lower.size() != n || upper.size() != n))
        throw ConfigError("lbfgs: bounds must match the variable size");

    auto project = [&](std::vector<double>& x) {
        if (!bounded) return false;
        bool changed = false;
        for (size_t i = 0; i < n; ++i) {
            const double c = std::clamp(x[i], lower[i], upper[i]);
            if (c != x[i]) {
                x[i] = c;
                changed = true;
            }
        }
        return changed;
    };

    LbfgsResult res;
    res.x = std::move(x0);
    project(res.x);

    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed_ms = [&]() {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
            .count();
    };

    std::vector<double> g(n), g_new(n), x_new(n), d(n), q(n);
    ObjectiveParts parts;
    double fx = f(res.x, g, &parts);
    ++res.evaluations;
    if (!std::isfinite(fx)) throw NumericalError("lbfgs: objective not finite at the initial point");
    res.f = fx;
    res.parts = parts;
    res.history.push_back({0, fx, parts.obj, parts.rec, 0.0, std::sqrt(dot(g, g)), elapsed_ms()});

    if (norm_inf(g) < 1e-15) {
        res.converged = true;
        return res;
    }

    // Best accepted iterate; projection can in principle push f back up.
    std::vector<double> best_x = res.x;
    double best_f = fx;
    ObjectiveParts best_parts = parts;

    std::deque<Pair> mem;

    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        // two-loop recursion
        q.assign(g.begin(), g.end());
        std::vector<double> alpha(mem.size());
        for (size_t i = mem.size(); i-- > 0;) {
            alpha[i] = mem[i].rho * dot(mem[i].s, q);
            for (size_t k = 0; k < n; ++k) q[k] -= alpha[i] * mem[i].y[k];
        }
        if (!mem.empty()) {
            const Pair& last = mem.back();
            const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
            for (double& v : q) v *= gamma;
        }
        for (size_t i = 0; i < mem.size(); ++i) {
            const double beta = mem[i].rho * dot(mem[i].y, q);
            for (size_t k = 0; k < n; ++k) q[k] += mem[i].s[k] * (alpha[i] - beta);
        }
        for (size_t k = 0; k < n; ++k) d[k] = -q[k];

        double dg = dot(d, g);
        if (dg > -1e-18) {  // not a descent direction; restart from steepest descent
            mem.clear();
            for (size_t k = 0; k < n; ++k) d[k] = -g[k];
            dg = dot(d, g);
            if (dg >= 0.0) break;
        }

        // strong Wolfe line search on phi(t) = f(x + t d)
        const double t_init = (iter == 1) ? cfg.lr * std::min(1.0, 1.0 / norm_1(g)) : cfg.lr;
        const double phi0 = fx, dphi0 = dg;
        const double armijo_slope = cfg.c1 * dphi0;
        const double curv_bound = -cfg.c2 * dphi0;

        int evals = 0;
        auto phi_eval = [&](double t, double& phi, double& dphi, ObjectiveParts* p) {
            for (size_t k = 0; k < n; ++k) x_new[k] = res.x[k] + t * d[k];
            phi = f(x_new, g_new, p);
            ++evals;
            ++res.evaluations;
            dphi = std::isfinite(phi) ? dot(g_new, d) : 0.0;
        };

        double t = t_init, t_prev = 0.0, phi_prev = phi0, dphi_prev = dphi0;
        double phi_t = 0.0, dphi_t = 0.0;
        ObjectiveParts parts_t;
        bool accepted = false, bracketed = false;
        double blo = 0.0, bhi = 0.0, phi_lo = 0.0, dphi_lo = 0.0, phi_hi = 0.0, dphi_hi = 0.0;

        while (evals < cfg.max_line_search) {
            phi_eval(t, phi_t, dphi_t, &parts_t);
            if (!std::isfinite(phi_t) || phi_t > phi0 + t * armijo_slope ||
                (evals > 1 && phi_t >= phi_prev)) {
                bracketed = true;
                blo = t_prev; phi_lo = phi_prev; dphi_lo = dphi_prev;
                bhi = t; phi_hi = phi_t; dphi_hi = dphi_t;
                break;
            }
            if (std::abs(dphi_t) <= curv_bound) {
                accepted = true;
                break;
            }
            if (dphi_t >= 0.0) {
                bracketed = true;
                blo = t; phi_lo = phi_t; dphi_lo = dphi_t;
                bhi = t_prev; phi_hi = phi_prev; dphi_hi = dphi_prev;
                break;
            }
            t_prev = t; phi_prev = phi_t; dphi_prev = dphi_t;
            t *= 2.0;
        }

        if (bracketed && !accepted) {
            while (evals < cfg.max_line_search) {
                double tc = cubic_interpolate(blo, phi_lo, dphi_lo, bhi, phi_hi, dphi_hi);
                const double span = std::abs(bhi - blo);
                const double margin = 0.1 * span;
                tc = std::clamp(tc, std::min(blo, bhi) + margin, std::max(blo, bhi) - margin);
                phi_eval(tc, phi_t, dphi_t, &parts_t);
                if (!std::isfinite(phi_t) || phi_t > phi0 + tc * armijo_slope || phi_t >= phi_lo) {
                    bhi = tc; phi_hi = phi_t; dphi_hi = dphi_t;
                } else {
                    if (std::abs(dphi_t) <= curv_bound) {
                        t = tc;
                        accepted = true;
                        break;
                    }
                    if (dphi_t * (bhi - blo) >= 0.0) {
                        bhi = blo; phi_hi = phi_lo; dphi_hi = dphi_lo;
                    }
                    blo = tc; phi_lo = phi_t; dphi_lo = dphi_t;
                }
                if (span < 1e-18) break;
            }
            // Fall back to the best Armijo point in the bracket so the outer
            // loop stays monotone even when the curvature test keeps failing.
            if (!accepted && blo > 0.0 && std::isfinite(phi_lo) && phi_lo < phi0) {
                t = blo;
                phi_eval(t, phi_t, dphi_t, &parts_t);
                accepted = std::isfinite(phi_t) && phi_t < phi0;
            }
        }

        if (!accepted) {
            res.line_search_failed = true;
            break;
        }

        for (size_t k = 0; k < n; ++k) x_new[k] = res.x[k] + t * d[k];
        if (project(x_new)) {
            phi_t = f(x_new, g_new, &parts_t);
            ++res.evaluations;
            if (!std::isfinite(phi_t)) {
                res.line_search_failed = true;
                break;
            }
        }

        std::vector<double> s(n), y(n);
        double max_dx = 0.0;
        for (size_t k = 0; k < n; ++k) {
            s[k] = x_new[k] - res.x[k];
            y[k] = g_new[k] - g[k];
            max_dx = std::max(max_dx, std::abs(s[k]));
        }
        const double sy = dot(s, y);
        if (sy > 1e-10 * std::sqrt(dot(s, s)) * std::sqrt(dot(y, y))) {
            mem.push_back({std::move(s), std::move(y), 1.0 / sy});
            if (static_cast<int>(mem.size()) > cfg.memory) mem.pop_front();
        }

        res.x = x_new;
        fx = phi_t;
        parts = parts_t;
        std::swap(g, g_new);
        res.iterations = iter;
        res.history.push_back({iter, fx, parts.obj, parts.rec, t, std::sqrt(dot(g, g)), elapsed_ms()});
        if (fx < best_f) {
            best_f = fx;
            best_x = res.x;
            best_parts = parts;
        }
        if (max_dx < cfg.tolerance_change) {
            res.converged = true;
            break;
        }
        if (norm_inf(g) < 1e-15) {
            res.converged = true;
            break;
        }
    }

    res.x = best_x;
    res.f = best_f;
    res.parts = best_parts;
    return res;
}

void write_history_csv(const std::string& path, const std::vector<LbfgsHistoryRow>& history) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    fs::path tmp = target;
    tmp += ".tmp";
    FILE* fp = std::fopen(tmp.c_str(), "w");
    if (!fp) throw IoError("cannot open '" + tmp.string() + "' for writing");
    std::fprintf(fp, "iter,J_obj,J_rec,J_total,step_length,grad_norm,wall_ms\n");
    for (const auto& r : history)
        std::fprintf(fp, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", r.iter, r.j_obj, r.j_rec, r.f,
                     r.step, r.grad_norm, r.wall_ms);
    std::fclose(fp);
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("rename to '" + path + "' failed: " + ec.message());
}

}  // namespace pdectrl
