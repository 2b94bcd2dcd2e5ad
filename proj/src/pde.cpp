#include "pdectrl/pde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pdectrl/errors.hpp"

namespace pdectrl {

Grid make_grid_1d(int n, double a, double b) {
    if (n < 3) throw ConfigError("grid needs n >= 3, got " + std::to_string(n));
    return Grid{1, n, a, b};
}

Grid make_grid_2d(int n, double a, double b) {
    if (n < 3) throw ConfigError("grid needs n >= 3, got " + std::to_string(n));
    return Grid{2, n, a, b};
}

bool Field::is_boundary(int i) const {
    const int n = grid.n;
    if (grid.ndim == 1) return i == 0 || i == n - 1;
    const int iy = i / n, ix = i % n;
    return iy == 0 || iy == n - 1 || ix == 0 || ix == n - 1;
}

void Field::zero_boundary() {
    const int n = grid.n;
    if (grid.ndim == 1) {
        values.front() = 0.0;
        values.back() = 0.0;
        return;
    }
    for (int ix = 0; ix < n; ++ix) {
        at(0, ix) = 0.0;
        at(n - 1, ix) = 0.0;
    }
    for (int iy = 0; iy < n; ++iy) {
        at(iy, 0) = 0.0;
        at(iy, n - 1) = 0.0;
    }
}

Field sample_field(const Grid& g, const std::function<double(double)>& f) {
    if (g.ndim != 1) throw ConfigError("1d sampler on a 2d grid");
    Field out(g);
    for (int i = 0; i < g.n; ++i) out.at(i) = f(g.coord(i));
    return out;
}

Field sample_field(const Grid& g, const std::function<double(double, double)>& f) {
    if (g.ndim != 2) throw ConfigError("2d sampler on a 1d grid");
    Field out(g);
    for (int iy = 0; iy < g.n; ++iy)
        for (int ix = 0; ix < g.n; ++ix) out.at(iy, ix) = f(g.coord(ix), g.coord(iy));
    return out;
}

double norm_l2(const Field& f) {
    double s = 0.0;
    for (double v : f.values) s += v * v;
    return std::sqrt(f.grid.cell_volume() * s);
}

double dot_l2(const Field& f, const Field& g) {
    double s = 0.0;
    for (size_t i = 0; i < f.values.size(); ++i) s += f.values[i] * g.values[i];
    return f.grid.cell_volume() * s;
}

double norm_linf(const Field& f) {
    double m = 0.0;
    for (double v : f.values) m = std::max(m, std::abs(v));
    return m;
}

double rel_error(std::span<const double> a, std::span<const double> b) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        num += d * d;
        den += b[i] * b[i];
    }
    if (den == 0.0) throw NumericalError("rel_error: zero reference norm");
    return std::sqrt(num / den);
}

double rel_error(const Field& a, const Field& b) {
    return rel_error(std::span<const double>(a.values), std::span<const double>(b.values));
}

Field operator+(const Field& a, const Field& b) {
    Field r = a;
    for (size_t i = 0; i < r.values.size(); ++i) r.values[i] += b.values[i];
    return r;
}

Field operator-(const Field& a, const Field& b) {
    Field r = a;
    for (size_t i = 0; i < r.values.size(); ++i) r.values[i] -= b.values[i];
    return r;
}

Field operator*(double c, const Field& a) {
    Field r = a;
    for (double& v : r.values) v *= c;
    return r;
}

// ---------------------------------------------------------------------------

Field laplacian2d(const Field& u) {
    if (u.grid.ndim != 2) throw ConfigError("laplacian2d needs a 2d field");
    const int n = u.grid.n;
    const double ih2 = 1.0 / (u.grid.h() * u.grid.h());
    Field out(u.grid);
    for (int iy = 1; iy < n - 1; ++iy)
        for (int ix = 1; ix < n - 1; ++ix)
            out.at(iy, ix) = ih2 * (u.at(iy, ix - 1) + u.at(iy, ix + 1) + u.at(iy - 1, ix) +
                                    u.at(iy + 1, ix) - 4.0 * u.at(iy, ix));
    return out;
}

Field boundary_distance_mask(const Grid& g) {
    Field d(g);
    if (g.ndim == 1) {
        for (int i = 0; i < g.n; ++i) {
            const double x = g.coord(i);
            d.at(i) = std::min(x - g.a, g.b - x);
        }
    } else {
        for (int iy = 0; iy < g.n; ++iy)
            for (int ix = 0; ix < g.n; ++ix) {
                const double x = g.coord(ix), y = g.coord(iy);
                d.at(iy, ix) = std::min(std::min(x - g.a, g.b - x), std::min(y - g.a, g.b - y));
            }
    }
    const double mx = norm_linf(d);
    if (mx > 0.0)
        for (double& v : d.values) v /= mx;
    return d;
}

namespace {

// -lap(u) on interior points, zero Dirichlet outside.
void apply_neg_laplacian(const Field& u, Field& out) {
    const int n = u.grid.n;
    const double ih2 = 1.0 / (u.grid.h() * u.grid.h());
    for (int iy = 1; iy < n - 1; ++iy)
        for (int ix = 1; ix < n - 1; ++ix)
            out.at(iy, ix) = ih2 * (4.0 * u.at(iy, ix) - u.at(iy, ix - 1) - u.at(iy, ix + 1) -
                                    u.at(iy - 1, ix) - u.at(iy + 1, ix));
}

double interior_dot(const Field& a, const Field& b) {
    const int n = a.grid.n;
    double s = 0.0;
    for (int iy = 1; iy < n - 1; ++iy)
        for (int ix = 1; ix < n - 1; ++ix) s += a.at(iy, ix) * b.at(iy, ix);
    return s;
}

}  // namespace

Field solve_poisson(const Field& m, double tol) {
    if (m.grid.ndim != 2) throw ConfigError("solve_poisson needs a 2d field");
    if (tol <= 0.0) throw ConfigError("solve_poisson: tol must be positive");
    const int n = m.grid.n;
    Field x(m.grid), r(m.grid), p(m.grid), ap(m.grid);
    for (int iy = 1; iy < n - 1; ++iy)
        for (int ix = 1; ix < n - 1; ++ix) r.at(iy, ix) = m.at(iy, ix);
    p = r;
    double rs = interior_dot(r, r);
    const double stop = tol * tol * rs;
    if (rs == 0.0) return x;
    const int max_iter = 20 * n + 100;
    for (int it = 0; it < max_iter; ++it) {
        apply_neg_laplacian(p, ap);
        const double alpha = rs / interior_dot(p, ap);
        for (int iy = 1; iy < n - 1; ++iy)
            for (int ix = 1; ix < n - 1; ++ix) {
                x.at(iy, ix) += alpha * p.at(iy, ix);
                r.at(iy, ix) -= alpha * ap.at(iy, ix);
            }
        const double rs_new = interior_dot(r, r);
        if (rs_new <= stop) return x;
        const double beta = rs_new / rs;
        rs = rs_new;
        for (int iy = 1; iy < n - 1; ++iy)
            for (int ix = 1; ix < n - 1; ++ix) p.at(iy, ix) = r.at(iy, ix) + beta * p.at(iy, ix);
    }
    throw NumericalError("solve_poisson: CG did not reach tol " + std::to_string(tol) +
                         " in " + std::to_string(max_iter) +
                         " iterations; residual " + std::to_string(std::sqrt(rs)));
}

int wave_steps(const PdeSpec& spec, const Grid& g) {
    if (spec.wave_nt > 0) return spec.wave_nt;
    const double dt_max = spec.wave_cfl * g.h() / spec.wave_speed;
    return static_cast<int>(std::ceil(spec.wave_T / dt_max));
}

std::vector<Field> solve_wave(const Field& m, const PdeSpec& spec) {
    const Grid& g = m.grid;
    if (g.ndim != 1) throw ConfigError("solve_wave needs a 1d field");
    const int nt = wave_steps(spec, g);
    const double dt = spec.wave_T / nt;
    const double h = g.h(), c = spec.wave_speed;
    if (dt > 0.5 * h / c + 1e-15)
        throw NumericalError("solve_wave: dt " + std::to_string(dt) + " violates dt <= 0.5 h/a = " +
                             std::to_string(0.5 * h / c) + "; increase nt");
    const int n = g.n;
    const double c2 = c * c, ih2 = 1.0 / (h * h);
    auto source = [](double u) { return u + u * u * u; };

    std::vector<Field> traj;
    traj.reserve(static_cast<size_t>(nt) + 1);
    Field u0(g);  // u(0,x) = 0
    traj.push_back(u0);
    Field u1(g);
    for (int i = 1; i < n - 1; ++i) {
        const double uxx = ih2 * (u0.at(i - 1) - 2.0 * u0.at(i) + u0.at(i + 1));
        u1.at(i) = u0.at(i) + dt * m.at(i) + 0.5 * dt * dt * (c2 * uxx - source(u0.at(i)));
    }
    traj.push_back(u1);
    for (int step = 1; step < nt; ++step) {
        const Field& prev = traj[traj.size() - 2];
        const Field& cur = traj.back();
        Field next(g);
        for (int i = 1; i < n - 1; ++i) {
            const double uxx = ih2 * (cur.at(i - 1) - 2.0 * cur.at(i) + cur.at(i + 1));
            next.at(i) = 2.0 * cur.at(i) - prev.at(i) + dt * dt * (c2 * uxx - source(cur.at(i)));
        }
        traj.push_back(std::move(next));
    }
    return traj;
}

std::vector<Field> burgers_step_traced(const Field& u, const Field& m, const PdeSpec& spec) {
    const Grid& g = u.grid;
    if (g.ndim != 1) throw ConfigError("burgers_step needs a 1d field");
    if (spec.substeps < 1) throw ConfigError("burgers_step: substeps must be >= 1");
    const int n = g.n;
    const double h = g.h();
    const double dt = spec.burgers_dt / spec.substeps;
    if (dt > 0.9 * h * h / (2.0 * spec.nu))
        throw NumericalError("burgers_step: dt " + std::to_string(dt) +
                             " violates the diffusion limit " + std::to_string(0.9 * h * h / (2.0 * spec.nu)) +
                             "; increase substeps");
    std::vector<Field> trace;
    trace.reserve(static_cast<size_t>(spec.substeps) + 1);
    trace.push_back(u);
    trace.back().zero_boundary();
    for (int s = 0; s < spec.substeps; ++s) {
        const Field& cur = trace.back();
        double umax = norm_linf(cur);
        if (umax > 1e3)
            throw NumericalError("burgers_step: |u| grew to " + std::to_string(umax) + "; unstable");
        if (umax > 0.0 && dt > 0.9 * h / umax)
            throw NumericalError("burgers_step: dt " + std::to_string(dt) +
                                 " violates the convective limit " + std::to_string(0.9 * h / umax) +
                                 " at |u| = " + std::to_string(umax) + "; increase substeps");
        Field next(g);
        for (int i = 1; i < n - 1; ++i) {
            const double ui = cur.at(i);
            const double ux = ui > 0.0 ? (ui - cur.at(i - 1)) / h : (cur.at(i + 1) - ui) / h;
            const double uxx = (cur.at(i - 1) - 2.0 * ui + cur.at(i + 1)) / (h * h);
            next.at(i) = ui + dt * (-ui * ux + spec.nu * uxx + m.at(i));
        }
        next.zero_boundary();
        trace.push_back(std::move(next));
    }
    return trace;
}

Field burgers_step(const Field& u, const Field& m, const PdeSpec& spec) {
    return burgers_step_traced(u, m, spec).back();
}

// ---------------------------------------------------------------------------

Field sample_fourier_control(Rng& rng, int max_freq, const Grid& g) {
    if (max_freq < 1) throw ConfigError("sample_fourier_control: max_freq must be >= 1");
    if (g.ndim != 2) throw ConfigError("sample_fourier_control needs a 2d grid");
    std::vector<double> c(static_cast<size_t>(max_freq) * max_freq);
    for (double& v : c) v = rng.uniform(-1.0, 1.0);
    const double pi = std::numbers::pi;
    Field out(g);
    for (int iy = 0; iy < g.n; ++iy)
        for (int ix = 0; ix < g.n; ++ix) {
            const double x = g.coord(ix), y = g.coord(iy);
            double s = 0.0;
            for (int j = 1; j <= max_freq; ++j)
                for (int k = 1; k <= max_freq; ++k)
                    s += c[static_cast<size_t>(j - 1) * max_freq + (k - 1)] *
                         std::sin(j * pi * x) * std::sin(k * pi * y);
            out.at(iy, ix) = s;
        }
    out.zero_boundary();
    return out;
}

namespace {

void add_gaussian(Field& f, double amp, double mu, double sigma) {
    const Grid& g = f.grid;
    for (int i = 0; i < g.n; ++i) {
        const double d = g.coord(i) - mu;
        f.at(i) += amp * std::exp(-d * d / (2.0 * sigma * sigma));
    }
}

}  // namespace

Field sample_gaussian_pulse(Rng& rng, const Grid& g) {
    if (g.ndim != 1) throw ConfigError("sample_gaussian_pulse needs a 1d grid");
    const double amp = rng.uniform(0.5, 2.0);
    const double mu = rng.uniform(0.2, 0.8);
    const double sigma = rng.uniform(0.05, 0.15);
    Field out(g);
    add_gaussian(out, amp, mu, sigma);
    out.zero_boundary();
    return out;
}

Field sample_gaussian_bumps(Rng& rng, const Grid& g, int k) {
    if (g.ndim != 1) throw ConfigError("sample_gaussian_bumps needs a 1d grid");
    if (k < 0 || k > 7) throw ConfigError("sample_gaussian_bumps: k must be in [0,7]");
    Field out(g);
    for (int j = 0; j < k; ++j) {
        const double amp = rng.uniform(-1.0, 1.0);
        const double mu = rng.uniform(0.2, 0.8);
        const double sigma = rng.uniform(0.05, 0.15);
        add_gaussian(out, amp, mu, sigma);
    }
    out.zero_boundary();
    return out;
}

Field burgers_initial(const TwoGaussianParams& p, const Grid& g) {
    if (g.ndim != 1) throw ConfigError("burgers_initial needs a 1d grid");
    Field out(g);
    add_gaussian(out, p.amp_left, p.center_left, p.sigma_left);
    add_gaussian(out, -p.amp_right, p.center_right, p.sigma_right);
    out.zero_boundary();
    return out;
}

Field burgers_initial(Rng& rng, const Grid& g) {
    TwoGaussianParams p;
    p.amp_left = rng.uniform(0.5, 1.5);
    p.center_left = rng.uniform(0.2, 0.4);
    p.sigma_left = rng.uniform(0.05, 0.12);
    p.amp_right = rng.uniform(0.5, 1.5);
    p.center_right = rng.uniform(0.6, 0.8);
    p.sigma_right = rng.uniform(0.05, 0.12);
    return burgers_initial(p, g);
}

}  // namespace pdectrl
