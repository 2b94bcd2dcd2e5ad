#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pdectrl/bench.hpp"
#include "pdectrl/errors.hpp"
#include "pdectrl/controller.hpp"
#include "pdectrl/lbfgs.hpp"

using namespace pdectrl;

namespace {

// f(x) = 1/2 ||x - c||^2
ObjectiveFn shifted_quadratic(std::vector<double> c) {
    return [c = std::move(c)](std::span<const double> x, std::span<double> g,
                              ObjectiveParts* parts) {
        double f = 0.0;
        for (size_t i = 0; i < x.size(); ++i) {
            g[i] = x[i] - c[i];
            f += 0.5 * g[i] * g[i];
        }
        if (parts) *parts = {f, 0.0};
        return f;
    };
}

ObjectiveFn rosenbrock() {
    return [](std::span<const double> x, std::span<double> g, ObjectiveParts* parts) {
        const double a = 1.0, b = 100.0;
        const double f = (a - x[0]) * (a - x[0]) + b * (x[1] - x[0] * x[0]) * (x[1] - x[0] * x[0]);
        g[0] = -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]);
        g[1] = 2.0 * b * (x[1] - x[0] * x[0]);
        if (parts) *parts = {f, 0.0};
        return f;
    };
}

}  // namespace

TEST_CASE("quadratic converges to the center") {
    Rng rng(3);
    std::vector<double> c(40), x0(40);
    for (auto& v : c) v = rng.uniform(-2, 2);
    for (auto& v : x0) v = rng.uniform(-2, 2);
    LbfgsConfig cfg;
    cfg.max_iters = 20;
    cfg.tolerance_change = 1e-12;
    LbfgsResult res = lbfgs_minimize(shifted_quadratic(c), x0, cfg);
    double err = 0.0;
    for (size_t i = 0; i < c.size(); ++i) err = std::max(err, std::abs(res.x[i] - c[i]));
    CHECK(err <= 1e-8);
    CHECK(res.iterations <= 20);
}

TEST_CASE("zero gradient at the start returns immediately") {
    std::vector<double> c{1.0, 2.0};
    LbfgsConfig cfg;
    LbfgsResult res = lbfgs_minimize(shifted_quadratic(c), c, cfg);
    CHECK(res.x == c);
    CHECK(res.iterations == 0);
    CHECK(res.converged);
}

TEST_CASE("rosenbrock from the classic start") {
    LbfgsConfig cfg;
    cfg.max_iters = 200;
    cfg.tolerance_change = 1e-14;
    LbfgsResult res = lbfgs_minimize(rosenbrock(), {-1.2, 1.0}, cfg);
    CHECK(res.f <= 1e-8);
    CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(res.x[1] == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("history is monotone non-increasing") {
    LbfgsConfig cfg;
    cfg.max_iters = 150;
    LbfgsResult res = lbfgs_minimize(rosenbrock(), {-1.2, 1.0}, cfg);
    for (size_t i = 1; i < res.history.size(); ++i)
        CHECK(res.history[i].f <= res.history[i - 1].f);
    // never above the initial objective
    CHECK(res.f <= res.history.front().f);
}

TEST_CASE("objective scaling leaves the iterate sequence unchanged") {
    // Wolfe tests, the two-loop metric and the 1/|g|_1 normalization of the
    // first trial step are all scale invariant, so minimizing 10f from the
    // same start visits the same iterates (the first accepted step length
    // shrinks by 10 to cancel the 10x direction).
    Rng rng(7);
    std::vector<double> c(12), x0(12);
    for (auto& v : c) v = rng.uniform(-2, 2);
    for (auto& v : x0) v = rng.uniform(3, 5);  // gradient 1-norm > 1 at x0
    auto f1 = shifted_quadratic(c);
    ObjectiveFn f10 = [&f1](std::span<const double> x, std::span<double> g, ObjectiveParts* p) {
        double f = f1(x, g, p);
        for (auto& v : g) v *= 10.0;
        return 10.0 * f;
    };
    LbfgsConfig cfg;
    cfg.max_iters = 12;
    cfg.tolerance_change = 0.0;
    LbfgsResult r1 = lbfgs_minimize(f1, x0, cfg);
    LbfgsResult r10 = lbfgs_minimize(f10, x0, cfg);
    REQUIRE(r1.history.size() == r10.history.size());
    for (size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r10.history[i].f == doctest::Approx(10.0 * r1.history[i].f).epsilon(1e-9));
        if (i == 1) CHECK(r10.history[i].step == doctest::Approx(r1.history[i].step / 10.0).epsilon(1e-9));
        // later steps agree up to line-search tie-breaking once the gradient
        // is at rounding level, so only the objective values are compared
    }
    double dx = 0.0;
    for (size_t i = 0; i < x0.size(); ++i) dx = std::max(dx, std::abs(r1.x[i] - r10.x[i]));
    CHECK(dx <= 1e-9);
}

TEST_CASE("box bounds are satisfied exactly") {
    Rng rng(9);
    std::vector<double> c(10), x0(10), lo(10, -0.25), hi(10, 0.25);
    for (auto& v : c) v = rng.uniform(-2, 2);  // many targets outside the box
    for (auto& v : x0) v = rng.uniform(-0.2, 0.2);
    LbfgsConfig cfg;
    cfg.max_iters = 50;
    LbfgsResult res = lbfgs_minimize(shifted_quadratic(c), x0, cfg, lo, hi);
    for (size_t i = 0; i < res.x.size(); ++i) {
        CHECK(res.x[i] >= -0.25);
        CHECK(res.x[i] <= 0.25);
        // the constrained optimum of a separable quadratic is the clamped center
        CHECK(res.x[i] == doctest::Approx(std::clamp(c[i], -0.25, 0.25)).epsilon(1e-6));
    }
}

TEST_CASE("non-finite trial points shrink the step instead of failing") {
    // f blows up outside |x| < 2; line search must recover
    ObjectiveFn f = [](std::span<const double> x, std::span<double> g, ObjectiveParts*) {
        if (std::abs(x[0]) >= 2.0) return std::numeric_limits<double>::quiet_NaN();
        const double d = x[0] - 1.5;
        g[0] = d;
        return 0.5 * d * d;
    };
    LbfgsConfig cfg;
    cfg.lr = 100.0;  // force overshooting trials
    cfg.max_iters = 30;
    LbfgsResult res = lbfgs_minimize(f, {0.0}, cfg);
    CHECK(res.x[0] == doctest::Approx(1.5).epsilon(1e-6));
}

TEST_CASE("invalid configs are rejected") {
    LbfgsConfig bad;
    bad.c1 = 0.95;  // violates c1 < c2
    CHECK_THROWS_AS(lbfgs_minimize(shifted_quadratic({0.0}), {1.0}, bad), ConfigError);
    LbfgsConfig bad2;
    bad2.memory = 0;
    CHECK_THROWS_AS(lbfgs_minimize(shifted_quadratic({0.0}), {1.0}, bad2), ConfigError);
}

// ---------------------------------------------------------------------------
// controller objectives
// ---------------------------------------------------------------------------

namespace {

SteadyArch tiny_arch(int n) {
    SteadyArch a;
    a.ndim = 2;
    a.n = n;
    a.latent = (n / 2) * (n / 2);
    a.kernel = 3;
    a.enc_channels = {2, 2};
    a.enc_strides = {2, 1};
    a.dec_channels = {2, 1};
    a.dec_up_before = {0, 1};
    return a;
}

}  // namespace

TEST_CASE("steady objective basics") {
    const int n = 16;
    OperatorSurrogate s = OperatorSurrogate::build(tiny_arch(n), 21);
    Grid g = s.grid();
    ControlProblem prob;
    prob.pde.kind = PdeKind::Poisson;
    prob.alpha = 0.0;
    prob.lambda2 = 0.0;
    // target = the surrogate's own output -> J_obj(m0) = 0 at alpha = 0
    Rng rng(4);
    Field m0 = sample_fourier_control(rng, 3, g);
    prob.target = s.predict_state(m0);
    CHECK(j_obj_steady(s, prob, m0) <= 1e-18);

    // lambda2 linearity: J_total(a) + J_total(b) - J_obj = J_total(a+b)
    prob.alpha = 1e-4;
    ControlProblem pa = prob, pb = prob, pab = prob;
    pa.lambda2 = 0.3;
    pb.lambda2 = 0.5;
    pab.lambda2 = 0.8;
    const double ja = j_total(s, pa, m0), jb = j_total(s, pb, m0), jobj = j_obj_steady(s, prob, m0),
                 jab = j_total(s, pab, m0);
    CHECK(ja + jb - jobj == doctest::Approx(jab).epsilon(1e-12));

    // zero-norm control rejected by the reconstruction term
    Field zero(g);
    CHECK_THROWS_AS(j_rec(s, zero), NumericalError);
}

TEST_CASE("phase-2 gradient passes grad_check on a small problem") {
    const int n = 16;
    OperatorSurrogate s = OperatorSurrogate::build(tiny_arch(n), 23);
    Grid g = s.grid();
    ControlProblem prob;
    prob.pde.kind = PdeKind::Poisson;
    prob.alpha = 1e-4;
    prob.lambda2 = 0.01;
    prob.target = poisson_target_field(g);
    Rng rng(5);
    Field m0 = sample_fourier_control(rng, 3, g);

    auto f = [&](Tape& t, Tensor m) -> Tensor {
        BoundParams b = s.bind(t, false);
        Tensor u = s.predict_state(t, b, m);
        Tensor target = t.leaf_view(s.input_shape(), prob.target.values.data(), false);
        const double vol = g.cell_volume();
        Tensor jobj = scale(sum(square(sub(u, target))), 0.5 * vol);
        jobj = add(jobj, scale(sum(square(m)), 0.5 * prob.alpha * vol));
        Tensor jrec = relative_error_graph(t, s.reconstruct_control(t, b, m), m);
        return add(jobj, scale(jrec, prob.lambda2));
    };
    CHECK(grad_check(f, s.input_shape(), m0.values, 1e-5) <= 1e-4);
}

TEST_CASE("phase-2 steady: self-consistent target is recovered") {
    const int n = 16;
    OperatorSurrogate s = OperatorSurrogate::build(tiny_arch(n), 25);
    Grid g = s.grid();
    Rng rng(6);
    Field m_true = sample_fourier_control(rng, 3, g);
    ControlProblem prob;
    prob.pde.kind = PdeKind::Poisson;
    prob.alpha = 0.0;
    prob.lambda2 = 0.0;
    prob.target = s.predict_state(m_true);

    Field m_init = 0.5 * sample_fourier_control(rng, 3, g);
    LbfgsConfig cfg;
    cfg.max_iters = 150;
    cfg.tolerance_change = 1e-12;
    Phase2Result res = phase2_steady(s, prob, m_init, cfg);
    CHECK(res.opt.f <= 1e-6);
    CHECK(res.opt.history.front().f > res.opt.f);
}

TEST_CASE("time objective weights combine as configured") {
    TimeArch arch;
    arch.n = 16;
    arch.hidden = {4, 6, 4};
    arch.latent_channels = 2;
    arch.transition_kernel = 5;
    TimeSurrogate ts = TimeSurrogate::build(arch, 27);
    TimeControlProblem prob;
    prob.pde.kind = PdeKind::Burgers;
    prob.pde.substeps = 10;
    prob.full_grid = make_grid_1d(18);
    prob.steps = 2;
    prob.alpha = 0.01;
    Rng rng(8);
    prob.u0.resize(16);
    prob.target.resize(16);
    for (auto* v : {&prob.u0, &prob.target})
        for (double& x : *v) x = rng.uniform(-0.5, 0.5);
    std::vector<std::vector<double>> controls(2, std::vector<double>(16));
    for (auto& c : controls)
        for (double& x : c) x = rng.uniform(-0.5, 0.5);

    double jobj = 0.0, jrec = 0.0;
    prob.jobj_weight = 10.0;
    prob.jrec_weight = 0.3;
    const double total = j_total_time(ts, prob, controls, &jobj, &jrec);
    CHECK(total == doctest::Approx(10.0 * jobj + 0.3 * jrec).epsilon(1e-12));
}

TEST_CASE("phase-2 time gradient passes grad_check") {
    TimeArch arch;
    arch.n = 12;
    arch.hidden = {3, 4, 3};
    arch.latent_channels = 2;
    arch.transition_kernel = 5;
    TimeSurrogate ts = TimeSurrogate::build(arch, 29);
    TimeControlProblem prob;
    prob.pde.kind = PdeKind::Burgers;
    prob.full_grid = make_grid_1d(14);
    prob.steps = 2;
    prob.alpha = 0.01;
    prob.jobj_weight = 10.0;
    prob.jrec_weight = 0.3;
    Rng rng(9);
    prob.u0.resize(12);
    prob.target.resize(12);
    for (auto* v : {&prob.u0, &prob.target})
        for (double& x : *v) x = rng.uniform(-0.5, 0.5);
    std::vector<double> flat(24);
    for (double& x : flat) x = rng.uniform(-0.5, 0.5);

    // check the rollout objective against central FD through an ObjectiveFn
    // mirroring phase2_time's graph
    ObjectiveFn obj = [&](std::span<const double> x, std::span<double> grad,
                          ObjectiveParts* parts) -> double {
        Tape tape;
        BoundParams b = ts.bind(tape, false);
        Tensor u0 = tape.leaf_view({1, 12}, prob.u0.data(), false);
        std::vector<Tensor> leaves;
        for (int j = 0; j < 2; ++j) leaves.push_back(tape.leaf_view({1, 12}, x.data() + 12 * j, true));
        auto states = rollout_graph(tape, ts, b, u0, leaves);
        Tensor target = tape.leaf_view({1, 12}, prob.target.data(), false);
        const double h = prob.full_grid.h();
        Tensor jo = scale(sum(square(sub(states.back(), target))), 0.5 * h);
        Tensor pen = add(sum(square(leaves[0])), sum(square(leaves[1])));
        jo = add(jo, scale(pen, 0.5 * prob.alpha * h * prob.pde.burgers_dt));
        Tensor jr = relative_error_graph(tape, ts.reconstruct_state(tape, b, states[0]), states[0]);
        jr = add(jr, relative_error_graph(tape, ts.reconstruct_state(tape, b, states[1]), states[1]));
        jr = add(jr, relative_error_graph(tape, ts.reconstruct_control(tape, b, leaves[0]), leaves[0]));
        jr = add(jr, relative_error_graph(tape, ts.reconstruct_control(tape, b, leaves[1]), leaves[1]));
        Tensor tot = add(scale(jo, prob.jobj_weight), scale(jr, prob.jrec_weight));
        tape.backward(tot);
        for (int j = 0; j < 2; ++j) {
            auto gj = leaves[j].grad();
            std::copy(gj.begin(), gj.end(), grad.begin() + 12 * j);
        }
        if (parts) *parts = {jo.scalar(), jr.scalar()};
        return tot.scalar();
    };

    std::vector<double> g_ad(24);
    obj(flat, g_ad, nullptr);
    const double eps = 1e-6;
    double worst = 0.0;
    std::vector<double> gtmp(24);
    for (int i = 0; i < 24; ++i) {
        std::vector<double> xp = flat, xm = flat;
        xp[i] += eps;
        xm[i] -= eps;
        const double fd = (obj(xp, gtmp, nullptr) - obj(xm, gtmp, nullptr)) / (2 * eps);
        double denom = std::max({1.0, std::abs(fd), std::abs(g_ad[i])});
        worst = std::max(worst, std::abs(fd - g_ad[i]) / denom);
    }
    CHECK(worst <= 1e-4);

    // consistency with j_total_time and phase2_time's own objective
    std::vector<std::vector<double>> controls{{flat.begin(), flat.begin() + 12},
                                              {flat.begin() + 12, flat.end()}};
    const double direct = j_total_time(ts, prob, controls, nullptr, nullptr);
    const double via_obj = obj(flat, gtmp, nullptr);
    CHECK(direct == doctest::Approx(via_obj).epsilon(1e-12));
}

TEST_CASE("phase-2 time: self-consistent target gives a small objective") {
    TimeArch arch;
    arch.n = 16;
    arch.hidden = {4, 6, 4};
    arch.latent_channels = 2;
    arch.transition_kernel = 5;
    TimeSurrogate ts = TimeSurrogate::build(arch, 31);
    TimeControlProblem prob;
    prob.pde.kind = PdeKind::Burgers;
    prob.full_grid = make_grid_1d(18);
    prob.steps = 3;
    prob.alpha = 0.0;
    prob.jobj_weight = 1.0;
    prob.jrec_weight = 0.0;
    Rng rng(11);
    prob.u0.resize(16);
    for (double& x : prob.u0) x = rng.uniform(-0.5, 0.5);
    // target reachable by zero controls
    std::vector<std::vector<double>> zero_controls(3, std::vector<double>(16, 0.0));
    prob.target = rollout(ts, prob.u0, zero_controls).back();

    std::vector<std::vector<double>> m_init(3, std::vector<double>(16));
    for (auto& c : m_init)
        for (double& x : c) x = rng.uniform(-0.05, 0.05);
    LbfgsConfig cfg;
    cfg.max_iters = 120;
    cfg.lr = 0.5;
    cfg.tolerance_change = 1e-12;
    Phase2TimeResult res = phase2_time(ts, prob, m_init, cfg);
    CHECK(res.opt.f <= 1e-4);
}
