#include "pdectrl/controller.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>

#include "pdectrl/errors.hpp"

namespace pdectrl {

namespace {

// Builds the steady phase-2 objective on a fresh tape; m enters as a leaf so
// the backward pass yields dJ/dm with the parameters frozen.
struct SteadyGraph {
    Tensor total, jobj, jrec, m_leaf;
};

SteadyGraph build_steady_graph(Tape& tape, const OperatorSurrogate& s, const ControlProblem& prob,
                               const double* m_data, bool with_grad) {
    SteadyGraph gph;
    const auto in_shape = s.input_shape();
    const double vol = prob.target.grid.cell_volume();
    BoundParams b = s.bind(tape, false);
    gph.m_leaf = tape.leaf_view(in_shape, m_data, with_grad);
    Tensor u = s.predict_state(tape, b, gph.m_leaf);
    Tensor target = tape.leaf_view(in_shape, prob.target.values.data(), false);
    gph.jobj = scale(sum(square(sub(u, target))), 0.5 * vol);
    if (prob.alpha != 0.0)
        gph.jobj = add(gph.jobj, scale(sum(square(gph.m_leaf)), 0.5 * prob.alpha * vol));
    gph.jrec = relative_error_graph(tape, s.reconstruct_control(tape, b, gph.m_leaf), gph.m_leaf);
    gph.total = add(gph.jobj, scale(gph.jrec, prob.lambda2));
    return gph;
}

}  // namespace

double j_obj_steady(const OperatorSurrogate& s, const ControlProblem& prob, const Field& m) {
    Tape tape;
    return build_steady_graph(tape, s, prob, m.values.data(), false).jobj.scalar();
}

double j_rec(const OperatorSurrogate& s, const Field& m) {
    Tape tape;
    BoundParams b = s.bind(tape, false);
    Tensor m_t = tape.leaf_view(s.input_shape(), m.values.data(), false);
    return relative_error_graph(tape, s.reconstruct_control(tape, b, m_t), m_t).scalar();
}

double j_total(const OperatorSurrogate& s, const ControlProblem& prob, const Field& m) {
    Tape tape;
    return build_steady_graph(tape, s, prob, m.values.data(), false).total.scalar();
}

Phase2Result phase2_steady(const OperatorSurrogate& s, const ControlProblem& prob,
                           const Field& m_init, const LbfgsConfig& cfg) {
    if (m_init.grid.num_points() != prob.target.grid.num_points())
        throw ConfigError("phase2_steady: control and target grids differ");
    const auto t0 = std::chrono::steady_clock::now();

    ObjectiveFn obj = [&](std::span<const double> x, std::span<double> grad,
                          ObjectiveParts* parts) -> double {
        Tape tape;
        try {
            SteadyGraph gph = build_steady_graph(tape, s, prob, x.data(), true);
            tape.backward(gph.total);
            auto g = gph.m_leaf.grad();
            std::copy(g.begin(), g.end(), grad.begin());
            if (parts) {
                parts->obj = gph.jobj.scalar();
                parts->rec = gph.jrec.scalar();
            }
            return gph.total.scalar();
        } catch (const NumericalError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };

    std::span<const double> lo, hi;
    if (prob.lower) lo = prob.lower->values;
    if (prob.upper) hi = prob.upper->values;
    LbfgsResult opt = lbfgs_minimize(obj, m_init.values, cfg, lo, hi);

    Phase2Result out;
    out.control = Field(m_init.grid);
    out.control.values = opt.x;
    out.predicted_state = s.predict_state(out.control);
    out.opt = std::move(opt);
    out.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct TimeGraph {
    Tensor total, jobj, jrec;
    std::vector<Tensor> control_leaves;
    std::vector<Tensor> states;
};

TimeGraph build_time_graph(Tape& tape, const TimeSurrogate& ts, const TimeControlProblem& prob,
                           const double* controls_flat, bool with_grad) {
    const int n = ts.arch.n;
    if (static_cast<int>(prob.u0.size()) != n || static_cast<int>(prob.target.size()) != n)
        throw ConfigError("phase2_time: state size does not match the surrogate");
    const double h = prob.full_grid.h();
    const double dt = prob.pde.burgers_dt;

    TimeGraph gph;
    BoundParams b = ts.bind(tape, false);
    Tensor u0 = tape.leaf_view({1, n}, prob.u0.data(), false);
    gph.control_leaves.reserve(static_cast<size_t>(prob.steps));
    for (int j = 0; j < prob.steps; ++j)
        gph.control_leaves.push_back(
            tape.leaf_view({1, n}, controls_flat + static_cast<size_t>(j) * n, with_grad));
    gph.states = rollout_graph(tape, ts, b, u0, gph.control_leaves);

    Tensor target = tape.leaf_view({1, n}, prob.target.data(), false);
    gph.jobj = scale(sum(square(sub(gph.states.back(), target))), 0.5 * h);
    if (prob.alpha != 0.0) {
        Tensor pen;
        for (int j = 0; j < prob.steps; ++j) {
            Tensor pj = sum(square(gph.control_leaves[static_cast<size_t>(j)]));
            pen = (j == 0) ? pj : add(pen, pj);
        }
        gph.jobj = add(gph.jobj, scale(pen, 0.5 * prob.alpha * h * dt));
    }

    Tensor rec;
    for (size_t j = 0; j < gph.states.size(); ++j) {
        Tensor r = relative_error_graph(tape, ts.reconstruct_state(tape, b, gph.states[j]),
                                        gph.states[j]);
        rec = (j == 0) ? r : add(rec, r);
    }
    for (const Tensor& mj : gph.control_leaves)
        rec = add(rec, relative_error_graph(tape, ts.reconstruct_control(tape, b, mj), mj));
    gph.jrec = rec;

    gph.total = add(scale(gph.jobj, prob.jobj_weight), scale(gph.jrec, prob.jrec_weight));
    return gph;
}

std::vector<double> flatten_controls(std::span<const std::vector<double>> controls, int n) {
    std::vector<double> flat;
    flat.reserve(controls.size() * static_cast<size_t>(n));
    for (const auto& c : controls) {
        if (static_cast<int>(c.size()) != n)
            throw ConfigError("control slice size does not match the surrogate");
        flat.insert(flat.end(), c.begin(), c.end());
    }
    return flat;
}

}  // namespace

double j_total_time(const TimeSurrogate& ts, const TimeControlProblem& prob,
                    std::span<const std::vector<double>> controls, double* jobj_out,
                    double* jrec_out) {
    if (static_cast<int>(controls.size()) != prob.steps)
        throw ConfigError("j_total_time: expected " + std::to_string(prob.steps) + " control slices");
    std::vector<double> flat = flatten_controls(controls, ts.arch.n);
    Tape tape;
    TimeGraph gph = build_time_graph(tape, ts, prob, flat.data(), false);
    if (jobj_out) *jobj_out = gph.jobj.scalar();
    if (jrec_out) *jrec_out = gph.jrec.scalar();
    return gph.total.scalar();
}

Phase2TimeResult phase2_time(const TimeSurrogate& ts, const TimeControlProblem& prob,
                             std::span<const std::vector<double>> m_init, const LbfgsConfig& cfg) {
    if (static_cast<int>(m_init.size()) != prob.steps)
        throw ConfigError("phase2_time: expected " + std::to_string(prob.steps) + " control slices");
    const int n = ts.arch.n;
    const auto t0 = std::chrono::steady_clock::now();

    ObjectiveFn obj = [&](std::span<const double> x, std::span<double> grad,
                          ObjectiveParts* parts) -> double {
        Tape tape;
        try {
            TimeGraph gph = build_time_graph(tape, ts, prob, x.data(), true);
            tape.backward(gph.total);
            for (int j = 0; j < prob.steps; ++j) {
                auto g = gph.control_leaves[static_cast<size_t>(j)].grad();
                std::copy(g.begin(), g.end(), grad.begin() + static_cast<size_t>(j) * n);
            }
            if (parts) {
                parts->obj = gph.jobj.scalar();
                parts->rec = gph.jrec.scalar();
            }
            return gph.total.scalar();
        } catch (const NumericalError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };

    LbfgsResult opt = lbfgs_minimize(obj, flatten_controls(m_init, n), cfg);

    Phase2TimeResult out;
    out.controls.resize(static_cast<size_t>(prob.steps));
    for (int j = 0; j < prob.steps; ++j)
        out.controls[static_cast<size_t>(j)]
            .assign(opt.x.begin() + static_cast<size_t>(j) * n,
                    opt.x.begin() + static_cast<size_t>(j + 1) * n);
    out.states = rollout(ts, prob.u0, out.controls);
    out.opt = std::move(opt);
    out.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace pdectrl
