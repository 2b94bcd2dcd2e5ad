#include "pdectrl/losses.hpp"

#include <cmath>
#include <functional>

#include "pdectrl/errors.hpp"

namespace pdectrl {

Tensor relative_error_graph(Tape& tape, Tensor u, Tensor ref) {
    if (u.shape() != ref.shape())
        throw std::invalid_argument("relative_error: shape mismatch " + shape_str(u.shape()) +
                                    " vs " + shape_str(ref.shape()));
    Tensor den = l2norm(ref);
    if (den.value()[0] == 0.0) throw NumericalError("relative_error: zero reference norm");
    return div(l2norm(sub(u, ref)), den);
}

namespace {

// 5-point Laplacian kernel [[0,1,0],[1,-4,1],[0,1,0]] / h^2.
std::vector<double> laplacian_kernel(double h) {
    const double s = 1.0 / (h * h);
    return {0.0, s, 0.0, s, -4.0 * s, s, 0.0, s, 0.0};
}

// 1 on interior points, 0 on the boundary ring.
std::vector<double> interior_mask(int n) {
    std::vector<double> m(static_cast<size_t>(n) * n, 0.0);
    for (int y = 1; y < n - 1; ++y)
        for (int x = 1; x < n - 1; ++x) m[static_cast<size_t>(y) * n + x] = 1.0;
    return m;
}

}  // namespace

Tensor residual_poisson_graph(Tape& tape, const OperatorSurrogate& s, const BoundParams& b,
                              Tensor m_t, const Field& m) {
    if (!s.arch.enforce_dirichlet)
        throw ConfigError("residual loss requires Dirichlet enforcement on the state decoder");
    const int n = s.arch.n;
    const double h = m.grid.h();
    Tensor u = s.predict_state(tape, b, m_t);
    Tensor kern = tape.leaf({1, 1, 3, 3}, laplacian_kernel(h), false);
    Tensor lap = conv2d(u, kern, std::nullopt, 1, 1);
    Tensor r = sub(scale(lap, -1.0), m_t);
    static thread_local std::vector<double> mask;
    static thread_local int mask_n = 0;
    if (mask_n != n) {
        mask = interior_mask(n);
        mask_n = n;
    }
    Tensor mask_t = tape.leaf_view({1, n, n}, mask.data(), false);
    Tensor r_int = mul(r, mask_t);
    return scale(sum(square(r_int)), h * h);
}

Tensor phase1_loss_sum_graph(Tape& tape, const OperatorSurrogate& s, const BoundParams& b,
                             std::span<const Field> controls, std::span<const Field> states,
                             Phase1Mode mode, const LossWeights& w) {
    if (controls.empty()) throw std::invalid_argument("phase1 loss: empty batch");
    if (mode == Phase1Mode::Supervised && states.size() != controls.size())
        throw std::invalid_argument("phase1 loss: supervised mode requires one label per control");
    Tensor total;
    const auto in_shape = s.input_shape();
    for (size_t i = 0; i < controls.size(); ++i) {
        Tensor m_t = tape.leaf_view(in_shape, controls[i].values.data(), false);
        Tensor base;
        if (mode == Phase1Mode::Supervised) {
            Tensor u = s.predict_state(tape, b, m_t);
            Tensor label = tape.leaf_view(in_shape, states[i].values.data(), false);
            base = relative_error_graph(tape, u, label);
        } else {
            base = residual_poisson_graph(tape, s, b, m_t, controls[i]);
        }
        Tensor rec = relative_error_graph(tape, s.reconstruct_control(tape, b, m_t), m_t);
        Tensor li = add(base, scale(rec, w.lambda1));
        total = (i == 0) ? li : add(total, li);
    }
    return total;
}

namespace {

double batch_mean(const OperatorSurrogate& s, std::span<const Field> controls,
                  const std::function<double(Tape&, const BoundParams&, Tensor, size_t)>& per_sample) {
    if (controls.empty()) throw std::invalid_argument("loss: empty batch");
    double acc = 0.0;
    const auto in_shape = s.input_shape();
    for (size_t i = 0; i < controls.size(); ++i) {
        Tape tape;
        BoundParams b = s.bind(tape, false);
        Tensor m_t = tape.leaf_view(in_shape, controls[i].values.data(), false);
        acc += per_sample(tape, b, m_t, i);
    }
    return acc / static_cast<double>(controls.size());
}

}  // namespace

double loss_supervised(const OperatorSurrogate& s, std::span<const Field> controls,
                       std::span<const Field> states) {
    if (states.size() != controls.size())
        throw std::invalid_argument("loss_supervised: need one label per control");
    return batch_mean(s, controls, [&](Tape& tape, const BoundParams& b, Tensor m_t, size_t i) {
        Tensor u = s.predict_state(tape, b, m_t);
        Tensor label = tape.leaf_view(s.input_shape(), states[i].values.data(), false);
        return relative_error_graph(tape, u, label).scalar();
    });
}

double loss_residual_poisson(const OperatorSurrogate& s, std::span<const Field> controls) {
    return batch_mean(s, controls, [&](Tape& tape, const BoundParams& b, Tensor m_t, size_t i) {
        return residual_poisson_graph(tape, s, b, m_t, controls[i]).scalar();
    });
}

double loss_reconstruction(const OperatorSurrogate& s, std::span<const Field> controls) {
    return batch_mean(s, controls, [&](Tape& tape, const BoundParams& b, Tensor m_t, size_t) {
        return relative_error_graph(tape, s.reconstruct_control(tape, b, m_t), m_t).scalar();
    });
}

double loss_total_phase1(const OperatorSurrogate& s, std::span<const Field> controls,
                         std::span<const Field> states, Phase1Mode mode, const LossWeights& w) {
    double base = (mode == Phase1Mode::Supervised) ? loss_supervised(s, controls, states)
                                                   : loss_residual_poisson(s, controls);
    return base + w.lambda1 * loss_reconstruction(s, controls);
}

double eval_state_error(const OperatorSurrogate& s, std::span<const Field> controls,
                        std::span<const Field> states) {
    if (states.size() != controls.size())
        throw std::invalid_argument("eval_state_error: need one label per control");
    return batch_mean(s, controls, [&](Tape& tape, const BoundParams& b, Tensor m_t, size_t i) {
        Tensor u = s.predict_state(tape, b, m_t);
        Tensor label = tape.leaf_view(s.input_shape(), states[i].values.data(), false);
        return relative_error_graph(tape, u, label).scalar();
    });
}

// ---------------------------------------------------------------------------

Tensor time_tuple_loss_graph(Tape& tape, const TimeSurrogate& ts, const BoundParams& b,
                             std::span<const double> u_t, std::span<const double> m_t,
                             std::span<const double> u_next, const LossWeights& w) {
    const int n = ts.arch.n;
    Tensor ut = tape.leaf_view({1, n}, u_t.data(), false);
    Tensor mt = tape.leaf_view({1, n}, m_t.data(), false);
    Tensor unext = tape.leaf_view({1, n}, u_next.data(), false);

    Tensor v = ts.encode_state(tape, b, ut);
    Tensor g = ts.encode_control(tape, b, mt);
    Tensor v_pred = ts.transition(tape, b, v, g);
    Tensor v_true = ts.encode_state(tape, b, unext);
    Tensor u_pred = ts.decode_state(tape, b, v_pred);

    Tensor latent_term = relative_error_graph(tape, v_pred, v_true);
    Tensor state_term = relative_error_graph(tape, u_pred, unext);
    Tensor state_rec = relative_error_graph(tape, ts.decode_state(tape, b, v), ut);
    Tensor control_rec = relative_error_graph(tape, ts.decode_control(tape, b, g), mt);

    Tensor total = scale(latent_term, w.w_latent);
    total = add(total, scale(state_term, w.w_state));
    total = add(total, scale(state_rec, w.w_state_rec));
    total = add(total, scale(control_rec, w.w_control_rec));
    return total;
}

std::vector<Tensor> rollout_graph(Tape& tape, const TimeSurrogate& ts, const BoundParams& b,
                                  Tensor u0, std::span<const Tensor> controls) {
    if (controls.empty()) throw std::invalid_argument("rollout: need at least one control");
    std::vector<Tensor> states;
    states.reserve(controls.size());
    Tensor v = ts.encode_state(tape, b, u0);
    for (const Tensor& m : controls) {
        Tensor g = ts.encode_control(tape, b, m);
        v = ts.transition(tape, b, v, g);
        states.push_back(ts.decode_state(tape, b, v));
    }
    return states;
}

std::vector<std::vector<double>> rollout(const TimeSurrogate& ts, std::span<const double> u0,
                                         std::span<const std::vector<double>> controls) {
    Tape tape;
    BoundParams b = ts.bind(tape, false);
    const int n = ts.arch.n;
    Tensor u0t = tape.leaf_view({1, n}, u0.data(), false);
    std::vector<Tensor> mts;
    mts.reserve(controls.size());
    for (const auto& m : controls) mts.push_back(tape.leaf_view({1, n}, m.data(), false));
    auto states = rollout_graph(tape, ts, b, u0t, mts);
    std::vector<std::vector<double>> out;
    out.reserve(states.size());
    for (const Tensor& s : states) {
        auto v = s.value();
        out.emplace_back(v.begin(), v.end());
    }
    return out;
}

double eval_one_step_error(const TimeSurrogate& ts, std::span<const double> u_t,
                           std::span<const double> m_t, std::span<const double> u_next) {
    Tape tape;
    BoundParams b = ts.bind(tape, false);
    const int n = ts.arch.n;
    Tensor ut = tape.leaf_view({1, n}, u_t.data(), false);
    Tensor mt = tape.leaf_view({1, n}, m_t.data(), false);
    Tensor unext = tape.leaf_view({1, n}, u_next.data(), false);
    Tensor v = ts.encode_state(tape, b, ut);
    Tensor g = ts.encode_control(tape, b, mt);
    Tensor u_pred = ts.decode_state(tape, b, ts.transition(tape, b, v, g));
    return relative_error_graph(tape, u_pred, unext).scalar();
}

}  // namespace pdectrl
