#include "pdectrl/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#if defined(__AVX512F__)
#define PDECTRL_AVX512 1
#include <immintrin.h>
#endif

namespace pdectrl {

void tanh_array(const double* in, double* out, int n);  // fastmath.cpp

namespace {

int numel_of(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) n *= d;
    return n;
}

void check_same_tape(const Tensor& a, const Tensor& b) {
    if (a.tape != b.tape)
        throw std::invalid_argument("operands live on different tapes");
}

[[noreturn]] void shape_error(const char* op, const std::vector<int>& a, const std::vector<int>& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

const std::vector<int>& Tensor::shape() const { return tape->node(id).shape; }
int Tensor::numel() const { return tape->node(id).n; }

std::span<const double> Tensor::value() const {
    const auto& nd = tape->node(id);
    return {nd.vptr, static_cast<size_t>(nd.n)};
}

std::span<const double> Tensor::grad() const {
    const auto& nd = tape->node(id);
    if (static_cast<int>(nd.grad.size()) != nd.n)
        throw std::logic_error("grad not populated; call backward first");
    return {nd.grad.data(), nd.grad.size()};
}

double Tensor::scalar() const {
    const auto& nd = tape->node(id);
    if (nd.n != 1) throw std::invalid_argument("scalar() on tensor of shape " + shape_str(nd.shape));
    return nd.vptr[0];
}

Tensor Tape::make_node(std::vector<int> shape, bool needs_grad) {
    Node nd;
    nd.n = numel_of(shape);
    nd.shape = std::move(shape);
    nd.storage.resize(static_cast<size_t>(nd.n));
    nd.vptr = nd.storage.data();
    nd.needs_grad = needs_grad;
    nodes_.push_back(std::move(nd));
    return Tensor{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::leaf(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    int n = numel_of(shape);
    if (static_cast<int>(data.size()) != n)
        throw std::invalid_argument("leaf: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    Node nd;
    nd.n = n;
    nd.shape = std::move(shape);
    nd.storage = std::move(data);
    nd.vptr = nd.storage.data();
    nd.needs_grad = requires_grad;
    nodes_.push_back(std::move(nd));
    return Tensor{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::leaf_view(std::vector<int> shape, const double* data, bool requires_grad) {
    Node nd;
    nd.n = numel_of(shape);
    nd.shape = std::move(shape);
    nd.vptr = data;
    nd.needs_grad = requires_grad;
    nodes_.push_back(std::move(nd));
    return Tensor{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor Tape::scalar_leaf(double v, bool requires_grad) {
    return leaf({1}, {v}, requires_grad);
}

std::span<double> Tape::mutable_value(int id) {
    Node& nd = nodes_[static_cast<size_t>(id)];
    return {nd.storage.data(), nd.storage.size()};
}

std::span<double> Tape::grad_buf(int id) {
    Node& nd = nodes_[static_cast<size_t>(id)];
    if (static_cast<int>(nd.grad.size()) != nd.n) nd.grad.assign(static_cast<size_t>(nd.n), 0.0);
    return {nd.grad.data(), nd.grad.size()};
}

void Tape::backward(const Tensor& loss) {
    if (loss.tape != this) throw std::invalid_argument("loss lives on a different tape");
    const Node& ln = node(loss.id);
    if (ln.n != 1)
        throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(ln.shape));
    grad_buf(loss.id)[0] += 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& nd = nodes_[static_cast<size_t>(i)];
        if (!nd.needs_grad || nd.grad.empty() || !nd.backprop) continue;
        nd.backprop();
    }
}

void backward(Tensor loss) { loss.tape->backward(loss); }

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

enum class Bin { Add, Sub, Mul, Div };

Tensor binary_op(Bin op, const char* name, Tensor a, Tensor b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    const int na = a.numel(), nb = b.numel();
    const bool a_scalar = (na == 1), b_scalar = (nb == 1);
    if (!(sa == sb || a_scalar || b_scalar)) shape_error(name, sa, sb);

    const bool ag = t.node(a.id).needs_grad, bg = t.node(b.id).needs_grad;
    Tensor r = t.make_node(a_scalar ? sb : sa, ag || bg);
    const int n = r.numel();
    auto out = t.mutable_value(r.id);
    const double* pa = t.node(a.id).vptr;
    const double* pb = t.node(b.id).vptr;
    const int ia = a_scalar ? 0 : 1, ib = b_scalar ? 0 : 1;
    switch (op) {
        case Bin::Add: for (int i = 0; i < n; ++i) out[i] = pa[i * ia] + pb[i * ib]; break;
        case Bin::Sub: for (int i = 0; i < n; ++i) out[i] = pa[i * ia] - pb[i * ib]; break;
        case Bin::Mul: for (int i = 0; i < n; ++i) out[i] = pa[i * ia] * pb[i * ib]; break;
        case Bin::Div: for (int i = 0; i < n; ++i) out[i] = pa[i * ia] / pb[i * ib]; break;
    }
    if (!r.tape->node(r.id).needs_grad) return r;

    Tape* tp = &t;
    int aid = a.id, bid = b.id, rid = r.id;
    t.node(r.id).backprop = [tp, op, aid, bid, rid, n, ia, ib, ag, bg]() {
        const double* g = tp->node(rid).grad.data();
        const double* pa = tp->node(aid).vptr;
        const double* pb = tp->node(bid).vptr;
        if (ag) {
            auto ga = tp->grad_buf(aid);
            switch (op) {
                case Bin::Add:
                case Bin::Sub:
                    if (ia) for (int i = 0; i < n; ++i) ga[i] += g[i];
                    else    for (int i = 0; i < n; ++i) ga[0] += g[i];
                    break;
                case Bin::Mul:
                    if (ia) for (int i = 0; i < n; ++i) ga[i] += g[i] * pb[i * ib];
                    else    for (int i = 0; i < n; ++i) ga[0] += g[i] * pb[i * ib];
                    break;
                case Bin::Div:
                    if (ia) for (int i = 0; i < n; ++i) ga[i] += g[i] / pb[i * ib];
                    else    for (int i = 0; i < n; ++i) ga[0] += g[i] / pb[i * ib];
                    break;
            }
        }
        if (bg) {
            auto gb = tp->grad_buf(bid);
            switch (op) {
                case Bin::Add:
                    if (ib) for (int i = 0; i < n; ++i) gb[i] += g[i];
                    else    for (int i = 0; i < n; ++i) gb[0] += g[i];
                    break;
                case Bin::Sub:
                    if (ib) for (int i = 0; i < n; ++i) gb[i] -= g[i];
                    else    for (int i = 0; i < n; ++i) gb[0] -= g[i];
                    break;
                case Bin::Mul:
                    if (ib) for (int i = 0; i < n; ++i) gb[i] += g[i] * pa[i * ia];
                    else    for (int i = 0; i < n; ++i) gb[0] += g[i] * pa[i * ia];
                    break;
                case Bin::Div: {
                    if (ib) for (int i = 0; i < n; ++i) { double d = pb[i]; gb[i] -= g[i] * pa[i * ia] / (d * d); }
                    else    { double d = pb[0]; for (int i = 0; i < n; ++i) gb[0] -= g[i] * pa[i * ia] / (d * d); }
                    break;
                }
            }
        }
    };
    return r;
}

enum class Un { Tanh, Relu, Square };

Tensor unary_op(Un op, Tensor a) {
    Tape& t = *a.tape;
    const bool ag = t.node(a.id).needs_grad;
    Tensor r = t.make_node(a.shape(), ag);
    const int n = r.numel();
    auto out = t.mutable_value(r.id);
    const double* pa = t.node(a.id).vptr;
    switch (op) {
        case Un::Tanh:   tanh_array(pa, out.data(), n); break;
        case Un::Relu:   for (int i = 0; i < n; ++i) out[i] = pa[i] > 0.0 ? pa[i] : 0.0; break;
        case Un::Square: for (int i = 0; i < n; ++i) out[i] = pa[i] * pa[i]; break;
    }
    if (!ag) return r;
    Tape* tp = &t;
    int aid = a.id, rid = r.id;
    t.node(r.id).backprop = [tp, op, aid, rid, n]() {
        const double* g = tp->node(rid).grad.data();
        const double* pa = tp->node(aid).vptr;
        const double* y = tp->node(rid).vptr;
        auto ga = tp->grad_buf(aid);
        switch (op) {
            case Un::Tanh:   for (int i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]); break;
            case Un::Relu:   for (int i = 0; i < n; ++i) ga[i] += pa[i] > 0.0 ? g[i] : 0.0; break;
            case Un::Square: for (int i = 0; i < n; ++i) ga[i] += 2.0 * pa[i] * g[i]; break;
        }
    };
    return r;
}

}  // namespace

Tensor add(Tensor a, Tensor b) { return binary_op(Bin::Add, "add", a, b); }
Tensor sub(Tensor a, Tensor b) { return binary_op(Bin::Sub, "sub", a, b); }
Tensor mul(Tensor a, Tensor b) { return binary_op(Bin::Mul, "mul", a, b); }
Tensor div(Tensor a, Tensor b) { return binary_op(Bin::Div, "div", a, b); }
Tensor tanh(Tensor a) { return unary_op(Un::Tanh, a); }
Tensor relu(Tensor a) { return unary_op(Un::Relu, a); }
Tensor square(Tensor a) { return unary_op(Un::Square, a); }

Tensor scale(Tensor a, double c) {
    Tape& t = *a.tape;
    const bool ag = t.node(a.id).needs_grad;
    Tensor r = t.make_node(a.shape(), ag);
    const int n = r.numel();
    auto out = t.mutable_value(r.id);
    const double* pa = t.node(a.id).vptr;
    for (int i = 0; i < n; ++i) out[i] = c * pa[i];
    if (!ag) return r;
    Tape* tp = &t;
    int aid = a.id, rid = r.id;
    t.node(r.id).backprop = [tp, aid, rid, n, c]() {
        const double* g = tp->node(rid).grad.data();
        auto ga = tp->grad_buf(aid);
        for (int i = 0; i < n; ++i) ga[i] += c * g[i];
    };
    return r;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(Tensor a) {
    Tape& t = *a.tape;
    const bool ag = t.node(a.id).needs_grad;
    Tensor r = t.make_node({1}, ag);
    const int n = a.numel();
    const double* pa = t.node(a.id).vptr;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += pa[i];
    t.mutable_value(r.id)[0] = s;
    if (!ag) return r;
    Tape* tp = &t;
    int aid = a.id, rid = r.id;
    t.node(r.id).backprop = [tp, aid, rid, n]() {
        const double g = tp->node(rid).grad[0];
        auto ga = tp->grad_buf(aid);
        for (int i = 0; i < n; ++i) ga[i] += g;
    };
    return r;
}

Tensor mean(Tensor a) { return scale(sum(a), 1.0 / a.numel()); }

Tensor l2norm(Tensor a) {
    Tape& t = *a.tape;
    const bool ag = t.node(a.id).needs_grad;
    Tensor r = t.make_node({1}, ag);
    const int n = a.numel();
    const double* pa = t.node(a.id).vptr;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += pa[i] * pa[i];
    const double nrm = std::sqrt(s);
    t.mutable_value(r.id)[0] = nrm;
    if (!ag) return r;
    Tape* tp = &t;
    int aid = a.id, rid = r.id;
    t.node(r.id).backprop = [tp, aid, rid, n]() {
        const double g = tp->node(rid).grad[0];
        const double nrm = tp->node(rid).vptr[0];
        auto ga = tp->grad_buf(aid);
        if (nrm == 0.0) return;  // subgradient choice: 0 at the origin
        const double* pa = tp->node(aid).vptr;
        const double inv = g / nrm;
        for (int i = 0; i < n; ++i) ga[i] += inv * pa[i];
    };
    return r;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(Tensor a, std::vector<int> shape) {
    Tape& t = *a.tape;
    if (numel_of(shape) != a.numel())
        throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                                    " changes element count");
    const bool ag = t.node(a.id).needs_grad;
    Tensor r = t.make_node(std::move(shape), ag);
    const int n = r.numel();
    auto out = t.mutable_value(r.id);
    std::memcpy(out.data(), t.node(a.id).vptr, sizeof(double) * static_cast<size_t>(n));
    if (!ag) return r;
    Tape* tp = &t;
    int aid = a.id, rid = r.id;
    t.node(r.id).backprop = [tp, aid, rid, n]() {
        const double* g = tp->node(rid).grad.data();
        auto ga = tp->grad_buf(aid);
        for (int i = 0; i < n; ++i) ga[i] += g[i];
    };
    return r;
}

Tensor concat(Tensor a, Tensor b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    auto sa = a.shape(), sb = b.shape();
    if (sa.size() != sb.size() || sa.empty()) shape_error("concat", sa, sb);
    for (size_t i = 1; i < sa.size(); ++i)
        if (sa[i] != sb[i]) shape_error("concat", sa, sb);
    std::vector<int> rs = sa;
    rs[0] += sb[0];
    const bool ag = t.node(a.id).needs_grad, bg = t.node(b.id).needs_grad;
    Tensor r = t.make_node(std::move(rs), ag || bg);
    const int na = a.numel(), nb = b.numel();
    auto out = t.mutable_value(r.id);
    std::memcpy(out.data(), t.node(a.id).vptr, sizeof(double) * static_cast<size_t>(na));
    std::memcpy(out.data() + na, t.node(b.id).vptr, sizeof(double) * static_cast<size_t>(nb));
    if (!t.node(r.id).needs_grad) return r;
    Tape* tp = &t;
    int aid = a.id, bid = b.id, rid = r.id;
    t.node(r.id).backprop = [tp, aid, bid, rid, na, nb, ag, bg]() {
        const double* g = tp->node(rid).grad.data();
        if (ag) {
            auto ga = tp->grad_buf(aid);
            for (int i = 0; i < na; ++i) ga[i] += g[i];
        }
        if (bg) {
            auto gb = tp->grad_buf(bid);
            for (int i = 0; i < nb; ++i) gb[i] += g[na + i];
        }
    };
    return r;
}

Tensor upsample2x(Tensor a) {
    Tape& t = *a.tape;
    const auto& s = a.shape();
    if (s.size() != 2 && s.size() != 3)
        throw std::invalid_argument("upsample2x expects [C,N] or [C,H,W], got " + shape_str(s));
    const bool ag = t.node(a.id).needs_grad;
    const bool two_d = (s.size() == 3);
    std::vector<int> rs = two_d ? std::vector<int>{s[0], 2 * s[1], 2 * s[2]}
                                : std::vector<int>{s[0], 2 * s[1]};
    Tensor r = t.make_node(std::move(rs), ag);
    const double* in = t.node(a.id).vptr;
    auto out = t.mutable_value(r.id);
    const int C = s[0];
    if (two_d) {
        const int H = s[1], W = s[2];
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double v = in[(c * H + y) * W + x];
                    double* o = out.data() + ((c * 2 * H + 2 * y) * 2 * W + 2 * x);
                    o[0] = v; o[1] = v;
                    o[2 * W] = v; o[2 * W + 1] = v;
                }
    } else {
        const int N = s[1];
        for (int c = 0; c < C; ++c)
            for (int x = 0; x < N; ++x) {
                double v = in[c * N + x];
                out[c * 2 * N + 2 * x] = v;
                out[c * 2 * N + 2 * x + 1] = v;
            }
    }
    if (!ag) return r;
    Tape* tp = &t;
    int aid = a.id, rid = r.id;
    std::vector<int> sh = s;
    t.node(r.id).backprop = [tp, aid, rid, sh, two_d]() {
        const double* g = tp->node(rid).grad.data();
        auto ga = tp->grad_buf(aid);
        const int C = sh[0];
        if (two_d) {
            const int H = sh[1], W = sh[2];
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        const double* gi = g + ((c * 2 * H + 2 * y) * 2 * W + 2 * x);
                        ga[(c * H + y) * W + x] += gi[0] + gi[1] + gi[2 * W] + gi[2 * W + 1];
                    }
        } else {
            const int N = sh[1];
            for (int c = 0; c < C; ++c)
                for (int x = 0; x < N; ++x)
                    ga[c * N + x] += g[c * 2 * N + 2 * x] + g[c * 2 * N + 2 * x + 1];
        }
    };
    return r;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

Tensor linear(Tensor x, Tensor weight, Tensor bias) {
    check_same_tape(x, weight);
    check_same_tape(x, bias);
    Tape& t = *x.tape;
    const auto& sx = x.shape();
    const auto& sw = weight.shape();
    const auto& sb = bias.shape();
    if (sx.size() != 1 || sw.size() != 2 || sb.size() != 1 || sw[1] != sx[0] || sb[0] != sw[0])
        throw std::invalid_argument("linear: x " + shape_str(sx) + ", W " + shape_str(sw) +
                                    ", b " + shape_str(sb) + " are inconsistent");
    const int N = sx[0], M = sw[0];
    const bool xg = t.node(x.id).needs_grad, wg = t.node(weight.id).needs_grad,
               bg = t.node(bias.id).needs_grad;
    Tensor r = t.make_node({M}, xg || wg || bg);
    const double* px = t.node(x.id).vptr;
    const double* pw = t.node(weight.id).vptr;
    const double* pb = t.node(bias.id).vptr;
    auto out = t.mutable_value(r.id);
#ifdef PDECTRL_AVX512
    for (int m = 0; m < M; ++m) {
        const double* row = pw + static_cast<size_t>(m) * N;
        __m512d a0 = _mm512_setzero_pd(), a1 = _mm512_setzero_pd();
        __m512d a2 = _mm512_setzero_pd(), a3 = _mm512_setzero_pd();
        int n = 0;
        for (; n + 32 <= N; n += 32) {
            a0 = _mm512_fmadd_pd(_mm512_loadu_pd(row + n), _mm512_loadu_pd(px + n), a0);
            a1 = _mm512_fmadd_pd(_mm512_loadu_pd(row + n + 8), _mm512_loadu_pd(px + n + 8), a1);
            a2 = _mm512_fmadd_pd(_mm512_loadu_pd(row + n + 16), _mm512_loadu_pd(px + n + 16), a2);
            a3 = _mm512_fmadd_pd(_mm512_loadu_pd(row + n + 24), _mm512_loadu_pd(px + n + 24), a3);
        }
        double s = pb[m] + _mm512_reduce_add_pd(_mm512_add_pd(_mm512_add_pd(a0, a1),
                                                              _mm512_add_pd(a2, a3)));
        for (; n < N; ++n) s += row[n] * px[n];
        out[m] = s;
    }
#else
    for (int m = 0; m < M; ++m) {
        const double* row = pw + static_cast<size_t>(m) * N;
        double s = pb[m];
        for (int n = 0; n < N; ++n) s += row[n] * px[n];
        out[m] = s;
    }
#endif
    if (!t.node(r.id).needs_grad) return r;
    Tape* tp = &t;
    int xid = x.id, wid = weight.id, bid = bias.id, rid = r.id;
    t.node(r.id).backprop = [tp, xid, wid, bid, rid, N, M, xg, wg, bg]() {
        const double* g = tp->node(rid).grad.data();
        const double* px = tp->node(xid).vptr;
        const double* pw = tp->node(wid).vptr;
        if (xg) {
            auto gx = tp->grad_buf(xid);
            for (int m = 0; m < M; ++m) {
                const double gm = g[m];
                const double* row = pw + static_cast<size_t>(m) * N;
                for (int n = 0; n < N; ++n) gx[n] += gm * row[n];
            }
        }
        if (wg) {
            auto gw = tp->grad_buf(wid);
            for (int m = 0; m < M; ++m) {
                const double gm = g[m];
                double* row = gw.data() + static_cast<size_t>(m) * N;
                for (int n = 0; n < N; ++n) row[n] += gm * px[n];
            }
        }
        if (bg) {
            auto gb = tp->grad_buf(bid);
            for (int m = 0; m < M; ++m) gb[m] += g[m];
        }
    };
    return r;
}

// ---------------------------------------------------------------------------
// convolutions (cross-correlation)
// ---------------------------------------------------------------------------

namespace {

// First/last output index o with 0 <= o*stride + k - pad < extent.
inline int out_lo(int k, int pad, int stride) {
    int d = pad - k;
    return d > 0 ? (d + stride - 1) / stride : 0;
}
inline int out_hi(int k, int pad, int stride, int extent, int out_extent) {
    int num = extent - 1 - k + pad;
    if (num < 0) return -1;
    int o = num / stride;
    return o < out_extent - 1 ? o : out_extent - 1;
}

// Valid output ranges per kernel offset, hoisted out of the hot loops.
struct TapBounds {
    std::vector<int> lo, hi;
    TapBounds(int K, int pad, int stride, int extent, int out_extent)
        : lo(static_cast<size_t>(K)), hi(static_cast<size_t>(K)) {
        for (int k = 0; k < K; ++k) {
            lo[static_cast<size_t>(k)] = out_lo(k, pad, stride);
            hi[static_cast<size_t>(k)] = out_hi(k, pad, stride, extent, out_extent);
        }
    }
};

// Zero-padded copy of a [C,H,W] plane stack with a one-pixel ring; turns the
// 3x3 stride-1 kernels below into unconditional shifted loads.
std::vector<double> pad_planes_1(const double* src, int C, int H, int W) {
    const int Hp = H + 2, Wp = W + 2;
    std::vector<double> out(static_cast<size_t>(C) * Hp * Wp, 0.0);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            std::memcpy(out.data() + (static_cast<size_t>(c) * Hp + y + 1) * Wp + 1,
                        src + (static_cast<size_t>(c) * H + y) * W, sizeof(double) * static_cast<size_t>(W));
    return out;
}

}  // namespace

#ifdef PDECTRL_AVX512
namespace {

// out[co][oy][ox] (+)= sum_{ci,ky,kx} K[ky,kx] * padded[ci][oy+ky][ox+kx]
// Kernel tap layout is parameterized so the same loop serves the forward pass
// and the (flipped-kernel, transposed-channel) input-gradient pass.
void corr2d_k3_avx(const double* padded, int Cin, int Wp, const double* kw, long k_outer_stride,
                   long k_inner_stride, bool flip, const double* bias, bool accumulate, double* out,
                   int Cout, int OH, int OW) {
    const int Hp_stride = Wp;  // one padded row
    for (int oc = 0; oc < Cout; ++oc) {
        const double b = bias ? bias[oc] : 0.0;
        const __m512d vb = _mm512_set1_pd(b);
        for (int oy = 0; oy < OH; ++oy) {
            double* orow = out + (static_cast<size_t>(oc) * OH + oy) * OW;
            for (int ox0 = 0; ox0 < OW; ox0 += 32) {
                __m512d acc[4];
                __mmask8 msk[4];
                int nb = 0;
                for (int blk = 0; blk < 4; ++blk) {
                    const int off = ox0 + blk * 8;
                    if (off >= OW) break;
                    const int rem = OW - off;
                    msk[blk] = rem >= 8 ? static_cast<__mmask8>(0xFF)
                                        : static_cast<__mmask8>((1u << rem) - 1);
                    acc[blk] = accumulate ? _mm512_maskz_loadu_pd(msk[blk], orow + off) : vb;
                    ++nb;
                }
                for (int ic = 0; ic < Cin; ++ic) {
                    const double* kp = kw + static_cast<size_t>(oc) * k_outer_stride +
                                       static_cast<size_t>(ic) * k_inner_stride;
                    const double* pbase =
                        padded + (static_cast<size_t>(ic) * (OH + 2) + oy) * Hp_stride;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* prow = pbase + static_cast<size_t>(ky) * Wp;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ki = flip ? (2 - ky) * 3 + (2 - kx) : ky * 3 + kx;
                            const __m512d w = _mm512_set1_pd(kp[ki]);
                            const double* src = prow + kx;
                            for (int blk = 0; blk < nb; ++blk)
                                acc[blk] = _mm512_fmadd_pd(
                                    w, _mm512_maskz_loadu_pd(msk[blk], src + ox0 + blk * 8),
                                    acc[blk]);
                        }
                    }
                }
                for (int blk = 0; blk < nb; ++blk)
                    _mm512_mask_storeu_pd(orow + ox0 + blk * 8, msk[blk], acc[blk]);
            }
        }
    }
}

// Even-index doubles p[0], p[2], ..., p[2*rem-2] in the low `rem` lanes.
inline __m512d even_lanes_masked(const double* p, int rem) {
    const unsigned cnt = 2u * static_cast<unsigned>(rem) - 1;
    const __mmask8 mlo = static_cast<__mmask8>(cnt >= 8 ? 0xFF : ((1u << cnt) - 1));
    const __mmask8 mhi = static_cast<__mmask8>(cnt > 8 ? ((1u << (cnt - 8)) - 1) : 0);
    const __m512d lo = _mm512_maskz_loadu_pd(mlo, p);
    const __m512d hi = _mm512_maskz_loadu_pd(mhi, p + 8);
    const __m512i perm = _mm512_set_epi64(14, 12, 10, 8, 6, 4, 2, 0);
    return _mm512_permutex2var_pd(lo, perm, hi);
}

// Stride-2 forward: out[oc][oy][ox] = b + sum K[ky,kx] * padded[ic][2oy+ky][2ox+kx]
void corr2d_k3s2_avx(const double* padded, int Ci, int Hp, int Wp, const double* kw,
                     const double* bias, double* out, int Co, int OH, int OW) {
    for (int oc = 0; oc < Co; ++oc) {
        const double b = bias ? bias[oc] : 0.0;
        const __m512d vb = _mm512_set1_pd(b);
        for (int oy = 0; oy < OH; ++oy) {
            double* orow = out + (static_cast<size_t>(oc) * OH + oy) * OW;
            for (int ox0 = 0; ox0 < OW; ox0 += 8) {
                const int rem = OW - ox0 >= 8 ? 8 : OW - ox0;
                const __mmask8 m = rem >= 8 ? static_cast<__mmask8>(0xFF)
                                            : static_cast<__mmask8>((1u << rem) - 1);
                __m512d acc = vb;
                for (int ic = 0; ic < Ci; ++ic) {
                    const double* kp = kw + (static_cast<size_t>(oc) * Ci + ic) * 9;
                    const double* pbase =
                        padded + (static_cast<size_t>(ic) * Hp + 2 * oy) * Wp;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* prow = pbase + static_cast<size_t>(ky) * Wp;
                        for (int kx = 0; kx < 3; ++kx) {
                            const __m512d w = _mm512_set1_pd(kp[ky * 3 + kx]);
                            acc = _mm512_fmadd_pd(
                                w, even_lanes_masked(prow + kx + 2 * ox0, rem), acc);
                        }
                    }
                }
                _mm512_mask_storeu_pd(orow + ox0, m, acc);
            }
        }
    }
}

// Stride-2 kernel gradient.
void corr2d_k3s2_kernel_grad_avx(const double* padded, int Ci, int Hp, int Wp, const double* gout,
                                 int Co, int OH, int OW, double* gk) {
    for (int oc = 0; oc < Co; ++oc) {
        const double* gplane = gout + static_cast<size_t>(oc) * OH * OW;
        for (int ic = 0; ic < Ci; ++ic) {
            const double* pbase = padded + static_cast<size_t>(ic) * Hp * Wp;
            __m512d acc[9];
            for (auto& a : acc) a = _mm512_setzero_pd();
            for (int oy = 0; oy < OH; ++oy) {
                const double* grow = gplane + static_cast<size_t>(oy) * OW;
                const double* prow = pbase + static_cast<size_t>(2 * oy) * Wp;
                for (int ox = 0; ox < OW; ox += 8) {
                    const int rem = OW - ox >= 8 ? 8 : OW - ox;
                    const __mmask8 m = rem >= 8 ? static_cast<__mmask8>(0xFF)
                                                : static_cast<__mmask8>((1u << rem) - 1);
                    const __m512d gv = _mm512_maskz_loadu_pd(m, grow + ox);
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* pr = prow + static_cast<size_t>(ky) * Wp + 2 * ox;
                        for (int kx = 0; kx < 3; ++kx)
                            acc[ky * 3 + kx] = _mm512_fmadd_pd(
                                gv, even_lanes_masked(pr + kx, rem), acc[ky * 3 + kx]);
                    }
                }
            }
            double* gkp = gk + (static_cast<size_t>(oc) * Ci + ic) * 9;
            for (int t = 0; t < 9; ++t) gkp[t] += _mm512_reduce_add_pd(acc[t]);
        }
    }
}

// gk[oc][ic][ky][kx] += sum_{oy,ox} gout[oc][oy][ox] * padded_in[ic][oy+ky][ox+kx]
void corr2d_k3_kernel_grad_avx(const double* padded, int Ci, int Wp, const double* gout, int Co,
                               int OH, int OW, double* gk) {
    for (int oc = 0; oc < Co; ++oc) {
        const double* gplane = gout + static_cast<size_t>(oc) * OH * OW;
        for (int ic = 0; ic < Ci; ++ic) {
            const double* pbase = padded + static_cast<size_t>(ic) * (OH + 2) * Wp;
            __m512d acc[9];
            for (auto& a : acc) a = _mm512_setzero_pd();
            for (int oy = 0; oy < OH; ++oy) {
                const double* grow = gplane + static_cast<size_t>(oy) * OW;
                const double* prow = pbase + static_cast<size_t>(oy) * Wp;
                for (int ox = 0; ox < OW; ox += 8) {
                    const int rem = OW - ox;
                    const __mmask8 m = rem >= 8 ? static_cast<__mmask8>(0xFF)
                                                : static_cast<__mmask8>((1u << rem) - 1);
                    const __m512d gv = _mm512_maskz_loadu_pd(m, grow + ox);
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* pr = prow + static_cast<size_t>(ky) * Wp + ox;
                        acc[ky * 3 + 0] =
                            _mm512_fmadd_pd(gv, _mm512_maskz_loadu_pd(m, pr + 0), acc[ky * 3 + 0]);
                        acc[ky * 3 + 1] =
                            _mm512_fmadd_pd(gv, _mm512_maskz_loadu_pd(m, pr + 1), acc[ky * 3 + 1]);
                        acc[ky * 3 + 2] =
                            _mm512_fmadd_pd(gv, _mm512_maskz_loadu_pd(m, pr + 2), acc[ky * 3 + 2]);
                    }
                }
            }
            double* gkp = gk + (static_cast<size_t>(oc) * Ci + ic) * 9;
            for (int t = 0; t < 9; ++t) gkp[t] += _mm512_reduce_add_pd(acc[t]);
        }
    }
}

}  // namespace
#endif  // PDECTRL_AVX512

namespace {

}  // namespace

Tensor conv2d(Tensor input, Tensor kernel, std::optional<Tensor> bias, int stride, int padding) {
    check_same_tape(input, kernel);
    Tape& t = *input.tape;
    const auto& si = input.shape();
    const auto& sk = kernel.shape();
    if (si.size() != 3 || sk.size() != 4)
        throw std::invalid_argument("conv2d: input " + shape_str(si) + ", kernel " + shape_str(sk));
    const int Ci = si[0], H = si[1], W = si[2];
    const int Co = sk[0], Kh = sk[2], Kw = sk[3];
    if (sk[1] != Ci) shape_error("conv2d channels", si, sk);
    if (Kh % 2 == 0 || Kw % 2 == 0)
        throw std::invalid_argument("conv2d: kernel extents must be odd, got " + shape_str(sk));
    if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
    const int OH = (H + 2 * padding - Kh) / stride + 1;
    const int OW = (W + 2 * padding - Kw) / stride + 1;
    if (OH <= 0 || OW <= 0)
        throw std::invalid_argument("conv2d: non-positive output extent for input " + shape_str(si) +
                                    " kernel " + shape_str(sk));
    bool biasg = false;
    if (bias) {
        check_same_tape(input, *bias);
        if (bias->shape() != std::vector<int>{Co})
            throw std::invalid_argument("conv2d: bias shape " + shape_str(bias->shape()));
        biasg = t.node(bias->id).needs_grad;
    }
    const bool ig = t.node(input.id).needs_grad, kg = t.node(kernel.id).needs_grad;
    Tensor r = t.make_node({Co, OH, OW}, ig || kg || biasg);
    const double* in = t.node(input.id).vptr;
    const double* kw = t.node(kernel.id).vptr;
    const double* pb = bias ? t.node(bias->id).vptr : nullptr;
    auto out = t.mutable_value(r.id);

#ifdef PDECTRL_AVX512
    if (stride == 1 && Kh == 3 && Kw == 3 && padding == 1) {
        const std::vector<double> padded = pad_planes_1(in, Ci, H, W);
        corr2d_k3_avx(padded.data(), Ci, W + 2, kw, static_cast<long>(Ci) * 9, 9, false, pb, false,
                      out.data(), Co, OH, OW);
        if (t.node(r.id).needs_grad) {
            Tape* tp = &t;
            const int iid = input.id, kid = kernel.id, bid = bias ? bias->id : -1, rid = r.id;
            t.node(r.id).backprop = [tp, iid, kid, bid, rid, Ci, H, W, Co, OH, OW, ig, kg, biasg]() {
                const double* g = tp->node(rid).grad.data();
                const double* in = tp->node(iid).vptr;
                const double* kw = tp->node(kid).vptr;
                if (ig) {
                    auto gin = tp->grad_buf(iid);
                    const std::vector<double> pg = pad_planes_1(g, Co, OH, OW);
                    corr2d_k3_avx(pg.data(), Co, OW + 2, kw, 9, static_cast<long>(Ci) * 9, true,
                                  nullptr, true, gin.data(), Ci, H, W);
                }
                if (kg) {
                    auto gk = tp->grad_buf(kid);
                    const std::vector<double> pin = pad_planes_1(in, Ci, H, W);
                    corr2d_k3_kernel_grad_avx(pin.data(), Ci, W + 2, g, Co, OH, OW, gk.data());
                }
                if (biasg) {
                    auto gb = tp->grad_buf(bid);
                    for (int oc = 0; oc < Co; ++oc) {
                        const double* gplane = g + static_cast<size_t>(oc) * OH * OW;
                        double acc = 0.0;
                        for (int i = 0; i < OH * OW; ++i) acc += gplane[i];
                        gb[oc] += acc;
                    }
                }
            };
        }
        return r;
    }
    if (stride == 2 && Kh == 3 && Kw == 3 && padding == 1) {
        const std::vector<double> padded = pad_planes_1(in, Ci, H, W);
        corr2d_k3s2_avx(padded.data(), Ci, H + 2, W + 2, kw, pb, out.data(), Co, OH, OW);
        if (t.node(r.id).needs_grad) {
            Tape* tp = &t;
            const int iid = input.id, kid = kernel.id, bid = bias ? bias->id : -1, rid = r.id;
            t.node(r.id).backprop = [tp, iid, kid, bid, rid, Ci, H, W, Co, OH, OW, ig, kg, biasg]() {
                const double* g = tp->node(rid).grad.data();
                const double* in = tp->node(iid).vptr;
                const double* kw = tp->node(kid).vptr;
                if (ig) {
                    // transposed stride-2 conv == stride-1 correlation of the
                    // zero-stuffed output gradient with the flipped kernel
                    auto gin = tp->grad_buf(iid);
                    const int Wp = W + 2;
                    std::vector<double> pgz(static_cast<size_t>(Co) * (H + 2) * Wp, 0.0);
                    for (int oc = 0; oc < Co; ++oc)
                        for (int oy = 0; oy < OH; ++oy) {
                            const double* grow = g + (static_cast<size_t>(oc) * OH + oy) * OW;
                            double* prow =
                                pgz.data() + (static_cast<size_t>(oc) * (H + 2) + 1 + 2 * oy) * Wp + 1;
                            for (int ox = 0; ox < OW; ++ox) prow[2 * ox] = grow[ox];
                        }
                    corr2d_k3_avx(pgz.data(), Co, Wp, kw, 9, static_cast<long>(Ci) * 9, true,
                                  nullptr, true, gin.data(), Ci, H, W);
                }
                if (kg) {
                    auto gk = tp->grad_buf(kid);
                    const std::vector<double> pin = pad_planes_1(in, Ci, H, W);
                    corr2d_k3s2_kernel_grad_avx(pin.data(), Ci, H + 2, W + 2, g, Co, OH, OW,
                                                gk.data());
                }
                if (biasg) {
                    auto gb = tp->grad_buf(bid);
                    for (int oc = 0; oc < Co; ++oc) {
                        const double* gplane = g + static_cast<size_t>(oc) * OH * OW;
                        double acc = 0.0;
                        for (int i = 0; i < OH * OW; ++i) acc += gplane[i];
                        gb[oc] += acc;
                    }
                }
            };
        }
        return r;
    }
#endif
    // Output rows accumulate in stack buffers (one store pass per row, no
    // aliasing); output channels go in pairs so each input row load feeds two
    // independent FMA chains.
    const TapBounds bx(Kw, padding, stride, W, OW);
    std::vector<double> rowbuf(2 * static_cast<size_t>(OW));
    for (int oc = 0; oc < Co; oc += 2) {
        const bool pair = (oc + 1 < Co);
        const double b0 = pb ? pb[oc] : 0.0;
        const double b1 = pair && pb ? pb[oc + 1] : 0.0;
        double* oplane0 = out.data() + static_cast<size_t>(oc) * OH * OW;
        double* oplane1 = pair ? oplane0 + static_cast<size_t>(OH) * OW : nullptr;
        const double* kbase0 = kw + static_cast<size_t>(oc) * Ci * Kh * Kw;
        const double* kbase1 = kbase0 + static_cast<size_t>(Ci) * Kh * Kw;
        for (int oy = 0; oy < OH; ++oy) {
            double* acc0 = rowbuf.data();
            double* acc1 = rowbuf.data() + OW;
            for (int ox = 0; ox < OW; ++ox) acc0[ox] = b0;
            for (int ox = 0; ox < OW; ++ox) acc1[ox] = b1;
            for (int ic = 0; ic < Ci; ++ic) {
                const double* iplane = in + static_cast<size_t>(ic) * H * W;
                const double* kp0 = kbase0 + static_cast<size_t>(ic) * Kh * Kw;
                const double* kp1 = kbase1 + static_cast<size_t>(ic) * Kh * Kw;
                for (int ky = 0; ky < Kh; ++ky) {
                    const int iy = oy * stride + ky - padding;
                    if (iy < 0 || iy >= H) continue;
                    const double* irow = iplane + static_cast<size_t>(iy) * W;
                    for (int kx = 0; kx < Kw; ++kx) {
                        const double w0 = kp0[ky * Kw + kx];
                        const double w1 = pair ? kp1[ky * Kw + kx] : 0.0;
                        const int ox0 = bx.lo[static_cast<size_t>(kx)];
                        const int ox1 = bx.hi[static_cast<size_t>(kx)];
                        const double* ir = irow + (kx - padding);
                        if (stride == 1) {
                            if (pair) {
                                for (int ox = ox0; ox <= ox1; ++ox) {
                                    const double v = ir[ox];
                                    acc0[ox] += w0 * v;
                                    acc1[ox] += w1 * v;
                                }
                            } else {
                                for (int ox = ox0; ox <= ox1; ++ox) acc0[ox] += w0 * ir[ox];
                            }
                        } else {
                            if (pair) {
                                for (int ox = ox0; ox <= ox1; ++ox) {
                                    const double v = ir[ox * stride];
                                    acc0[ox] += w0 * v;
                                    acc1[ox] += w1 * v;
                                }
                            } else {
                                for (int ox = ox0; ox <= ox1; ++ox) acc0[ox] += w0 * ir[ox * stride];
                            }
                        }
                    }
                }
            }
            double* orow0 = oplane0 + static_cast<size_t>(oy) * OW;
            for (int ox = 0; ox < OW; ++ox) orow0[ox] = acc0[ox];
            if (pair) {
                double* orow1 = oplane1 + static_cast<size_t>(oy) * OW;
                for (int ox = 0; ox < OW; ++ox) orow1[ox] = acc1[ox];
            }
        }
    }
    if (!t.node(r.id).needs_grad) return r;
    Tape* tp = &t;
    const int iid = input.id, kid = kernel.id, bid = bias ? bias->id : -1, rid = r.id;
    const int pad = padding, str = stride;
    t.node(r.id).backprop = [tp, iid, kid, bid, rid, Ci, H, W, Co, Kh, Kw, OH, OW, pad, str, ig, kg, biasg]() {
        const double* g = tp->node(rid).grad.data();
        const double* in = tp->node(iid).vptr;
        const double* kw = tp->node(kid).vptr;
        const TapBounds bx(Kw, pad, str, W, OW);
        if (ig) {
            auto gin = tp->grad_buf(iid);
            std::vector<double> rowbuf(2 * static_cast<size_t>(W));
            // valid (iy, ky) -> oy map, so the hot loops stay division-free
            std::vector<int> oy_of(static_cast<size_t>(H) * Kh, -1);
            for (int iy = 0; iy < H; ++iy)
                for (int ky = 0; ky < Kh; ++ky) {
                    const int num = iy - ky + pad;
                    if (num < 0 || num % str != 0) continue;
                    const int oy = num / str;
                    if (oy < OH) oy_of[static_cast<size_t>(iy) * Kh + ky] = oy;
                }
            for (int ic = 0; ic < Ci; ic += 2) {
                const bool pair = (ic + 1 < Ci);
                double* giplane0 = gin.data() + static_cast<size_t>(ic) * H * W;
                double* giplane1 = pair ? giplane0 + static_cast<size_t>(H) * W : nullptr;
                for (int iy = 0; iy < H; ++iy) {
                    double* acc0 = rowbuf.data();
                    double* acc1 = rowbuf.data() + W;
                    for (int ix = 0; ix < W; ++ix) acc0[ix] = 0.0;
                    for (int ix = 0; ix < W; ++ix) acc1[ix] = 0.0;
                    for (int oc = 0; oc < Co; ++oc) {
                        const double* gplane = g + static_cast<size_t>(oc) * OH * OW;
                        const double* kp0 = kw + (static_cast<size_t>(oc) * Ci + ic) * Kh * Kw;
                        const double* kp1 = pair ? kp0 + Kh * Kw : nullptr;
                        for (int ky = 0; ky < Kh; ++ky) {
                            const int oy = oy_of[static_cast<size_t>(iy) * Kh + ky];
                            if (oy < 0) continue;
                            const double* grow = gplane + static_cast<size_t>(oy) * OW;
                            for (int kx = 0; kx < Kw; ++kx) {
                                const double w0 = kp0[ky * Kw + kx];
                                const double w1 = pair ? kp1[ky * Kw + kx] : 0.0;
                                const int ox0 = bx.lo[static_cast<size_t>(kx)];
                                const int ox1 = bx.hi[static_cast<size_t>(kx)];
                                double* a0 = acc0 + (kx - pad);
                                double* a1 = acc1 + (kx - pad);
                                if (str == 1) {
                                    if (pair) {
                                        for (int ox = ox0; ox <= ox1; ++ox) {
                                            const double v = grow[ox];
                                            a0[ox] += w0 * v;
                                            a1[ox] += w1 * v;
                                        }
                                    } else {
                                        for (int ox = ox0; ox <= ox1; ++ox) a0[ox] += w0 * grow[ox];
                                    }
                                } else {
                                    if (pair) {
                                        for (int ox = ox0; ox <= ox1; ++ox) {
                                            const double v = grow[ox];
                                            a0[ox * str] += w0 * v;
                                            a1[ox * str] += w1 * v;
                                        }
                                    } else {
                                        for (int ox = ox0; ox <= ox1; ++ox) a0[ox * str] += w0 * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                    double* girow0 = giplane0 + static_cast<size_t>(iy) * W;
                    for (int ix = 0; ix < W; ++ix) girow0[ix] += acc0[ix];
                    if (pair) {
                        double* girow1 = giplane1 + static_cast<size_t>(iy) * W;
                        for (int ix = 0; ix < W; ++ix) girow1[ix] += acc1[ix];
                    }
                }
            }
        }
        if (kg) {
            auto gk = tp->grad_buf(kid);
            const TapBounds by(Kh, pad, str, H, OH);
            for (int oc = 0; oc < Co; ++oc) {
                const double* gplane = g + static_cast<size_t>(oc) * OH * OW;
                for (int ic = 0; ic < Ci; ++ic) {
                    const double* iplane = in + static_cast<size_t>(ic) * H * W;
                    double* gkplane = gk.data() + (static_cast<size_t>(oc) * Ci + ic) * Kh * Kw;
                    if (str == 1 && Kw == 3 && pad >= 1) {
                        // fused taps: one pass per row feeds all three kx dots
                        for (int ky = 0; ky < Kh; ++ky) {
                            const int oy0 = by.lo[static_cast<size_t>(ky)];
                            const int oy1 = by.hi[static_cast<size_t>(ky)];
                            double am0 = 0, am1 = 0, a00 = 0, a01 = 0, ap0 = 0, ap1 = 0;
                            double edge_m = 0, edge_0 = 0, edge_p = 0;
                            const int lo = bx.lo[0], hi = bx.hi[2];
                            for (int oy = oy0; oy <= oy1; ++oy) {
                                const int iy = oy + ky - pad;
                                const double* ir = iplane + static_cast<size_t>(iy) * W + (1 - pad);
                                const double* grow = gplane + static_cast<size_t>(oy) * OW;
                                int ox = lo;
                                for (; ox + 1 <= hi; ox += 2) {
                                    const double g0 = grow[ox], g1 = grow[ox + 1];
                                    am0 += g0 * ir[ox - 1];
                                    am1 += g1 * ir[ox];
                                    a00 += g0 * ir[ox];
                                    a01 += g1 * ir[ox + 1];
                                    ap0 += g0 * ir[ox + 1];
                                    ap1 += g1 * ir[ox + 2];
                                }
                                for (; ox <= hi; ++ox) {
                                    const double g0 = grow[ox];
                                    am0 += g0 * ir[ox - 1];
                                    a00 += g0 * ir[ox];
                                    ap0 += g0 * ir[ox + 1];
                                }
                                // boundary columns outside the fused range
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int ox0 = bx.lo[static_cast<size_t>(kx)];
                                    const int ox1 = bx.hi[static_cast<size_t>(kx)];
                                    double e = 0;
                                    for (int oxe = ox0; oxe < lo; ++oxe) e += grow[oxe] * ir[oxe + kx - 1];
                                    for (int oxe = hi + 1; oxe <= ox1; ++oxe) e += grow[oxe] * ir[oxe + kx - 1];
                                    if (kx == 0) edge_m += e;
                                    else if (kx == 1) edge_0 += e;
                                    else edge_p += e;
                                }
                            }
                            gkplane[ky * 3 + 0] += (am0 + am1) + edge_m;
                            gkplane[ky * 3 + 1] += (a00 + a01) + edge_0;
                            gkplane[ky * 3 + 2] += (ap0 + ap1) + edge_p;
                        }
                        continue;
                    }
                    for (int ky = 0; ky < Kh; ++ky) {
                        const int oy0 = by.lo[static_cast<size_t>(ky)];
                        const int oy1 = by.hi[static_cast<size_t>(ky)];
                        for (int kx = 0; kx < Kw; ++kx) {
                            const int ox0 = bx.lo[static_cast<size_t>(kx)];
                            const int ox1 = bx.hi[static_cast<size_t>(kx)];
                            // four partial sums keep the FP order fixed while
                            // letting the reduction pipeline
                            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                            for (int oy = oy0; oy <= oy1; ++oy) {
                                const int iy = oy * str + ky - pad;
                                const double* irow = iplane + static_cast<size_t>(iy) * W + (kx - pad);
                                const double* grow = gplane + static_cast<size_t>(oy) * OW;
                                int ox = ox0;
                                if (str == 1) {
                                    for (; ox + 3 <= ox1; ox += 4) {
                                        a0 += grow[ox] * irow[ox];
                                        a1 += grow[ox + 1] * irow[ox + 1];
                                        a2 += grow[ox + 2] * irow[ox + 2];
                                        a3 += grow[ox + 3] * irow[ox + 3];
                                    }
                                    for (; ox <= ox1; ++ox) a0 += grow[ox] * irow[ox];
                                } else {
                                    for (; ox <= ox1; ++ox) a0 += grow[ox] * irow[ox * str];
                                }
                            }
                            gkplane[ky * Kw + kx] += (a0 + a1) + (a2 + a3);
                        }
                    }
                }
            }
        }
        if (biasg) {
            auto gb = tp->grad_buf(bid);
            for (int oc = 0; oc < Co; ++oc) {
                const double* gplane = g + static_cast<size_t>(oc) * OH * OW;
                double acc = 0.0;
                for (int i = 0; i < OH * OW; ++i) acc += gplane[i];
                gb[oc] += acc;
            }
        }
    };
    return r;
}

Tensor conv1d(Tensor input, Tensor kernel, std::optional<Tensor> bias, int stride, int padding) {
    check_same_tape(input, kernel);
    Tape& t = *input.tape;
    const auto& si = input.shape();
    const auto& sk = kernel.shape();
    if (si.size() != 2 || sk.size() != 3)
        throw std::invalid_argument("conv1d: input " + shape_str(si) + ", kernel " + shape_str(sk));
    const int Ci = si[0], N = si[1];
    const int Co = sk[0], K = sk[2];
    if (sk[1] != Ci) shape_error("conv1d channels", si, sk);
    if (K % 2 == 0) throw std::invalid_argument("conv1d: kernel extent must be odd");
    if (stride < 1 || padding < 0) throw std::invalid_argument("conv1d: bad stride/padding");
    const int ON = (N + 2 * padding - K) / stride + 1;
    if (ON <= 0)
        throw std::invalid_argument("conv1d: non-positive output extent for input " + shape_str(si) +
                                    " kernel " + shape_str(sk));
    bool biasg = false;
    if (bias) {
        check_same_tape(input, *bias);
        if (bias->shape() != std::vector<int>{Co})
            throw std::invalid_argument("conv1d: bias shape " + shape_str(bias->shape()));
        biasg = t.node(bias->id).needs_grad;
    }
    const bool ig = t.node(input.id).needs_grad, kg = t.node(kernel.id).needs_grad;
    Tensor r = t.make_node({Co, ON}, ig || kg || biasg);
    const double* in = t.node(input.id).vptr;
    const double* kw = t.node(kernel.id).vptr;
    const double* pb = bias ? t.node(bias->id).vptr : nullptr;
    auto out = t.mutable_value(r.id);

    const TapBounds tb(K, padding, stride, N, ON);
    for (int oc = 0; oc < Co; ++oc) {
        double b = pb ? pb[oc] : 0.0;
        double* orow = out.data() + static_cast<size_t>(oc) * ON;
        for (int i = 0; i < ON; ++i) orow[i] = b;
        for (int ic = 0; ic < Ci; ++ic) {
            const double* irow = in + static_cast<size_t>(ic) * N;
            const double* krow = kw + (static_cast<size_t>(oc) * Ci + ic) * K;
            for (int k = 0; k < K; ++k) {
                const double wv = krow[k];
                const int o0 = tb.lo[static_cast<size_t>(k)];
                const int o1 = tb.hi[static_cast<size_t>(k)];
                const double* ir = irow + (k - padding);
                if (stride == 1) {
                    for (int o = o0; o <= o1; ++o) orow[o] += wv * ir[o];
                } else {
                    for (int o = o0; o <= o1; ++o) orow[o] += wv * ir[o * stride];
                }
            }
        }
    }
    if (!t.node(r.id).needs_grad) return r;
    Tape* tp = &t;
    const int iid = input.id, kid = kernel.id, bid = bias ? bias->id : -1, rid = r.id;
    const int pad = padding, str = stride;
    t.node(r.id).backprop = [tp, iid, kid, bid, rid, Ci, N, Co, K, ON, pad, str, ig, kg, biasg]() {
        const double* g = tp->node(rid).grad.data();
        const double* in = tp->node(iid).vptr;
        const double* kw = tp->node(kid).vptr;
        const TapBounds tb(K, pad, str, N, ON);
        if (ig) {
            auto gin = tp->grad_buf(iid);
            for (int oc = 0; oc < Co; ++oc) {
                const double* grow = g + static_cast<size_t>(oc) * ON;
                for (int ic = 0; ic < Ci; ++ic) {
                    double* girow = gin.data() + static_cast<size_t>(ic) * N;
                    const double* krow = kw + (static_cast<size_t>(oc) * Ci + ic) * K;
                    for (int k = 0; k < K; ++k) {
                        const double wv = krow[k];
                        const int o0 = tb.lo[static_cast<size_t>(k)];
                        const int o1 = tb.hi[static_cast<size_t>(k)];
                        double* gi = girow + (k - pad);
                        if (str == 1) {
                            for (int o = o0; o <= o1; ++o) gi[o] += wv * grow[o];
                        } else {
                            for (int o = o0; o <= o1; ++o) gi[o * str] += wv * grow[o];
                        }
                    }
                }
            }
        }
        if (kg) {
            auto gk = tp->grad_buf(kid);
            for (int oc = 0; oc < Co; ++oc) {
                const double* grow = g + static_cast<size_t>(oc) * ON;
                for (int ic = 0; ic < Ci; ++ic) {
                    const double* irow = in + static_cast<size_t>(ic) * N;
                    double* gkrow = gk.data() + (static_cast<size_t>(oc) * Ci + ic) * K;
                    for (int k = 0; k < K; ++k) {
                        const int o0 = tb.lo[static_cast<size_t>(k)];
                        const int o1 = tb.hi[static_cast<size_t>(k)];
                        const double* ir = irow + (k - pad);
                        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                        int o = o0;
                        if (str == 1) {
                            for (; o + 3 <= o1; o += 4) {
                                a0 += grow[o] * ir[o];
                                a1 += grow[o + 1] * ir[o + 1];
                                a2 += grow[o + 2] * ir[o + 2];
                                a3 += grow[o + 3] * ir[o + 3];
                            }
                        }
                        for (; o <= o1; ++o) a0 += grow[o] * ir[o * str];
                        gkrow[k] += (a0 + a1) + (a2 + a3);
                    }
                }
            }
        }
        if (biasg) {
            auto gb = tp->grad_buf(bid);
            for (int oc = 0; oc < Co; ++oc) {
                const double* grow = g + static_cast<size_t>(oc) * ON;
                double acc = 0.0;
                for (int i = 0; i < ON; ++i) acc += grow[i];
                gb[oc] += acc;
            }
        }
    };
    return r;
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(Tape&, Tensor)>& f,
                  const std::vector<int>& shape, std::span<const double> x0,
                  double eps) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
    std::vector<double> x(x0.begin(), x0.end());
    std::vector<double> g_ad;
    {
        Tape t;
        Tensor xt = t.leaf(shape, x, true);
        Tensor loss = f(t, xt);
        if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
        t.backward(loss);
        auto g = t.node(xt.id).grad;
        g_ad.assign(g.begin(), g.end());
        if (g_ad.empty()) g_ad.assign(x.size(), 0.0);
    }
    auto eval = [&](const std::vector<double>& xv) {
        Tape t;
        Tensor xt = t.leaf(shape, xv, false);
        return f(t, xt).scalar();
    };
    double worst = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + eps;
        const double fp = eval(x);
        x[i] = xi - eps;
        const double fm = eval(x);
        x[i] = xi;
        const double fd = (fp - fm) / (2.0 * eps);
        const double ad = g_ad[i];
        double denom = 1.0;
        if (std::abs(fd) > denom) denom = std::abs(fd);
        if (std::abs(ad) > denom) denom = std::abs(ad);
        const double disc = std::abs(fd - ad) / denom;
        if (disc > worst) worst = disc;
    }
    return worst;
}

}  // namespace pdectrl
