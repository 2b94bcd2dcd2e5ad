#include "pdectrl/nets.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "pdectrl/container.hpp"
#include "pdectrl/errors.hpp"
#include "pdectrl/pde.hpp"

namespace pdectrl {

int ParamStore::add(const std::string& name, std::vector<int> shape) {
    Param p;
    p.name = name;
    int n = 1;
    for (int d : shape) n *= d;
    p.shape = std::move(shape);
    p.value.assign(static_cast<size_t>(n), 0.0);
    p.grad.assign(static_cast<size_t>(n), 0.0);
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
}

int ParamStore::total_numel() const {
    int n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

void ParamStore::scale_grads(double c) {
    for (auto& p : params_)
        for (double& g : p.grad) g *= c;
}

std::vector<double> ParamStore::flat_values() const {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total_numel()));
    for (const auto& p : params_) out.insert(out.end(), p.value.begin(), p.value.end());
    return out;
}

void ParamStore::set_flat_values(std::span<const double> v) {
    size_t off = 0;
    for (auto& p : params_) {
        if (off + p.value.size() > v.size())
            throw std::invalid_argument("flat parameter vector too short");
        std::copy(v.begin() + off, v.begin() + off + p.value.size(), p.value.begin());
        off += p.value.size();
    }
    if (off != v.size()) throw std::invalid_argument("flat parameter vector too long");
}

BoundParams bind_params(Tape& tape, const ParamStore& store, bool trainable) {
    BoundParams b;
    b.leaves.reserve(store.size());
    for (size_t i = 0; i < store.size(); ++i) {
        const Param& p = store[static_cast<int>(i)];
        b.leaves.push_back(tape.leaf_view(p.shape, p.value.data(), trainable));
    }
    return b;
}

void harvest_grads(const BoundParams& bound, ParamStore& store) {
    for (size_t i = 0; i < bound.leaves.size(); ++i) {
        const Tensor& t = bound.leaves[i];
        const auto& nd = t.tape->node(t.id);
        if (nd.grad.empty()) continue;  // leaf not touched by this loss
        Param& p = store[static_cast<int>(i)];
        for (size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += nd.grad[k];
    }
}

Tensor apply_conv_net(Tape& tape, const ConvNet& net, const BoundParams& b, Tensor x, int ndim) {
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const ConvLayerSpec& l = net.layers[i];
        if (l.upsample_before) x = upsample2x(x);
        Tensor w = b.leaves[static_cast<size_t>(net.weight_idx[i])];
        Tensor bias = b.leaves[static_cast<size_t>(net.bias_idx[i])];
        const int pad = l.kernel / 2;
        x = (ndim == 2) ? conv2d(x, w, bias, l.stride, pad) : conv1d(x, w, bias, l.stride, pad);
        if (l.tanh_act) x = tanh(x);
    }
    return x;
}

namespace {

// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
void init_param(Param& p, int fan_in, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : p.value) v = rng.uniform(-s, s);
}

ConvNet make_conv_net(ParamStore& store, Rng& rng, const std::string& prefix, int ndim, int kernel,
                      int in_ch, const std::vector<int>& channels, const std::vector<int>& strides,
                      const std::vector<int>& up_before, bool last_linear) {
    ConvNet net;
    int cin = in_ch;
    for (size_t i = 0; i < channels.size(); ++i) {
        ConvLayerSpec l;
        l.in_ch = cin;
        l.out_ch = channels[i];
        l.kernel = kernel;
        l.stride = strides.empty() ? 1 : strides[i];
        l.upsample_before = !up_before.empty() && up_before[i] != 0;
        l.tanh_act = !(last_linear && i + 1 == channels.size());
        std::vector<int> wshape = (ndim == 2)
                                      ? std::vector<int>{l.out_ch, l.in_ch, kernel, kernel}
                                      : std::vector<int>{l.out_ch, l.in_ch, kernel};
        int w = store.add(prefix + ".conv" + std::to_string(i) + ".weight", wshape);
        int bi = store.add(prefix + ".conv" + std::to_string(i) + ".bias", {l.out_ch});
        int fan = l.in_ch * kernel * (ndim == 2 ? kernel : 1);
        init_param(store[w], fan, rng);
        init_param(store[bi], fan, rng);
        net.layers.push_back(l);
        net.weight_idx.push_back(w);
        net.bias_idx.push_back(bi);
        cin = l.out_ch;
    }
    return net;
}

std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

std::map<std::string, std::string> parse_kv(const std::string& s) {
    std::map<std::string, std::string> kv;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ';')) {
        size_t eq = tok.find('=');
        if (eq == std::string::npos) throw IoError("malformed architecture string: " + s);
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

}  // namespace

int SteadyArch::enc_out_extent() const {
    int e = n;
    for (int s : enc_strides) {
        if (e % s != 0)
            throw ConfigError("encoder stride " + std::to_string(s) + " does not divide extent " +
                              std::to_string(e));
        e /= s;
    }
    return e;
}

int SteadyArch::latent_channels() const {
    int cells = enc_out_extent();
    if (ndim == 2) cells *= enc_out_extent();
    if (latent % cells != 0)
        throw ConfigError("latent " + std::to_string(latent) + " not divisible by decoder base " +
                          std::to_string(cells));
    return latent / cells;
}

std::string SteadyArch::to_string() const {
    std::ostringstream os;
    os << "ndim=" << ndim << ";n=" << n << ";latent=" << latent << ";kernel=" << kernel
       << ";enc_channels=" << join_ints(enc_channels) << ";enc_strides=" << join_ints(enc_strides)
       << ";dec_channels=" << join_ints(dec_channels)
       << ";dec_up_before=" << join_ints(dec_up_before) << ";dirichlet=" << (enforce_dirichlet ? 1 : 0);
    return os.str();
}

SteadyArch SteadyArch::parse(const std::string& s) {
    auto kv = parse_kv(s);
    SteadyArch a;
    a.ndim = std::stoi(kv.at("ndim"));
    a.n = std::stoi(kv.at("n"));
    a.latent = std::stoi(kv.at("latent"));
    a.kernel = std::stoi(kv.at("kernel"));
    a.enc_channels = split_ints(kv.at("enc_channels"));
    a.enc_strides = split_ints(kv.at("enc_strides"));
    a.dec_channels = split_ints(kv.at("dec_channels"));
    a.dec_up_before = split_ints(kv.at("dec_up_before"));
    a.enforce_dirichlet = std::stoi(kv.at("dirichlet")) != 0;
    return a;
}

SteadyArch SteadyArch::poisson_default(int n) {
    SteadyArch a;
    a.ndim = 2;
    a.n = n;
    a.latent = 256;
    a.kernel = 3;
    a.enc_channels = {16, 32, 32, 16};
    a.enc_strides = {2, 2, 1, 1};
    a.dec_channels = {16, 32, 16, 1};
    a.dec_up_before = {0, 0, 1, 1};
    a.enforce_dirichlet = true;
    return a;
}

SteadyArch SteadyArch::wave_default(int n) {
    SteadyArch a;
    a.ndim = 1;
    a.n = n;
    a.latent = 64;
    a.kernel = 5;
    a.enc_channels = {8, 16, 16, 16};
    a.enc_strides = {2, 2, 1, 1};
    a.dec_channels = {16, 16, 8, 1};
    a.dec_up_before = {0, 0, 1, 1};
    a.enforce_dirichlet = true;
    return a;
}

OperatorSurrogate OperatorSurrogate::build(const SteadyArch& arch, uint64_t seed) {
    OperatorSurrogate s;
    s.arch = arch;
    Rng rng(seed);
    s.encoder = make_conv_net(s.store, rng, "enc", arch.ndim, arch.kernel, 1, arch.enc_channels,
                              arch.enc_strides, {}, /*last_linear=*/false);
    const int e = arch.enc_out_extent();
    const int flat = arch.enc_channels.back() * (arch.ndim == 2 ? e * e : e);
    s.enc_lin_w = s.store.add("enc.lin.weight", {arch.latent, flat});
    s.enc_lin_b = s.store.add("enc.lin.bias", {arch.latent});
    init_param(s.store[s.enc_lin_w], flat, rng);
    init_param(s.store[s.enc_lin_b], flat, rng);
    const int lc = arch.latent_channels();
    s.sol_decoder = make_conv_net(s.store, rng, "sol", arch.ndim, arch.kernel, lc, arch.dec_channels,
                                  {}, arch.dec_up_before, /*last_linear=*/true);
    s.rec_decoder = make_conv_net(s.store, rng, "rec", arch.ndim, arch.kernel, lc, arch.dec_channels,
                                  {}, arch.dec_up_before, /*last_linear=*/true);
    s.dirichlet_mask = boundary_distance_mask(s.grid());
    return s;
}

Grid OperatorSurrogate::grid() const {
    return arch.ndim == 2 ? make_grid_2d(arch.n) : make_grid_1d(arch.n);
}

std::vector<int> OperatorSurrogate::input_shape() const {
    return arch.ndim == 2 ? std::vector<int>{1, arch.n, arch.n} : std::vector<int>{1, arch.n};
}

Tensor OperatorSurrogate::encode(Tape& tape, const BoundParams& b, Tensor m) const {
    Tensor x = apply_conv_net(tape, encoder, b, m, arch.ndim);
    x = reshape(x, {x.numel()});
    return linear(x, b.leaves[static_cast<size_t>(enc_lin_w)], b.leaves[static_cast<size_t>(enc_lin_b)]);
}

Tensor OperatorSurrogate::decode_state(Tape& tape, const BoundParams& b, Tensor z) const {
    const int e = arch.enc_out_extent();
    const int lc = arch.latent_channels();
    Tensor x = reshape(z, arch.ndim == 2 ? std::vector<int>{lc, e, e} : std::vector<int>{lc, e});
    x = apply_conv_net(tape, sol_decoder, b, x, arch.ndim);
    if (arch.enforce_dirichlet) {
        Tensor mask = tape.leaf_view(x.shape(), dirichlet_mask.values.data(), false);
        x = mul(x, mask);
    }
    return x;
}

Tensor OperatorSurrogate::decode_control(Tape& tape, const BoundParams& b, Tensor z) const {
    const int e = arch.enc_out_extent();
    const int lc = arch.latent_channels();
    Tensor x = reshape(z, arch.ndim == 2 ? std::vector<int>{lc, e, e} : std::vector<int>{lc, e});
    return apply_conv_net(tape, rec_decoder, b, x, arch.ndim);
}

Tensor OperatorSurrogate::predict_state(Tape& tape, const BoundParams& b, Tensor m) const {
    return decode_state(tape, b, encode(tape, b, m));
}

Tensor OperatorSurrogate::reconstruct_control(Tape& tape, const BoundParams& b, Tensor m) const {
    return decode_control(tape, b, encode(tape, b, m));
}

Field OperatorSurrogate::predict_state(const Field& m) const {
    Tape tape;
    BoundParams b = bind(tape, false);
    Tensor mt = tape.leaf_view(input_shape(), m.values.data(), false);
    Tensor u = predict_state(tape, b, mt);
    Field out(grid());
    auto v = u.value();
    out.values.assign(v.begin(), v.end());
    return out;
}

Field OperatorSurrogate::reconstruct_control(const Field& m) const {
    Tape tape;
    BoundParams b = bind(tape, false);
    Tensor mt = tape.leaf_view(input_shape(), m.values.data(), false);
    Tensor r = reconstruct_control(tape, b, mt);
    Field out(grid());
    auto v = r.value();
    out.values.assign(v.begin(), v.end());
    return out;
}

// ---------------------------------------------------------------------------

std::string TimeArch::to_string() const {
    std::ostringstream os;
    os << "n=" << n << ";kernel=" << kernel << ";hidden=" << join_ints(hidden)
       << ";latent_channels=" << latent_channels << ";transition_kernel=" << transition_kernel;
    return os.str();
}

TimeArch TimeArch::parse(const std::string& s) {
    auto kv = parse_kv(s);
    TimeArch a;
    a.n = std::stoi(kv.at("n"));
    a.kernel = std::stoi(kv.at("kernel"));
    a.hidden = split_ints(kv.at("hidden"));
    a.latent_channels = std::stoi(kv.at("latent_channels"));
    a.transition_kernel = std::stoi(kv.at("transition_kernel"));
    return a;
}

TimeArch TimeArch::burgers_default(int n_interior) {
    TimeArch a;
    a.n = n_interior;
    return a;
}

TimeSurrogate TimeSurrogate::build(const TimeArch& arch, uint64_t seed) {
    TimeSurrogate s;
    s.arch = arch;
    Rng rng(seed);
    std::vector<int> enc_ch = arch.hidden;
    enc_ch.push_back(arch.latent_channels);
    std::vector<int> dec_ch = arch.hidden;
    dec_ch.push_back(1);
    s.state_enc = make_conv_net(s.store, rng, "senc", 1, arch.kernel, 1, enc_ch, {}, {}, true);
    s.state_dec = make_conv_net(s.store, rng, "sdec", 1, arch.kernel, arch.latent_channels, dec_ch,
                                {}, {}, true);
    s.control_enc = make_conv_net(s.store, rng, "cenc", 1, arch.kernel, 1, enc_ch, {}, {}, true);
    s.control_dec = make_conv_net(s.store, rng, "cdec", 1, arch.kernel, arch.latent_channels, dec_ch,
                                  {}, {}, true);
    const int lc = arch.latent_channels, tk = arch.transition_kernel;
    s.trans_w = s.store.add("trans.weight", {lc, 2 * lc, tk});
    s.trans_b = s.store.add("trans.bias", {lc});
    init_param(s.store[s.trans_w], 2 * lc * tk, rng);
    init_param(s.store[s.trans_b], 2 * lc * tk, rng);
    // Start the latent dynamics near the identity: each latent channel of v
    // passes through, the control channels start muted.
    {
        Param& w = s.store[s.trans_w];
        for (double& v : w.value) v *= 0.05;
        for (int c = 0; c < lc; ++c) {
            const size_t base = (static_cast<size_t>(c) * 2 * lc + c) * tk;
            w.value[base + tk / 2] += 1.0;
        }
    }
    return s;
}

Tensor TimeSurrogate::encode_state(Tape& tape, const BoundParams& b, Tensor u) const {
    return apply_conv_net(tape, state_enc, b, u, 1);
}

Tensor TimeSurrogate::decode_state(Tape& tape, const BoundParams& b, Tensor v) const {
    return apply_conv_net(tape, state_dec, b, v, 1);
}

Tensor TimeSurrogate::encode_control(Tape& tape, const BoundParams& b, Tensor m) const {
    return apply_conv_net(tape, control_enc, b, m, 1);
}

Tensor TimeSurrogate::decode_control(Tape& tape, const BoundParams& b, Tensor g) const {
    return apply_conv_net(tape, control_dec, b, g, 1);
}

Tensor TimeSurrogate::transition(Tape& tape, const BoundParams& b, Tensor v, Tensor g) const {
    Tensor x = concat(v, g);
    return conv1d(x, b.leaves[static_cast<size_t>(trans_w)], b.leaves[static_cast<size_t>(trans_b)],
                  1, arch.transition_kernel / 2);
}

Tensor TimeSurrogate::reconstruct_state(Tape& tape, const BoundParams& b, Tensor u) const {
    return decode_state(tape, b, encode_state(tape, b, u));
}

Tensor TimeSurrogate::reconstruct_control(Tape& tape, const BoundParams& b, Tensor m) const {
    return decode_control(tape, b, encode_control(tape, b, m));
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

void add_params(TensorContainer& c, const ParamStore& store) {
    for (size_t i = 0; i < store.size(); ++i) {
        const Param& p = store[static_cast<int>(i)];
        std::vector<uint64_t> dims(p.shape.begin(), p.shape.end());
        c.add(p.name, std::move(dims), p.value);
    }
}

void read_params(const TensorContainer& c, ParamStore& store) {
    for (size_t i = 0; i < store.size(); ++i) {
        Param& p = store[static_cast<int>(i)];
        const ContainerEntry& e = c.find(p.name);
        auto vals = e.as_f64();
        if (vals.size() != p.value.size())
            throw IoError("checkpoint parameter '" + p.name + "' has " + std::to_string(vals.size()) +
                          " values, expected " + std::to_string(p.value.size()));
        p.value = std::move(vals);
    }
}

}  // namespace

void save_checkpoint(const OperatorSurrogate& s, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& extra_meta) {
    TensorContainer c;
    c.set_meta("model", "steady");
    c.set_meta("arch", s.arch.to_string());
    for (const auto& kv : extra_meta) c.set_meta(kv.first, kv.second);
    add_params(c, s.store);
    c.save(path);
}

void save_checkpoint(const TimeSurrogate& s, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& extra_meta) {
    TensorContainer c;
    c.set_meta("model", "time");
    c.set_meta("arch", s.arch.to_string());
    for (const auto& kv : extra_meta) c.set_meta(kv.first, kv.second);
    add_params(c, s.store);
    c.save(path);
}

std::string checkpoint_model_kind(const std::string& path) {
    return TensorContainer::load(path).meta("model");
}

OperatorSurrogate load_operator_checkpoint(const std::string& path) {
    TensorContainer c = TensorContainer::load(path);
    if (c.meta("model") != "steady")
        throw IoError(path + ": checkpoint model is '" + c.meta("model") + "', expected 'steady'");
    OperatorSurrogate s = OperatorSurrogate::build(SteadyArch::parse(c.meta("arch")), 0);
    read_params(c, s.store);
    return s;
}

TimeSurrogate load_time_checkpoint(const std::string& path) {
    TensorContainer c = TensorContainer::load(path);
    if (c.meta("model") != "time")
        throw IoError(path + ": checkpoint model is '" + c.meta("model") + "', expected 'time'");
    TimeSurrogate s = TimeSurrogate::build(TimeArch::parse(c.meta("arch")), 0);
    read_params(c, s.store);
    return s;
}

}  // namespace pdectrl
