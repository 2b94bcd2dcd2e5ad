#pragma once

#include <string>
#include <vector>

#include "pdectrl/grid.hpp"
#include "pdectrl/tensor.hpp"

namespace pdectrl {

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;

    int numel() const { return static_cast<int>(value.size()); }
};

class ParamStore {
public:
    int add(const std::string& name, std::vector<int> shape);
    Param& operator[](int i) { return params_[static_cast<size_t>(i)]; }
    const Param& operator[](int i) const { return params_[static_cast<size_t>(i)]; }
    size_t size() const { return params_.size(); }
    int total_numel() const;
    void zero_grads();
    void scale_grads(double c);
    // Flat concatenation in parameter order; used for snapshots and Adam state.
    std::vector<double> flat_values() const;
    void set_flat_values(std::span<const double> v);

private:
    std::vector<Param> params_;
};

// Per-tape leaf handles for every parameter in a store, in store order.
struct BoundParams {
    std::vector<Tensor> leaves;
};
BoundParams bind_params(Tape& tape, const ParamStore& store, bool trainable);
// Adds tape gradients of bound parameter leaves into Param::grad.
void harvest_grads(const BoundParams& bound, ParamStore& store);

struct ConvLayerSpec {
    int in_ch, out_ch, kernel, stride;
    bool tanh_act;
    bool upsample_before;
};

struct ConvNet {
    std::vector<ConvLayerSpec> layers;
    std::vector<int> weight_idx, bias_idx;  // indices into the owning ParamStore
};

// Applies the stack; works for 1d [C,N] and 2d [C,H,W] inputs (padding keeps
// the spatial extent, stride may shrink it).
Tensor apply_conv_net(Tape& tape, const ConvNet& net, const BoundParams& bound, Tensor x, int ndim);

// ---------------------------------------------------------------------------
// Steady operator surrogate: control -> encoder -> latent -> two decoders.
// ---------------------------------------------------------------------------

struct SteadyArch {
    int ndim = 2;
    int n = 64;      // grid points per axis
    int latent = 256;
    int kernel = 3;
    std::vector<int> enc_channels = {16, 32, 32, 16};
    std::vector<int> enc_strides = {2, 2, 1, 1};
    std::vector<int> dec_channels = {16, 32, 16, 1};
    std::vector<int> dec_up_before = {0, 0, 1, 1};  // upsample2x before layer i
    bool enforce_dirichlet = true;

    int enc_out_extent() const;     // spatial extent after the strided encoder
    int latent_channels() const;    // latent reshaped to [lc, extent(, extent)]
    std::string to_string() const;
    static SteadyArch parse(const std::string& s);
    // Defaults matching the experiments: 2d for Poisson, 1d for the wave problem.
    static SteadyArch poisson_default(int n);
    static SteadyArch wave_default(int n);
};

class OperatorSurrogate {
public:
    SteadyArch arch;
    ParamStore store;
    ConvNet encoder;
    int enc_lin_w = -1, enc_lin_b = -1;
    ConvNet sol_decoder;
    ConvNet rec_decoder;
    Field dirichlet_mask;

    static OperatorSurrogate build(const SteadyArch& arch, uint64_t seed);

    BoundParams bind(Tape& tape, bool trainable) const { return bind_params(tape, store, trainable); }

    // m is [1,n] or [1,n,n] on the tape.
    Tensor encode(Tape& tape, const BoundParams& b, Tensor m) const;
    Tensor decode_state(Tape& tape, const BoundParams& b, Tensor z) const;     // u_theta head
    Tensor decode_control(Tape& tape, const BoundParams& b, Tensor z) const;   // reconstruction head
    Tensor predict_state(Tape& tape, const BoundParams& b, Tensor m) const;
    Tensor reconstruct_control(Tape& tape, const BoundParams& b, Tensor m) const;

    // Forward-only conveniences on plain fields.
    Field predict_state(const Field& m) const;
    Field reconstruct_control(const Field& m) const;

    Grid grid() const;
    std::vector<int> input_shape() const;
};

// ---------------------------------------------------------------------------
// Time-dependent surrogate: state/control autoencoders + one-layer linear
// transition acting on the latent images.
// ---------------------------------------------------------------------------

struct TimeArch {
    int n = 128;  // interior points
    int kernel = 5;
    std::vector<int> hidden = {16, 32, 16};  // channels of the three hidden convs
    int latent_channels = 4;
    int transition_kernel = 31;

    std::string to_string() const;
    static TimeArch parse(const std::string& s);
    static TimeArch burgers_default(int n_interior);
};

class TimeSurrogate {
public:
    TimeArch arch;
    ParamStore store;
    ConvNet state_enc, state_dec, control_enc, control_dec;
    int trans_w = -1, trans_b = -1;

    static TimeSurrogate build(const TimeArch& arch, uint64_t seed);

    BoundParams bind(Tape& tape, bool trainable) const { return bind_params(tape, store, trainable); }

    Tensor encode_state(Tape& tape, const BoundParams& b, Tensor u) const;
    Tensor decode_state(Tape& tape, const BoundParams& b, Tensor v) const;
    Tensor encode_control(Tape& tape, const BoundParams& b, Tensor m) const;
    Tensor decode_control(Tape& tape, const BoundParams& b, Tensor g) const;
    // Linear one-layer map (v, g) -> next latent state.
    Tensor transition(Tape& tape, const BoundParams& b, Tensor v, Tensor g) const;
    Tensor reconstruct_state(Tape& tape, const BoundParams& b, Tensor u) const;
    Tensor reconstruct_control(Tape& tape, const BoundParams& b, Tensor m) const;
};

// Checkpoint io (PDEC container with architecture metadata).
void save_checkpoint(const OperatorSurrogate& s, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& extra_meta = {});
void save_checkpoint(const TimeSurrogate& s, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& extra_meta = {});
OperatorSurrogate load_operator_checkpoint(const std::string& path);
TimeSurrogate load_time_checkpoint(const std::string& path);
// "steady" or "time"
std::string checkpoint_model_kind(const std::string& path);

}  // namespace pdectrl
