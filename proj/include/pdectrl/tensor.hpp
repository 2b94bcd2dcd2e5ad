#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pdectrl {

// Reverse-mode autodiff over dense f64 tensors. A Tape records every
// operation in execution order; backward() replays the records in reverse.
// A tape and its tensors are confined to one thread; independent tapes may
// run concurrently.

class Tape;

struct Tensor {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const std::vector<int>& shape() const;
    int numel() const;
    std::span<const double> value() const;
    std::span<const double> grad() const;  // valid after backward()
    double scalar() const;                 // value of a 1-element tensor
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf owning a copy of the data.
    Tensor leaf(std::vector<int> shape, std::vector<double> data, bool requires_grad);
    // Leaf viewing external storage; caller keeps it alive for the tape's lifetime.
    Tensor leaf_view(std::vector<int> shape, const double* data, bool requires_grad);
    Tensor scalar_leaf(double v, bool requires_grad = false);

    // Reverse sweep from a scalar loss. Gradients of all nodes reachable from
    // requires_grad leaves are populated; repeated calls accumulate.
    void backward(const Tensor& loss);

    size_t num_nodes() const { return nodes_.size(); }

    struct Node {
        std::vector<int> shape;
        std::vector<double> storage;      // owned values (unused for views)
        const double* vptr = nullptr;
        int n = 0;
        std::vector<double> grad;         // sized lazily during backward
        bool needs_grad = false;
        std::function<void()> backprop;   // accumulates into input grads; null for leaves
    };

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

    // Used by op implementations.
    Tensor make_node(std::vector<int> shape, bool needs_grad);
    std::span<double> mutable_value(int id);
    std::span<double> grad_buf(int id);   // allocates zeroed grad on demand

private:
    std::deque<Node> nodes_;  // deque: node references stay valid as the tape grows
};

// Elementwise ops. Binary ops accept equal shapes or one 1-element operand
// (scalar broadcast); shape mismatch throws std::invalid_argument naming
// both shapes.
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor div(Tensor a, Tensor b);  // b scalar or equal shape
Tensor scale(Tensor a, double c);
Tensor tanh(Tensor a);
Tensor relu(Tensor a);
Tensor square(Tensor a);

// Cross-correlation (ML convention, no kernel flip).
// input [Ci,H,W], kernel [Co,Ci,Kh,Kw] with odd Kh,Kw, optional bias [Co].
// padding >= 0 pads with zeros; output extents must be positive.
Tensor conv2d(Tensor input, Tensor kernel, std::optional<Tensor> bias, int stride, int padding);
// input [Ci,N], kernel [Co,Ci,K].
Tensor conv1d(Tensor input, Tensor kernel, std::optional<Tensor> bias, int stride, int padding);

// Nearest-neighbor upsampling: [C,N] -> [C,2N] or [C,H,W] -> [C,2H,2W].
// Backward sums gradients over the duplicated cells.
Tensor upsample2x(Tensor input);

// y = W x + b with x [N], W [M,N], b [M].
Tensor linear(Tensor x, Tensor weight, Tensor bias);

Tensor reshape(Tensor a, std::vector<int> shape);
// Concatenate along the leading (channel) axis; trailing extents must agree.
Tensor concat(Tensor a, Tensor b);

Tensor sum(Tensor a);
Tensor mean(Tensor a);
// sqrt(sum of squares); gradient at the zero vector is defined as zero.
Tensor l2norm(Tensor a);

void backward(Tensor loss);

// Central-difference check of the autodiff gradient of f at x0.
// Returns max over coordinates of |fd - ad| / max(1, |fd|, |ad|).
double grad_check(const std::function<Tensor(Tape&, Tensor)>& f,
                  const std::vector<int>& shape, std::span<const double> x0,
                  double eps);

std::string shape_str(const std::vector<int>& s);

}  // namespace pdectrl
