#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "resvit/rng.hpp"
#include "resvit/tensor.hpp"

namespace resvit {

// Reverse-mode autodiff over a dynamically built graph. Nodes carry a creation
// id; since an op's inputs always predate it, descending-id order is a valid
// topological order for the backward sweep.
struct GraphNode {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool needs_grad = false;
    bool is_param = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<GraphNode>> inputs;
    std::function<void(GraphNode&)> backward;

    Tensor& grad_buffer() {
        if (grad.v.empty()) grad = Tensor::zeros(value.shape);
        return grad;
    }
};

class Var {
public:
    Var() = default;

    static Var param(Tensor t);     // trainable leaf
    static Var constant(Tensor t);  // non-differentiable leaf

    bool defined() const { return node_ != nullptr; }
    const Tensor& val() const { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    // Var is a handle; these write through it (e.g. optimizer updates,
    // checkpoint restores) without reseating the node other graphs share.
    Tensor& value_ref() const { return node_->value; }
    Tensor& grad_ref() const { return node_->grad_buffer(); }
    bool needs_grad() const { return node_ && node_->needs_grad; }
    void zero_grad() const {
        if (node_ && !node_->grad.v.empty()) node_->grad.fill(0.0);
    }
    Var detach() const { return constant(node_->value); }

    const std::vector<i64>& shape() const { return node_->value.shape; }
    i64 dim(int i) const { return node_->value.dim(i); }
    double item() const { return node_->value.item(); }

    std::shared_ptr<GraphNode> node() const { return node_; }

private:
    explicit Var(std::shared_ptr<GraphNode> n) : node_(std::move(n)) {}
    std::shared_ptr<GraphNode> node_;

    friend Var make_op(Tensor value, std::vector<Var> inputs,
                       std::function<void(GraphNode&)> backward);
};

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(GraphNode&)> backward);

// Backpropagates from a scalar node (seed gradient 1).
void backward(const Var& loss);

enum class PadMode { zero, reflect };

// ---- elementwise / arithmetic ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var gelu(const Var& a);
Var tanh_op(const Var& a);
Var abs_op(const Var& a);
Var square(const Var& a);
Var log_op(const Var& a);
Var clamp_min(const Var& a, double lo);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

// ---- reductions ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);

// ---- shape ----
Var reshape(const Var& a, std::vector<i64> shape);
Var concat_channels(const Var& a, const Var& b);            // NCHW, dim 1
Var slice_channels(const Var& a, i64 c_begin, i64 c_end);   // NCHW, dim 1
Var patchify(const Var& x, i64 patch);                      // (N,C,H,W) -> (N,NP,C*P*P)
Var unpatchify(const Var& z, i64 channels, i64 h, i64 w, i64 patch);
Var split_heads(const Var& z, i64 heads);                   // (N,T,D) -> (N*heads,T,D/heads)
Var merge_heads(const Var& z, i64 heads);                   // inverse of split_heads
Var transpose_last2(const Var& a);                          // (B,r,c) -> (B,c,r)

// ---- linear algebra ----
Var linear(const Var& x, const Var& w, const Var& b);  // (R,I)x(I,O)+(O)
Var bmm(const Var& a, const Var& b);                   // (B,m,k)x(B,k,n)
Var add_tokenwise(const Var& z, const Var& p);         // (N,T,D)+(T,D)

// ---- convolution ----
Var pad2d(const Var& x, i64 pad, PadMode mode);
// Valid cross-correlation, no implicit padding; w is (Cout,Cin,K,K).
Var conv2d(const Var& x, const Var& w, const Var& b, i64 stride);
// Transposed convolution; w is (Cin,Cout,K,K).
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, i64 stride, i64 pad,
                     i64 output_pad);

// ---- normalization / activations over structured dims ----
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
Var softmax_lastdim(const Var& x);
Var dropout(const Var& x, double p, Rng& rng, bool training);
Var global_avg_pool(const Var& x);  // (N,C,H,W) -> (N,C)

// ---- indexing ----
Var gather_classes(const Var& probs, const std::vector<i64>& labels);  // (N,K) -> (N)

}  // namespace resvit
