#pragma once

#include <functional>
#include <vector>

#include "coms2t/ndarray.hpp"

namespace coms2t::ad {

/// Reverse-mode tape over NDArray values. One tape is built per batch and
/// discarded after the backward pass; parameter gradients accumulate into
/// externally owned arrays.
///
/// Single-threaded by construction: node evaluation order is the build
/// order and the backward sweep is its exact reverse, so every reduction
/// has a fixed summation order.
class Tape {
public:
    using Var = int;

    /// Leaf that does not propagate gradient.
    Var input(NDArray v);

    /// Leaf bound to an external parameter; backward adds into *grad_sink.
    /// grad_sink must outlive the tape and match value's shape.
    Var param(const NDArray& value, NDArray* grad_sink);

    const NDArray& val(Var v) const { return nodes_[v].value; }
    const NDArray& grad(Var v) const { return nodes_[v].grad; }

    // Elementwise, same shape.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var relu(Var a);
    Var softplus(Var a);
    Var square(Var a);

    /// Sum of all entries -> scalar.
    Var sum(Var a);
    /// Mean absolute error against a non-differentiated target; the
    /// subgradient of |x| at 0 is taken as 0.
    Var mae(Var pred, const NDArray& target);
    /// Sum of squared differences against a non-differentiated target.
    Var sse(Var pred, const NDArray& target);

    // Linear algebra.
    Var matmul(Var a, Var b);                 // [M,K]x[K,N] -> [M,N]
    Var linear(Var x, Var w, Var b);          // x[M,K], w[K,N], b[N]
    Var row_softmax(Var a);                   // [N,N], softmax per row

    // Backbone-shaped ops; X is [B,T,N,C] throughout.
    Var node_mix(Var x, Var ahat);            // Y[b,t,n,:] = sum_m ahat[n,m] X[b,t,m,:]
    Var feat_mix(Var x, Var w);               // contract last dim with w[Cin,Cout]
    Var bias_last(Var x, Var b);              // add b over last dim
    Var causal_conv(Var x, Var k, int dilation);  // k[kw,Cin,Cout]; left zero pad
    Var last_step(Var x);                     // [B,T,N,C] -> [B,N,C]
    Var expand_time(Var x);                   // [B,N,C] -> [B,1,N,C]
    Var head_split(Var x, std::size_t horizon);  // [B,1,N,l*F] -> [B,l,N,F]
    Var add_node_broadcast(Var x, Var v);     // X + V[N,C] over batch and time
    Var add_step_broadcast(Var x, Var v);     // X + V[T,C] over batch and nodes
    Var add_sample_step_broadcast(Var x, Var v);  // X + V[B*T,C] over nodes

    // Row-batched ops for prompt training; matrices are [M,C].
    Var gather_rows(Var m, std::vector<std::size_t> idx);
    Var concat_cols(Var a, Var b);
    Var slice_cols(Var a, std::size_t begin, std::size_t end);
    /// One CIN layer over the two-field stack [a_row; b_row]:
    /// out[m,h] = sum_e sum_{i,j in {0,1}} W[h,i,j] z_i[m,e] z_j[m,e],
    /// i.e. outer-product compression with sum-pooling over the embedding axis.
    Var cin_pool(Var a, Var b, Var w);        // a,b [M,E], w [H,2,2] -> [M,H]

    /// Seed d(loss)/d(loss)=1 and run the reverse sweep. loss must be scalar.
    void backward(Var loss);

private:
    struct Node {
        NDArray value;
        NDArray grad;
        std::function<void()> back;  // empty for inputs
    };

    Var push(NDArray value, std::function<void()> back = {});
    NDArray& g(Var v) { return nodes_[v].grad; }

    std::vector<Node> nodes_;
};

}  // namespace coms2t::ad
