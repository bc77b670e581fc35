// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mgpt/tensor.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mgpt::ag {

/// A trainable (or frozen) weight. Gradients accumulate across graphs until
/// `zero_grad()`, which is how micro-batch accumulation works. The gradient
/// buffer is mutable so read-only model code can still be differentiated.
struct Parameter {
    std::string name;
    Matrix value;
    mutable Matrix grad;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {}

    void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
    Eigen::Index size() const { return value.size(); }
};

/// Handle to a node of a Graph. Only valid for the graph that created it.
class Var {
public:
    Var() = default;
    bool valid() const { return id_ >= 0; }

private:
    friend class Graph;
    explicit Var(int id) : id_(id) {}
    int id_ = -1;
};

/// Tape-based reverse-mode differentiation over dense matrices. Nodes are
/// appended in creation order, so reverse order is a valid topological order.
///
/// A graph built with `grad_enabled = false` only evaluates values; that is
/// the inference path.
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t size() const { return nodes_.size(); }

    Var constant(Matrix value);
    Var param(const Parameter& p);

    const Matrix& value(Var v) const;
    /// Gradient of the last `backward` target w.r.t. `v`; zeros if none flowed.
    Matrix grad(Var v) const;
    double scalar(Var v) const { return value(v)(0, 0); }

    /// Seeds d(loss) = seed and propagates; parameter leaves accumulate into
    /// Parameter::grad. `loss` must be 1x1.
    void backward(Var loss, double seed = 1.0);

    // Linear algebra.
    Var matmul(Var a, Var b);     // a * b
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var add_row(Var a, Var row);  // broadcast a [n x m] + row [1 x m]
    Var mul_row(Var a, Var row);  // broadcast a [n x m] * row [1 x m]

    // Elementwise nonlinearities.
    Var relu(Var a);
    Var gelu(Var a);
    Var sqrt(Var a, double eps = 0.0);

    // Structure.
    Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
    Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
    Var concat_cols(std::span<const Var> parts);
    Var concat_rows(std::span<const Var> parts);
    Var gather_rows(Var table, std::span<const int> rows);
    Var mean_rows(Var a);  // [n x m] -> [1 x m]
    Var repeat_rows(Var a, int factor);
    /// im2col over the row (time) axis: row t of the output holds input rows
    /// t*stride - pad .. t*stride - pad + kernel - 1, concatenated; rows
    /// outside the input read as zero.
    Var unfold_rows(Var a, int kernel, int stride, int pad);

    // Normalization / attention.
    Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var causal_softmax_rows(Var scores);
    Var softmax_rows(Var scores);
    /// Pairwise squared Euclidean distances between the rows of a and b.
    Var sq_dist(Var a, Var b);
    Var dropout(Var a, double p, Rng& rng);

    // Reductions (1x1 results).
    Var sum(Var a);
    Var mean(Var a);
    Var mean_sq(Var a);
    Var mse(Var a, Var b) { return mean_sq(sub(a, b)); }
    /// Sum over rows of weight[i] * -log softmax(logits[i])[target[i]].
    /// Rows with weight 0 contribute nothing and receive no gradient.
    Var cross_entropy_rows(Var logits, std::span<const int> targets, std::span<const double> weights);

    // Gradient routing.
    Var stop_gradient(Var a);
    /// Forward value of `quantized`, backward straight into `latent`.
    Var straight_through(Var latent, Var quantized);

private:
    using BackwardFn = std::function<void(Graph&, const Matrix& grad_out)>;

    struct Node {
        Matrix value;
        Matrix grad;
        BackwardFn backward;
        const Parameter* param = nullptr;
        bool needs_grad = false;
    };

    Var push(Matrix value, bool needs_grad, BackwardFn fn = {});
    bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].needs_grad; }
    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id_)]; }
    const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)]; }
    void accumulate(Var v, const Matrix& g);
    template <typename F, typename DF>
    Var unary(Var a, F f, DF df);

    bool grad_enabled_;
    std::vector<Node> nodes_;
};

}  // namespace mgpt::ag
