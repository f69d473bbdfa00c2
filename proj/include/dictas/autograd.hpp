#pragma once

#include "dictas/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

namespace dictas {

/// Handle to a node recorded on a Tape.
struct Var {
    std::size_t id = 0;
};

/// Eager reverse-mode tape over Matrix values.
///
/// Every op computes its value immediately. When the tape was created with
/// gradients enabled and at least one input requires a gradient, the op also
/// records a backward closure. `backward` seeds a 1x1 output with 1 and walks
/// the nodes in reverse creation order.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var constant(Matrix value);
    Var variable(Matrix value);
    /// Leaf bound to a parameter owned elsewhere; repeated calls with the same
    /// matrix return the same node.
    Var param(const Matrix& p);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    /// Gradient accumulated for `v`; a zero matrix of the right shape if none.
    Matrix grad(Var v) const;
    /// Gradient of a parameter registered through `param`, or nullptr.
    const Matrix* param_grad(const Matrix& p) const;

    void backward(Var scalar);

    // Op plumbing.
    Var push(Matrix value, std::span<const Var> parents, BackwardFn fn);
    void accumulate(Var v, const Matrix& g);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    bool grad_enabled_;
    std::vector<Node> nodes_;
    std::unordered_map<const Matrix*, std::size_t> params_;
};

namespace ag {

Var matmul_nt(Tape& t, Var a, Var b); // a * b^T
Var matmul_nn(Tape& t, Var a, Var b); // a * b
/// x * W^T + bias, W is (out x in), bias is (1 x out).
Var linear(Tape& t, Var x, Var weight, Var bias);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
/// Exact GELU x * Phi(x).
Var gelu(Tape& t, Var a);
Var relu(Tape& t, Var a);
Var softmax_rows(Tape& t, Var a);
/// Row-wise Euclidean projection onto the probability simplex; the backward
/// pass applies the sparsemax Jacobian.
Var sparsemax_rows(Tape& t, Var a);
/// One-hot of the row argmax (first index on ties). Piecewise constant: no gradient.
Var onehot_argmax_rows(Tape& t, Var a);
Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t end);
Var concat_cols(Tape& t, std::span<const Var> parts);
/// (N x 1) cosine similarity of matching rows. Rows with zero norm give 0.
Var cosine_rows(Tape& t, Var a, Var b);
/// (1 x C) mean over rows.
Var mean_rows(Tape& t, Var a);
/// (1 x 1) mean of the selected rows of an (N x 1) column.
Var mean_of(Tape& t, Var column, std::span<const std::size_t> rows);
Var sum_all(Tape& t, Var a);
/// Rows scaled to unit L2 norm. Throws on a zero row.
Var normalize_rows(Tape& t, Var a);
/// (1 x 1) softmax cross-entropy of a (1 x K) logit row against `target`.
Var cross_entropy(Tape& t, Var logits, std::size_t target);

} // namespace ag

} // namespace dictas
