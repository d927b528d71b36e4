#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Graph records every operation applied to its variables in creation
// order, which is a valid topological order. Leaves are either trainable
// weights or activation-override slots; `backward` returns the gradient of a
// scalar root with respect to any requested set of leaves.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ircan/tensor.hpp"

namespace ircan {

class Graph;

// Handle to a node inside one Graph.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

class Graph {
public:
    using Sink = std::function<void(std::size_t parent_slot, Tensor&& contribution)>;
    using BackwardFn = std::function<void(const Tensor& grad_out, const Sink& sink)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var leaf(std::shared_ptr<const Tensor> value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Records an op node. `backward` is dropped when no parent needs a gradient.
    Var record(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op);

    const Tensor& value(std::size_t id) const { return *nodes_.at(id).value; }
    std::shared_ptr<const Tensor> shared_value(std::size_t id) const { return nodes_.at(id).value; }
    bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
    bool is_leaf(std::size_t id) const { return nodes_.at(id).is_leaf; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // d root / d leaf for every entry of `leaves`, in the same order. Leaves the
    // root does not depend on get a zero tensor. Throws UnknownLeafError for a
    // handle that is not a gradient-carrying leaf of this graph, DimensionError
    // for a non-scalar root.
    std::vector<Tensor> backward(Var root, std::span<const Var> leaves) const;
    Tensor backward(Var root, Var leaf) const;

    // Number of nodes visited by the most recent backward call.
    std::size_t last_backward_visits() const noexcept { return last_visits_; }

private:
    struct Node {
        std::shared_ptr<const Tensor> value;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        bool needs_grad = false;
        bool is_leaf = false;
    };
    std::vector<Node> nodes_;
    mutable std::size_t last_visits_ = 0;
};

inline const Tensor& Var::value() const { return graph->value(id); }

// ---- differentiable ops ---------------------------------------------------
// All ops validate shapes (DimensionError) and reject non-finite results
// (NumericError).

Var matmul(Var a, Var b);          // [m x k] . [k x n]
Var transpose(Var a);              // [m x n] -> [n x m]
Var add(Var a, Var b);             // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);             // elementwise
Var scale(Var a, double s);
Var add_row(Var a, Var v);         // a[m x n] + v[n] broadcast over rows
Var mul_row(Var a, Var v);         // a[m x n] * v[n] broadcast over rows
Var gelu(Var a);                   // tanh approximation
Var silu(Var a);
Var exp(Var a);
Var log(Var a);
Var sum(Var a);                    // -> scalar
Var softmax(Var a);                // rank-1
Var softmax_rows(Var a);
Var causal_softmax_rows(Var a);    // square; entries above the diagonal masked
Var log_softmax_rows(Var a);
Var layer_norm_rows(Var a, double eps);
Var rms_norm_rows(Var a, double eps);
Var embedding(Var table, std::span<const int> ids);  // gather rows
Var select_row(Var a, std::size_t r);                // -> [1 x n]
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var pick(Var a, std::size_t flat_index);             // -> scalar
Var pick_rows(Var a, std::span<const int> cols);     // -> [rows], a[r, cols[r]]
Var rotary(Var a, double base);                      // rotate-half RoPE, positions 0..rows-1
// Copy of a[T x F] with a[row, cols[i]] replaced by leaf[i].
Var override_row(Var a, std::size_t row, std::span<const int> cols, Var leaf);

// Non-differentiable helpers on plain tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x);

// Central difference (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace ircan
