#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "malt/param_store.hpp"
#include "malt/tensor.hpp"

namespace malt {

// Handle to a node of a Graph.
struct Var {
    std::size_t id = 0;
};

// Reverse-mode tape. Nodes are appended in creation order, which is a
// topological order, so backward walks the tape once from the end.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    struct Node {
        std::string op;
        std::vector<std::size_t> parents;
        Tensor value;
        const Tensor* borrowed = nullptr;  // parameter leaves read the store in place
        Tensor grad;
        BackwardFn backward;
        std::string param;  // non-empty for parameter leaves
        bool needs_grad = false;
    };

    Var constant(Tensor value);
    // One leaf per parameter name and graph; reusing the name returns the
    // same leaf so repeated uses accumulate into one gradient. The leaf refers
    // to the store's tensor, which must not change while the graph is in use.
    Var param(ParamStore& store, const std::string& name);

    // Adds an op node. `backward` reads grad(self) and accumulates into the
    // parents via accumulate(); it only runs when the node needs a gradient.
    Var make(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward);

    const Tensor& value(Var v) const { return value(v.id); }
    const Node& node(Var v) const { return nodes_.at(v.id); }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    bool needs_grad(Var v) const { return needs_grad(v.id); }

    const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
    const Tensor& grad(Var v) const { return grad(v.id); }
    const Tensor& value(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return n.borrowed ? *n.borrowed : n.value;
    }
    void accumulate(std::size_t id, const Tensor& g);
    Tensor& grad_slot(std::size_t id);

    // Seeds d(loss)/d(loss) = 1, runs every reachable backward rule once and
    // adds parameter-leaf gradients into the bound ParamStore.
    void backward(Var loss);

private:
    std::vector<Node> nodes_;
    std::unordered_map<std::string, std::size_t> param_ids_;
    ParamStore* store_ = nullptr;
};

// Differentiable ops. All operate on rank-2 values.
Var matmul(Graph& g, Var a, Var b);
Var matmul_nt(Graph& g, Var a, Var b);  // a * b^T
Var add(Graph& g, Var a, Var b);
Var add_row(Graph& g, Var x, Var bias);  // bias (length d) added to every row
Var mul(Graph& g, Var a, Var b);         // elementwise
Var scale(Graph& g, Var a, double s);
Var gelu(Graph& g, Var x);  // tanh approximation
Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps);
Var slice_cols(Graph& g, Var x, std::size_t start, std::size_t count);
Var concat_cols(Graph& g, const std::vector<Var>& parts);
Var gather_rows(Graph& g, Var x, std::vector<std::size_t> rows);
Var sum_all(Graph& g, Var x);
Var mean_rows(Graph& g, Var x);  // 1 x d column means
// Sets columns whose key_valid flag is false to -inf. Masked entries get zero gradient.
Var mask_keys(Graph& g, Var scores, const std::vector<bool>& key_valid);
// Top-k hard mask; masked entries get zero gradient.
Var topk_mask(Graph& g, Var scores, std::size_t k);
Var softmax_rows(Graph& g, Var x);
// Mean over rows of -log softmax(logits)[row][label].
Var cross_entropy(Graph& g, Var logits, const std::vector<int>& labels);
// sum_i weights[i] * scalars[i]; every input must be 1 x 1.
Var weighted_sum(Graph& g, const std::vector<Var>& scalars, const std::vector<double>& weights);

}  // namespace malt
