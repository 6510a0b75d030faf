#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hfr/grad/tensor.hpp"

namespace hfr::grad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Propagates the gradient of node `self` into its inputs.
using BackwardFn = std::function<void(Graph& graph, std::size_t self)>;

/// Append-only reverse-mode tape.
///
/// Nodes are recorded in evaluation order, so inputs always precede their
/// consumers and the backward sweep is a single reverse walk. Leaves bound
/// to an external tensor (model parameters) push their gradient into that
/// tensor's grad buffer, accumulating additively.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    /// Leaf that never receives a gradient.
    Var constant(Tensor value);
    /// Leaf that receives a gradient readable through grad().
    Var variable(Tensor value);
    /// Leaf whose gradient is accumulated into `target.grad()` by backward().
    /// The tensor must outlive the graph.
    Var parameter(Tensor& target);

    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

    /// Runs the reverse sweep from a scalar node. Throws on non-scalar loss.
    void backward(Var loss);

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t input(std::size_t self, std::size_t k) const { return nodes_[self].inputs[k]; }

    /// Gradient accumulated on a node; empty if the node takes no gradient or
    /// none has reached it.
    std::span<const double> grad(Var v) const { return nodes_.at(v.id).grad; }

    /// Incoming gradient of `self` during backward.
    std::span<const double> out_grad(std::size_t self) const { return nodes_[self].grad; }
    /// Gradient buffer of the k-th input of `self`, allocated on first use.
    /// Empty when that input does not require a gradient.
    std::span<double> in_grad(std::size_t self, std::size_t k);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        std::vector<double> grad;
        BackwardFn backward;
        Tensor* bound = nullptr;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
};

}  // namespace hfr::grad
