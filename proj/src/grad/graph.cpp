#include "hfr/grad/graph.hpp"

#include <stdexcept>

namespace hfr::grad {

const Tensor& Var::value() const {
    if (graph == nullptr) throw std::logic_error("Var: not attached to a graph");
    return graph->value(id);
}

Var Graph::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
    return Var{this, nodes_.size() - 1};
}

Var Graph::variable(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, true});
    return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor& target) {
    Tensor copy(target.shape(), target.values());
    nodes_.push_back(Node{std::move(copy), {}, {}, {}, &target, true});
    return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (in.graph != this) throw std::logic_error("Graph::record: input belongs to another graph");
        node.inputs.push_back(in.id);
        node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

std::span<double> Graph::in_grad(std::size_t self, std::size_t k) {
    Node& in = nodes_[nodes_[self].inputs[k]];
    if (!in.requires_grad) return {};
    if (in.grad.empty()) in.grad.assign(in.value.numel(), 0.0);
    return in.grad;
}

void Graph::backward(Var loss) {
    if (loss.graph != this) throw std::logic_error("Graph::backward: loss belongs to another graph");
    Node& root = nodes_.at(loss.id);
    if (root.value.numel() != 1) {
        throw std::invalid_argument("Graph::backward: loss must be scalar, got shape " +
                                    shape_to_string(root.value.shape()));
    }
    if (!root.requires_grad) return;
    root.grad.assign(1, 1.0);

    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad || node.grad.empty()) continue;
        if (node.backward) node.backward(*this, i);
        if (node.bound != nullptr) {
            auto dst = node.bound->ensure_grad();
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += node.grad[j];
        }
    }
}

}  // namespace hfr::grad
