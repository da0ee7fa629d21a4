#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <vector>

#include "sstatl/tensor.hpp"

namespace sstatl {

/// Handle to a node on a specific tape.
struct Var {
    std::uint64_t tape = 0;
    std::size_t index = 0;
};

/// Reverse-mode recording of tensor operations.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order; backward() walks it in reverse. Nodes whose inputs do not
/// require gradients keep no backward closure, which makes inference on a tape
/// cheap. A tape must stay on one thread.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& grad)>;

    Tape();

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that receives a gradient.
    Var variable(Tensor value);
    /// Leaf without a gradient.
    Var constant(Tensor value);
    /// Result of an operation; `fn` propagates the node's gradient to `inputs`.
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn);
    Var record(Tensor value, const std::vector<Var>& inputs, Backward fn);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;

    /// Gradient of the last backward() target with respect to `v`. Nodes not
    /// reached by the backward pass report zeros.
    Tensor grad(Var v) const;

    /// Mutable gradient buffer for `v`, zero-allocated on first use. Only
    /// backward closures should call this.
    std::vector<double>& grad_buffer(Var v);

    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool requires_grad = false;
        Backward backward;
    };

    const Node& node(Var v) const;
    Node& node(Var v);

    std::uint64_t id_;
    std::vector<Node> nodes_;
};

}  // namespace sstatl
