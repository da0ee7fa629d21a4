#include "sstatl/tape.hpp"

#include <atomic>

namespace sstatl {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Var Tape::variable(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, true, {}});
    return Var{id_, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}});
    return Var{id_, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    bool needs = false;
    for (Var in : inputs) needs = needs || node(in).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : Backward{}});
    return Var{id_, nodes_.size() - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward fn) {
    bool needs = false;
    for (Var in : inputs) needs = needs || node(in).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : Backward{}});
    return Var{id_, nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
    if (v.tape != id_ || v.index >= nodes_.size())
        throw Error(Errc::out_of_range, "variable is not on this tape");
    return nodes_[v.index];
}

Tape::Node& Tape::node(Var v) {
    if (v.tape != id_ || v.index >= nodes_.size())
        throw Error(Errc::out_of_range, "variable is not on this tape");
    return nodes_[v.index];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor(n.value.shape);
    return Tensor(n.value.shape, n.grad);
}

std::vector<double>& Tape::grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

void Tape::backward(Var loss) {
    Node& target = node(loss);
    if (target.value.size() != 1)
        throw Error(Errc::shape_mismatch, "backward() needs a scalar loss, got " + shape_string(target.value.shape));
    for (Node& n : nodes_) n.grad.clear();
    target.grad.assign(1, 1.0);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.empty()) continue;
        // The closure may allocate other nodes' buffers but never this one's.
        const Tensor g(n.value.shape, n.grad);
        n.backward(*this, g);
    }
}

}  // namespace sstatl
