#include "polyseg/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace polyseg {

const Tensor& Var::value() const {
    if (!tape) fail(ErrorKind::State, "unbound Var");
    return tape->value(*this);
}

Tape::Node& Tape::node(Var v) {
    if (v.tape != this || v.id >= nodes_.size()) fail(ErrorKind::State, "Var does not belong to this tape");
    return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) fail(ErrorKind::State, "Var does not belong to this tape");
    return nodes_[v.id];
}

Var Tape::input(Tensor value, bool requires_grad) {
    Node n;
    n.op = "input";
    n.owned = std::move(value);
    n.requires_grad = record_ && requires_grad;
    n.keep_grad = n.requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor& param) {
    Node n;
    n.op = "parameter";
    n.external = &param;
    n.requires_grad = record_;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::record(std::string op, Tensor out, std::vector<Var> inputs, BackwardFn fn) {
    if (consumed_) fail(ErrorKind::State, "tape already consumed by backward(); record a fresh forward pass");
    if (!out.all_finite()) fail(ErrorKind::Numeric, "non-finite value produced by " + op);
    Node n;
    n.op = std::move(op);
    n.owned = std::move(out);
    for (const Var& in : inputs) {
        (void)node(in);
        n.inputs.push_back(in.id);
        n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
    const Node& n = node(v);
    if (released_ && !n.external && !n.inputs.empty()) {
        fail(ErrorKind::State, "intermediate value of '" + n.op + "' was released by backward()");
    }
    return n.value();
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

std::span<const float> Tape::out_grad(std::size_t id) const { return nodes_.at(id).grad; }

std::span<float> Tape::in_grad(Var input) {
    Node& n = node(input);
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.value().numel(), 0.0f);
    return n.grad;
}

void Tape::backward(Var scalar_loss) {
    if (consumed_) fail(ErrorKind::State, "backward() called twice on the same forward pass");
    if (nodes_.empty()) fail(ErrorKind::State, "backward() called before any forward pass");
    if (node(scalar_loss).value().numel() != 1) {
        fail(ErrorKind::Shape, "backward() without a seed needs a scalar, got " +
                                   node(scalar_loss).value().shape().str());
    }
    backward(scalar_loss, Tensor({1, 1, 1, 1}, 1.0f));
}

void Tape::backward(Var output, const Tensor& seed) {
    if (consumed_) fail(ErrorKind::State, "backward() called twice on the same forward pass");
    if (nodes_.empty()) fail(ErrorKind::State, "backward() called before any forward pass");
    Node& out = node(output);
    if (seed.numel() != out.value().numel()) {
        fail(ErrorKind::Shape, "backward seed shape " + seed.shape().str() + " does not match output " +
                                   out.value().shape().str());
    }
    consumed_ = true;
    if (!out.requires_grad) return;
    out.grad.assign(seed.data().begin(), seed.data().end());

    for (std::size_t i = output.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && !n.grad.empty()) n.backward(*this, i);
        // Consumers of node i ran earlier in the reverse sweep, so its value is dead now.
        if (!n.inputs.empty()) {
            n.backward = nullptr;
            n.owned = Tensor();
            std::vector<float>().swap(n.grad);
        }
    }

    for (Node& n : nodes_) {
        if (n.external && !n.grad.empty()) {
            std::span<float> g = n.external->grad();
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
        }
        if (!n.keep_grad) {
            std::vector<float>().swap(n.grad);
        } else if (n.grad.empty()) {
            n.grad.assign(n.value().numel(), 0.0f);
        }
        if (!n.inputs.empty()) {
            n.owned = Tensor();
            n.backward = nullptr;
        }
    }
    released_ = true;
}

std::span<const float> Tape::grad(Var leaf) const {
    const Node& n = node(leaf);
    if (!n.keep_grad) fail(ErrorKind::State, "gradient not retained for this Var");
    return n.grad;
}

}  // namespace polyseg
