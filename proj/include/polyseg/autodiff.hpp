#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "polyseg/tensor.hpp"

namespace polyseg {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode recorder. Operations append nodes in execution order; backward()
/// replays them once in reverse. A tape is single-use: after backward() its
/// intermediates are released and a second backward() is an error.
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, std::size_t node)>;

    /// With record_gradients=false nothing requires grad and no closures are kept.
    explicit Tape(bool record_gradients = true) : record_(record_gradients) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf owned by the tape. With requires_grad the gradient is readable via grad().
    Var input(Tensor value, bool requires_grad = false);
    /// Leaf referencing an external parameter; backward() adds into param.grad().
    Var parameter(Tensor& param);

    Var record(std::string op, Tensor out, std::vector<Var> inputs, BackwardFn fn);

    void backward(Var scalar_loss);
    void backward(Var output, const Tensor& seed);

    /// Gradient of a tape-owned leaf created with requires_grad, after backward().
    std::span<const float> grad(Var leaf) const;

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    bool recording() const { return record_; }
    std::size_t size() const { return nodes_.size(); }

    /// For op implementations: gradient flowing into `node`'s output.
    std::span<const float> out_grad(std::size_t node) const;
    /// For op implementations: accumulator for an input, empty if it needs no gradient.
    std::span<float> in_grad(Var input);

  private:
    struct Node {
        std::string op;
        Tensor owned;
        Tensor* external = nullptr;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool keep_grad = false;
        std::vector<float> grad;

        const Tensor& value() const { return external ? *external : owned; }
    };

    Node& node(Var v);
    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    bool record_;
    bool consumed_ = false;
    bool released_ = false;
};

}  // namespace polyseg
