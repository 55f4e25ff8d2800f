// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tape-based reverse-mode differentiation over a closed primitive set.
//
// Every primitive appends one node to the tape. Node ids increase in
// recording order, so walking the ids backwards from the loss is a reverse
// topological traversal; Tape::backward visits each reachable node once.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "modem/tensor.hpp"

namespace modem {

/// A named learnable tensor. Frozen parameters enter a tape as constants.
struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
};

namespace ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as its tape lives.
class Var {
  public:
    Var() = default;
    Var(Tape *tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor &value() const;
    const Shape &shape() const { return value().shape(); }
    bool requires_grad() const;
    Tape &tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

  private:
    Tape *tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Gradient buffers of a node's inputs, handed to its backward function.
class GradSink {
  public:
    GradSink(Tape &tape, std::span<const std::size_t> inputs) : tape_(tape), inputs_(inputs) {}
    /// False if input i does not lead to any differentiable leaf.
    bool wants(std::size_t i) const;
    /// Zero-initialized on first access; accumulate into it.
    Tensor &grad(std::size_t i);

  private:
    Tape &tape_;
    std::span<const std::size_t> inputs_;
};

using BackwardFn = std::function<void(const Tensor &grad_out, GradSink &sink)>;

class Tape {
  public:
    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    Var constant(Tensor value);
    /// Differentiable input that is not a model parameter.
    Var leaf(Tensor value);
    /// Parameter leaf. Recording the same parameter twice yields the same node.
    Var param(const Parameter &p);

    /// Appends a primitive. `fn` is dropped when no input requires a gradient.
    Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn fn);

    /// Reverse sweep from a single-element loss node. Throws ContractError otherwise.
    void backward(Var loss);

    /// Gradient of the loss w.r.t. v after backward(); zeros if none reached v.
    Tensor grad(Var v) const;
    /// Gradients of every trainable parameter recorded on this tape.
    std::vector<std::pair<const Parameter *, Tensor>> param_grads() const;

    /// Node ids in the order the last backward() processed them.
    const std::vector<std::size_t> &backward_order() const noexcept { return order_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const std::string &op_name(std::size_t id) const { return nodes_[id].op; }

    /// Scales the upstream gradient seen by every primitive named `op`.
    /// Used to build negative controls for gradient checking.
    void inject_fault(std::string op, double factor);

  private:
    friend class Var;
    friend class GradSink;

    struct Node {
        std::string op;
        Tensor value;
        Tensor grad;  // empty until touched during backward
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        const Parameter *param = nullptr;
        bool requires_grad = false;
    };

    Var push(Node node);
    Tensor &grad_buffer(std::size_t id);

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter *, std::size_t> param_nodes_;
    std::vector<std::size_t> order_;
    std::string fault_op_;
    double fault_factor_ = 1.0;
};

// Differentiable primitives. Shapes follow the kernels in ops.hpp.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);

Var matmul(Var a, Var b);  // 2-D
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var slice0(Var a, std::size_t begin, std::size_t count);
Var concat0(Var a, Var b);

Var conv2d(Var x, Var w, std::size_t stride, std::size_t pad);
/// Channel-axis normalization without affine; see ops::layernorm.
Var layernorm(Var x, double eps);

Var silu(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
Var exp(Var x);
Var softmax(Var x, std::size_t axis);

Var pixel_shuffle(Var x, std::size_t r);
Var pixel_unshuffle(Var x, std::size_t r);
Var global_avg_pool(Var x);
Var reflect_pad(Var x, std::size_t pad_bottom, std::size_t pad_right);
Var crop(Var x, std::size_t height, std::size_t width);

/// out[c][k] = x[c][index[k]] for x of shape [C x L]; index has length L'.
Var index_columns(Var x, std::vector<std::uint32_t> index);

Var sum(Var x);
Var mean(Var x);
/// <x, weights> as a single-element tensor; weights are constant.
Var dot(Var x, const Tensor &weights);

}  // namespace ad
}  // namespace modem
