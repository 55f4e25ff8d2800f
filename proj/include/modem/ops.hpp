// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forward (and matching adjoint) kernels on plain tensors. The autodiff layer
// in autodiff.hpp wraps these; they are also usable directly for inference.

#include <cstddef>

#include "modem/tensor.hpp"

namespace modem::ops {

enum class BinaryOp { add, sub, mul, div };

/// Division-by-zero policy: strict raises ContractError, ieee yields +-Inf/NaN.
enum class DivByZero { strict, ieee };

/// `b` must have a's shape, be a single element, or have a shape that is a
/// leading prefix of a's shape (then it is broadcast along the trailing axes,
/// e.g. a per-channel vector [C] against a [C x H x W] map).
Tensor elementwise(BinaryOp op, const Tensor &a, const Tensor &b,
                   DivByZero policy = DivByZero::strict);
Tensor elementwise(BinaryOp op, const Tensor &a, double b, DivByZero policy = DivByZero::strict);

inline Tensor add(const Tensor &a, const Tensor &b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor &a, const Tensor &b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor &a, const Tensor &b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor div(const Tensor &a, const Tensor &b, DivByZero policy = DivByZero::strict) {
    return elementwise(BinaryOp::div, a, b, policy);
}
Tensor scale(const Tensor &a, double s);

/// Number of trailing elements each entry of `b` is broadcast over (see elementwise).
std::size_t broadcast_block(const Tensor &a, const Tensor &b);
/// Sums `g` (shaped like a) down to the shape of a broadcast operand.
Tensor reduce_to(const Tensor &g, const Shape &target);

/// a: [..., m, k]; b: [k, n] or [..., k, n] with matching leading axes.
Tensor matmul(const Tensor &a, const Tensor &b);
/// 2-D transpose.
Tensor transpose(const Tensor &a);

/// x: [C_in x H x W], w: [C_out x C_in x k x k], zero padding.
Tensor conv2d(const Tensor &x, const Tensor &w, std::size_t stride, std::size_t pad);
Tensor conv2d_grad_input(const Tensor &grad_out, const Tensor &w, const Shape &x_shape,
                         std::size_t stride, std::size_t pad);
Tensor conv2d_grad_weight(const Tensor &grad_out, const Tensor &x, const Shape &w_shape,
                          std::size_t stride, std::size_t pad);

struct LayerNormResult {
    Tensor normalized;  // same shape as input
    Tensor rstd;        // one entry per position (product of trailing extents)
};
/// Normalizes over axis 0 (channels) independently at each trailing position.
/// Variance is the biased (population) estimate.
LayerNormResult layernorm(const Tensor &x, double eps);

double sigmoid(double x);
double softplus(double x);
Tensor silu(const Tensor &x);
Tensor sigmoid(const Tensor &x);
Tensor softplus(const Tensor &x);
/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor &x, std::size_t axis);

/// [C*r*r x H x W] -> [C x rH x rW]; out[c][y*r+dy][x*r+dx] = in[c*r*r + dy*r + dx][y][x].
Tensor pixel_shuffle(const Tensor &x, std::size_t r);
/// Inverse of pixel_shuffle.
Tensor pixel_unshuffle(const Tensor &x, std::size_t r);

/// Mean over every axis but the first: [C x ...] -> [C].
Tensor global_avg_pool(const Tensor &x);

/// Reflect-pads a [C x H x W] map at the bottom and right (no edge repeat).
Tensor reflect_pad(const Tensor &x, std::size_t pad_bottom, std::size_t pad_right);
/// Top-left crop of a [C x H x W] map.
Tensor crop(const Tensor &x, std::size_t height, std::size_t width);

/// Concatenation along axis 0.
Tensor concat0(const Tensor &a, const Tensor &b);
/// Rows [begin, begin+count) along axis 0.
Tensor slice0(const Tensor &x, std::size_t begin, std::size_t count);

double sum(const Tensor &x);
double max_abs_diff(const Tensor &a, const Tensor &b);

}  // namespace modem::ops
