// SPDX-License-Identifier: Apache-2.0
#pragma once

// Selective state-space scan with diagonal per-channel dynamics.
//
// Layouts, with d = inner channels, N = state size, L = sequence length:
//   x, delta, y : [d x L]
//   A           : [d x N]   (all entries < 0)
//   B, C        : [N x L]   (one N-vector per token, shared by channels)
//   D           : [d]
//   a_bar, b_bar, states : [L x d x N]
//
// Recurrence, h_0 = 0:
//   h_k = a_bar_k * h_{k-1} + b_bar_k * x_k
//   y_k = sum_n C_k[n] h_k[n] + D x_k

#include <cstddef>

#include "modem/autodiff.hpp"
#include "modem/tensor.hpp"

namespace modem::ssm {

struct DiscreteSSM {
    Tensor a_bar;
    Tensor b_bar;
};

struct ScanState {
    Tensor h;  // [d x N]
    std::size_t step = 0;
};

struct ScanResult {
    Tensor y;       // [d x L]
    Tensor states;  // [L x d x N], states[k] = h_{k+1}

    /// Hidden state after `step` tokens (step 0 is the zero initial state).
    ScanState state(std::size_t step) const;
};

struct Decomposition {
    Tensor longrange;  // C_k . (a_bar_k h_{k-1})
    Tensor local;      // C_k . (b_bar_k x_k)
};

struct ScanGrads {
    Tensor x, delta, A, B, C, D;
};

/// (exp(delta*a) - 1) / a, switching to delta * (1 + delta*a/2) for |delta*a| < 1e-8.
double zoh_input_gain(double delta, double a);
/// d gain / d a.
double zoh_input_gain_da(double delta, double a);

/// a_bar = exp(delta*A), b_bar = zoh_input_gain(delta, A) * B. Requires delta > 0.
DiscreteSSM zoh_discretize(const Tensor &A, const Tensor &delta, const Tensor &B);

ScanResult selective_scan(const Tensor &x, const DiscreteSSM &d, const Tensor &C, const Tensor &D);

/// Splits y - D*x into its long-range and local parts, replaying the state.
Decomposition decompose_output(const Tensor &x, const DiscreteSSM &d, const Tensor &C,
                               const Tensor &D);

/// Reverse-mode gradients of <dy, y> for the full discretize + scan pipeline.
ScanGrads scan_backward(const Tensor &x, const Tensor &delta, const Tensor &A, const Tensor &B,
                        const Tensor &C, const Tensor &D, const DiscreteSSM &disc,
                        const ScanResult &fwd, const Tensor &dy);

/// Tape primitive covering discretization and scan. Returns y [d x L].
ad::Var selective_scan(ad::Var x, ad::Var delta, ad::Var A, ad::Var B, ad::Var C, ad::Var D);

}  // namespace modem::ssm
