// SPDX-License-Identifier: Apache-2.0
#pragma once

// Parameterized building blocks recorded onto an autodiff tape.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "modem/autodiff.hpp"

namespace modem::nn {

using ParamList = std::vector<Parameter *>;
using Rng = std::mt19937_64;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for linear and conv weights.
Tensor fan_in_uniform(const Shape &shape, std::size_t fan_in, Rng &rng);

/// y = W x + b for x of shape [in x L] (or [in], treated as one column).
class Linear {
  public:
    Linear() = default;
    Linear(std::string name, std::size_t in, std::size_t out, Rng &rng, bool bias = true);

    ad::Var operator()(ad::Tape &tape, ad::Var x) const;
    void parameters(ParamList &out);

    Parameter weight;  // [out x in]
    Parameter bias;    // [out], empty when disabled
    std::size_t in = 0, out = 0;
};

/// Zero-padded "same" convolution (odd kernel) with optional stride.
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, Rng &rng,
           std::size_t stride = 1);

    ad::Var operator()(ad::Tape &tape, ad::Var x) const;
    void parameters(ParamList &out);
    void zero();

    Parameter weight;  // [out x in x k x k]
    Parameter bias;    // [out]
    std::size_t stride = 1;
};

/// Normalization over the channel axis with a learnable per-channel affine.
class LayerNorm {
  public:
    LayerNorm() = default;
    LayerNorm(std::string name, std::size_t channels, double eps = 1e-5);

    ad::Var operator()(ad::Tape &tape, ad::Var x) const;
    void parameters(ParamList &out);

    Parameter gamma, beta;
    double eps = 1e-5;
};

/// Squeeze-excitation channel attention: F * sigmoid(W2 silu(W1 avgpool(F))).
class ChannelAttention {
  public:
    ChannelAttention() = default;
    ChannelAttention(std::string name, std::size_t channels, Rng &rng, std::size_t reduction = 4);

    ad::Var operator()(ad::Tape &tape, ad::Var x) const;
    /// The per-channel gate alone, shape [C].
    ad::Var gate(ad::Tape &tape, ad::Var x) const;
    void parameters(ParamList &out);

    Linear squeeze, excite;
};

std::size_t count_parameters(const ParamList &params);

/// Adds Uniform(-scale, scale) noise to every parameter; used so checks do not sit on
/// special initializations (zeros, identities).
void jitter(const ParamList &params, Rng &rng, double scale);

}  // namespace modem::nn
