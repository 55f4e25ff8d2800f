// SPDX-License-Identifier: Apache-2.0
#include "modem/layers.hpp"

#include <algorithm>
#include <cmath>

namespace modem::nn {

Tensor fan_in_uniform(const Shape &shape, std::size_t fan_in, Rng &rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(shape);
    for (double &v : t.storage()) v = dist(rng);
    return t;
}

Linear::Linear(std::string name, std::size_t in_, std::size_t out_, Rng &rng, bool with_bias)
    : in(in_), out(out_) {
    weight = {name + ".weight", fan_in_uniform({out, in}, in, rng)};
    if (with_bias) bias = {name + ".bias", fan_in_uniform({out}, in, rng)};
}

ad::Var Linear::operator()(ad::Tape &tape, ad::Var x) const {
    const bool vec = x.shape().size() == 1;
    if (vec) x = ad::reshape(x, {x.shape()[0], 1});
    ad::Var y = ad::matmul(tape.param(weight), x);
    if (!bias.value.empty()) y = ad::add(y, tape.param(bias));
    return vec ? ad::reshape(y, {out}) : y;
}

void Linear::parameters(ParamList &list) {
    list.push_back(&weight);
    if (!bias.value.empty()) list.push_back(&bias);
}

Conv2d::Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, Rng &rng,
               std::size_t stride_)
    : stride(stride_) {
    const std::size_t fan = in * kernel * kernel;
    weight = {name + ".weight", fan_in_uniform({out, in, kernel, kernel}, fan, rng)};
    bias = {name + ".bias", fan_in_uniform({out}, fan, rng)};
}

ad::Var Conv2d::operator()(ad::Tape &tape, ad::Var x) const {
    const std::size_t k = weight.value.dim(2);
    return ad::add(ad::conv2d(x, tape.param(weight), stride, k / 2), tape.param(bias));
}

void Conv2d::parameters(ParamList &list) {
    list.push_back(&weight);
    list.push_back(&bias);
}

void Conv2d::zero() {
    std::fill(weight.value.storage().begin(), weight.value.storage().end(), 0.0);
    std::fill(bias.value.storage().begin(), bias.value.storage().end(), 0.0);
}

LayerNorm::LayerNorm(std::string name, std::size_t channels, double eps_)
    : gamma{name + ".gamma", Tensor({channels}, 1.0)},
      beta{name + ".beta", Tensor({channels}, 0.0)},
      eps(eps_) {}

ad::Var LayerNorm::operator()(ad::Tape &tape, ad::Var x) const {
    return ad::add(ad::mul(ad::layernorm(x, eps), tape.param(gamma)), tape.param(beta));
}

void LayerNorm::parameters(ParamList &list) {
    list.push_back(&gamma);
    list.push_back(&beta);
}

ChannelAttention::ChannelAttention(std::string name, std::size_t channels, Rng &rng,
                                   std::size_t reduction) {
    const std::size_t hidden = std::max<std::size_t>(channels / reduction, 1);
    squeeze = Linear(name + ".squeeze", channels, hidden, rng);
    excite = Linear(name + ".excite", hidden, channels, rng);
}

ad::Var ChannelAttention::gate(ad::Tape &tape, ad::Var x) const {
    return ad::sigmoid(excite(tape, ad::silu(squeeze(tape, ad::global_avg_pool(x)))));
}

ad::Var ChannelAttention::operator()(ad::Tape &tape, ad::Var x) const {
    return ad::mul(x, gate(tape, x));
}

void ChannelAttention::parameters(ParamList &list) {
    squeeze.parameters(list);
    excite.parameters(list);
}

std::size_t count_parameters(const ParamList &params) {
    std::size_t n = 0;
    for (const Parameter *p : params) n += p->value.numel();
    return n;
}

void jitter(const ParamList &params, Rng &rng, double scale) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (Parameter *p : params)
        for (double &v : p->value.storage()) v += dist(rng);
}

}  // namespace modem::nn
