// SPDX-License-Identifier: Apache-2.0
#include "modem/autodiff.hpp"

#include <cmath>

#include "modem/ops.hpp"

namespace modem::ad {

const Tensor &Var::value() const { return tape_->nodes_[id_].value; }
bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

bool GradSink::wants(std::size_t i) const { return tape_.nodes_[inputs_[i]].requires_grad; }
Tensor &GradSink::grad(std::size_t i) { return tape_.grad_buffer(inputs_[i]); }

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Tensor &Tape::grad_buffer(std::size_t id) {
    Node &n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::param(const Parameter &p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Node n;
    n.op = "param";
    n.value = p.value;
    n.param = &p;
    n.requires_grad = p.trainable;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id());
    return v;
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const Var &v : inputs) {
        if (&v.tape() != this) throw ContractError("operand recorded on a different tape");
        n.inputs.push_back(v.id());
        n.requires_grad = n.requires_grad || v.requires_grad();
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
}

void Tape::backward(Var loss) {
    if (&loss.tape() != this) throw ContractError("loss belongs to a different tape");
    if (loss.value().numel() != 1)
        throw ContractError("backward needs a scalar loss, got shape " +
                            shape_str(loss.value().shape()));
    for (Node &n : nodes_) n.grad = Tensor();
    order_.clear();
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node &n = nodes_[id];
        if (!n.requires_grad || n.grad.empty()) continue;
        order_.push_back(id);
        if (!n.backward) continue;
        GradSink sink(*this, n.inputs);
        if (!fault_op_.empty() && n.op == fault_op_) {
            n.backward(ops::scale(n.grad, fault_factor_), sink);
        } else {
            n.backward(n.grad, sink);
        }
    }
}

Tensor Tape::grad(Var v) const {
    const Node &n = nodes_[v.id()];
    return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
}

std::vector<std::pair<const Parameter *, Tensor>> Tape::param_grads() const {
    std::vector<std::pair<const Parameter *, Tensor>> out;
    for (const Node &n : nodes_) {
        if (n.param == nullptr || !n.requires_grad) continue;
        out.emplace_back(n.param, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
    }
    return out;
}

void Tape::inject_fault(std::string op, double factor) {
    fault_op_ = std::move(op);
    fault_factor_ = factor;
}

namespace {

void accumulate(Tensor &dst, const Tensor &src) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

void accumulate_scaled(Tensor &dst, const Tensor &src, double s) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += s * src[i];
}

// Expands a broadcast operand to the full shape of `like`.
Tensor expand(const Tensor &b, const Tensor &like) {
    return ops::elementwise(ops::BinaryOp::add, Tensor(like.shape()), b);
}

template <typename F>
Var unary(const char *name, Var x, Tensor value, F grad_fn) {
    return x.tape().record(name, std::move(value), {x},
                           [grad_fn](const Tensor &g, GradSink &s) {
                               if (s.wants(0)) grad_fn(g, s.grad(0));
                           });
}

}  // namespace

Var add(Var a, Var b) {
    Tensor v = ops::add(a.value(), b.value());
    const Shape bs = b.shape();
    return a.tape().record("add", std::move(v), {a, b}, [bs](const Tensor &g, GradSink &s) {
        if (s.wants(0)) accumulate(s.grad(0), g);
        if (s.wants(1)) accumulate(s.grad(1), ops::reduce_to(g, bs));
    });
}

Var sub(Var a, Var b) {
    Tensor v = ops::sub(a.value(), b.value());
    const Shape bs = b.shape();
    return a.tape().record("sub", std::move(v), {a, b}, [bs](const Tensor &g, GradSink &s) {
        if (s.wants(0)) accumulate(s.grad(0), g);
        if (s.wants(1)) accumulate_scaled(s.grad(1), ops::reduce_to(g, bs), -1.0);
    });
}

Var mul(Var a, Var b) {
    Tensor v = ops::mul(a.value(), b.value());
    Tensor av = a.value(), bv = b.value();
    return a.tape().record("mul", std::move(v), {a, b},
                           [av, bv](const Tensor &g, GradSink &s) {
                               if (s.wants(0)) accumulate(s.grad(0), ops::mul(g, bv));
                               if (s.wants(1))
                                   accumulate(s.grad(1), ops::reduce_to(ops::mul(g, av), bv.shape()));
                           });
}

Var div(Var a, Var b) {
    Tensor v = ops::div(a.value(), b.value());
    Tensor av = a.value(), bv = b.value();
    return a.tape().record("div", std::move(v), {a, b}, [av, bv](const Tensor &g, GradSink &s) {
        if (s.wants(0)) accumulate(s.grad(0), ops::div(g, bv));
        if (s.wants(1)) {
            const Tensor full_b = bv.same_shape(av) ? bv : expand(bv, av);
            Tensor t(av.shape());
            for (std::size_t i = 0; i < t.numel(); ++i)
                t[i] = -g[i] * av[i] / (full_b[i] * full_b[i]);
            accumulate(s.grad(1), ops::reduce_to(t, bv.shape()));
        }
    });
}

Var add_scalar(Var a, double c) {
    return unary("add_scalar", a, ops::elementwise(ops::BinaryOp::add, a.value(), c),
                 [](const Tensor &g, Tensor &d) { accumulate(d, g); });
}

Var mul_scalar(Var a, double c) {
    return unary("mul_scalar", a, ops::scale(a.value(), c),
                 [c](const Tensor &g, Tensor &d) { accumulate_scaled(d, g, c); });
}

Var matmul(Var a, Var b) {
    if (a.value().rank() != 2 || b.value().rank() != 2)
        throw ShapeError("ad::matmul expects matrices");
    Tensor v = ops::matmul(a.value(), b.value());
    Tensor av = a.value(), bv = b.value();
    return a.tape().record("matmul", std::move(v), {a, b},
                           [av, bv](const Tensor &g, GradSink &s) {
                               if (s.wants(0)) accumulate(s.grad(0), ops::matmul(g, ops::transpose(bv)));
                               if (s.wants(1)) accumulate(s.grad(1), ops::matmul(ops::transpose(av), g));
                           });
}

Var transpose(Var a) {
    return unary("transpose", a, ops::transpose(a.value()),
                 [](const Tensor &g, Tensor &d) { accumulate(d, ops::transpose(g)); });
}

Var reshape(Var a, Shape shape) {
    return unary("reshape", a, a.value().reshaped(std::move(shape)),
                 [](const Tensor &g, Tensor &d) {
                     for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g[i];
                 });
}

Var slice0(Var a, std::size_t begin, std::size_t count) {
    const std::size_t block = a.value().numel() / a.value().dim(0);
    return unary("slice0", a, ops::slice0(a.value(), begin, count),
                 [begin, block](const Tensor &g, Tensor &d) {
                     for (std::size_t i = 0; i < g.numel(); ++i) d[begin * block + i] += g[i];
                 });
}

Var concat0(Var a, Var b) {
    const std::size_t na = a.value().numel();
    return a.tape().record("concat0", ops::concat0(a.value(), b.value()), {a, b},
                           [na](const Tensor &g, GradSink &s) {
                               if (s.wants(0)) {
                                   Tensor &d = s.grad(0);
                                   for (std::size_t i = 0; i < na; ++i) d[i] += g[i];
                               }
                               if (s.wants(1)) {
                                   Tensor &d = s.grad(1);
                                   for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g[na + i];
                               }
                           });
}

Var conv2d(Var x, Var w, std::size_t stride, std::size_t pad) {
    Tensor v = ops::conv2d(x.value(), w.value(), stride, pad);
    Tensor xv = x.value(), wv = w.value();
    return x.tape().record("conv2d", std::move(v), {x, w},
                           [xv, wv, stride, pad](const Tensor &g, GradSink &s) {
                               if (s.wants(0))
                                   accumulate(s.grad(0),
                                              ops::conv2d_grad_input(g, wv, xv.shape(), stride, pad));
                               if (s.wants(1))
                                   accumulate(s.grad(1),
                                              ops::conv2d_grad_weight(g, xv, wv.shape(), stride, pad));
                           });
}

Var layernorm(Var x, double eps) {
    auto r = ops::layernorm(x.value(), eps);
    Tensor y = r.normalized;
    Tensor rstd = std::move(r.rstd);
    return unary("layernorm", x, std::move(r.normalized),
                 [y, rstd](const Tensor &g, Tensor &d) {
                     const std::size_t c = y.dim(0);
                     const std::size_t positions = y.numel() / c;
                     const double inv_c = 1.0 / static_cast<double>(c);
                     for (std::size_t p = 0; p < positions; ++p) {
                         double sg = 0.0, sgy = 0.0;
                         for (std::size_t ch = 0; ch < c; ++ch) {
                             sg += g[ch * positions + p];
                             sgy += g[ch * positions + p] * y[ch * positions + p];
                         }
                         for (std::size_t ch = 0; ch < c; ++ch) {
                             const std::size_t i = ch * positions + p;
                             d[i] += rstd[p] * (g[i] - inv_c * sg - y[i] * inv_c * sgy);
                         }
                     }
                 });
}

Var silu(Var x) {
    Tensor xv = x.value();
    return unary("silu", x, ops::silu(xv), [xv](const Tensor &g, Tensor &d) {
        for (std::size_t i = 0; i < d.numel(); ++i) {
            const double s = ops::sigmoid(xv[i]);
            d[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
        }
    });
}

Var sigmoid(Var x) {
    Tensor y = ops::sigmoid(x.value());
    return unary("sigmoid", x, y, [y](const Tensor &g, Tensor &d) {
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var softplus(Var x) {
    Tensor xv = x.value();
    return unary("softplus", x, ops::softplus(xv), [xv](const Tensor &g, Tensor &d) {
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g[i] * ops::sigmoid(xv[i]);
    });
}

Var exp(Var x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = std::exp(x.value()[i]);
    return unary("exp", x, y, [y](const Tensor &g, Tensor &d) {
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g[i] * y[i];
    });
}

Var softmax(Var x, std::size_t axis) {
    Tensor y = ops::softmax(x.value(), axis);
    return unary("softmax", x, y, [y, axis](const Tensor &g, Tensor &d) {
        const auto &s = y.shape();
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
        for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
        const std::size_t n = s[axis];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                double dotp = 0.0;
                for (std::size_t j = 0; j < n; ++j) dotp += g[base + j * inner] * y[base + j * inner];
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t i = base + j * inner;
                    d[i] += y[i] * (g[i] - dotp);
                }
            }
    });
}

Var pixel_shuffle(Var x, std::size_t r) {
    return unary("pixel_shuffle", x, ops::pixel_shuffle(x.value(), r),
                 [r](const Tensor &g, Tensor &d) { accumulate(d, ops::pixel_unshuffle(g, r)); });
}

Var pixel_unshuffle(Var x, std::size_t r) {
    return unary("pixel_unshuffle", x, ops::pixel_unshuffle(x.value(), r),
                 [r](const Tensor &g, Tensor &d) { accumulate(d, ops::pixel_shuffle(g, r)); });
}

Var global_avg_pool(Var x) {
    const std::size_t c = x.value().dim(0);
    const std::size_t n = x.value().numel() / c;
    return unary("global_avg_pool", x, ops::global_avg_pool(x.value()),
                 [n](const Tensor &g, Tensor &d) {
                     const double inv = 1.0 / static_cast<double>(n);
                     for (std::size_t ch = 0; ch < g.numel(); ++ch)
                         for (std::size_t i = 0; i < n; ++i) d[ch * n + i] += g[ch] * inv;
                 });
}

Var reflect_pad(Var x, std::size_t pad_bottom, std::size_t pad_right) {
    const std::size_t h = x.value().dim(1), w = x.value().dim(2);
    return unary("reflect_pad", x, ops::reflect_pad(x.value(), pad_bottom, pad_right),
                 [h, w](const Tensor &g, Tensor &d) {
                     const std::size_t hp = g.dim(1), wp = g.dim(2);
                     auto refl = [](std::size_t i, std::size_t n) {
                         return i < n ? i : 2 * (n - 1) - i;
                     };
                     for (std::size_t c = 0; c < g.dim(0); ++c)
                         for (std::size_t y = 0; y < hp; ++y)
                             for (std::size_t xx = 0; xx < wp; ++xx)
                                 d.at(c, refl(y, h), refl(xx, w)) += g.at(c, y, xx);
                 });
}

Var crop(Var x, std::size_t height, std::size_t width) {
    return unary("crop", x, ops::crop(x.value(), height, width), [](const Tensor &g, Tensor &d) {
        for (std::size_t c = 0; c < g.dim(0); ++c)
            for (std::size_t y = 0; y < g.dim(1); ++y)
                for (std::size_t xx = 0; xx < g.dim(2); ++xx) d.at(c, y, xx) += g.at(c, y, xx);
    });
}

Var index_columns(Var x, std::vector<std::uint32_t> index) {
    const Tensor &xv = x.value();
    if (xv.rank() != 2) throw ShapeError("index_columns expects [C x L], got " + shape_str(xv.shape()));
    const std::size_t c = xv.dim(0), l = xv.dim(1), lo = index.size();
    if (lo == 0) throw ShapeError("index_columns needs a non-empty index");
    Tensor out({c, lo});
    for (std::size_t k = 0; k < lo; ++k)
        if (index[k] >= l) throw ShapeError("index_columns index out of range");
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double *src = xv.data().data() + ch * l;
        double *dst = out.data().data() + ch * lo;
        for (std::size_t k = 0; k < lo; ++k) dst[k] = src[index[k]];
    }
    return unary("index_columns", x, std::move(out),
                 [index = std::move(index), l](const Tensor &g, Tensor &d) {
                     const std::size_t c = g.dim(0), lo = g.dim(1);
                     for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t k = 0; k < lo; ++k) d[ch * l + index[k]] += g[ch * lo + k];
                 });
}

Var sum(Var x) {
    return unary("sum", x, Tensor::scalar(ops::sum(x.value())), [](const Tensor &g, Tensor &d) {
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g[0];
    });
}

Var mean(Var x) {
    const double n = static_cast<double>(x.value().numel());
    return unary("mean", x, Tensor::scalar(ops::sum(x.value()) / n),
                 [n](const Tensor &g, Tensor &d) {
                     for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g[0] / n;
                 });
}

Var dot(Var x, const Tensor &weights) {
    if (!x.value().same_shape(weights))
        throw ShapeError("dot weights " + shape_str(weights.shape()) + " do not match " +
                         shape_str(x.shape()));
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.numel(); ++i) acc += x.value()[i] * weights[i];
    return unary("dot", x, Tensor::scalar(acc), [weights](const Tensor &g, Tensor &d) {
        accumulate_scaled(d, weights, g[0]);
    });
}

}  // namespace modem::ad
