// SPDX-License-Identifier: Apache-2.0
#include "modem/ssm.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <tuple>

namespace modem::ssm {

namespace {

struct Extents {
    std::size_t d, n, l;
};

Extents check_extents(const Tensor &x, const Tensor &a_bar, const Tensor &C, const Tensor &D) {
    if (x.rank() != 2) throw ShapeError("scan input must be [d x L], got " + shape_str(x.shape()));
    const Extents e{x.dim(0), C.rank() == 2 ? C.dim(0) : 0, x.dim(1)};
    if (C.shape() != Shape{e.n, e.l})
        throw ShapeError("C must be [N x L], got " + shape_str(C.shape()));
    if (a_bar.shape() != Shape{e.l, e.d, e.n})
        throw ShapeError("discrete parameters must be [L x d x N], got " + shape_str(a_bar.shape()));
    if (D.shape() != Shape{e.d}) throw ShapeError("D must be [d], got " + shape_str(D.shape()));
    return e;
}

}  // namespace

ScanState ScanResult::state(std::size_t step) const {
    const std::size_t l = states.dim(0), d = states.dim(1), n = states.dim(2);
    if (step > l) throw ContractError("scan state index beyond sequence length");
    ScanState s{Tensor({d, n}), step};
    if (step == 0) return s;
    for (std::size_t i = 0; i < d * n; ++i) s.h[i] = states[(step - 1) * d * n + i];
    return s;
}

double zoh_input_gain(double delta, double a) {
    const double x = delta * a;
    if (std::abs(x) < 1e-8) return delta * (1.0 + 0.5 * x);
    return delta * (std::expm1(x) / x);
}

double zoh_input_gain_da(double delta, double a) {
    // gain = delta * expm1(x)/x with x = delta*a, so d gain/d a = delta^2 * phi(x),
    // phi(x) = (x e^x - expm1(x)) / x^2.
    const double x = delta * a;
    double phi;
    if (std::abs(x) < 1e-2) {
        phi = 0.5 + x * (1.0 / 3.0 + x * (1.0 / 8.0 + x * (1.0 / 30.0 + x * (1.0 / 144.0 + x / 840.0))));
    } else {
        phi = (x * std::exp(x) - std::expm1(x)) / (x * x);
    }
    return delta * delta * phi;
}

DiscreteSSM zoh_discretize(const Tensor &A, const Tensor &delta, const Tensor &B) {
    if (A.rank() != 2 || delta.rank() != 2 || B.rank() != 2)
        throw ShapeError("zoh_discretize expects A [d x N], delta [d x L], B [N x L]");
    const std::size_t d = A.dim(0), n = A.dim(1), l = delta.dim(1);
    if (delta.dim(0) != d || B.dim(0) != n || B.dim(1) != l)
        throw ShapeError("zoh_discretize extents disagree: A " + shape_str(A.shape()) + ", delta " +
                         shape_str(delta.shape()) + ", B " + shape_str(B.shape()));
    DiscreteSSM out{Tensor({l, d, n}), Tensor({l, d, n})};
    for (std::size_t k = 0; k < l; ++k)
        for (std::size_t c = 0; c < d; ++c) {
            const double dt = delta[c * l + k];
            if (!(dt > 0.0)) throw ContractError("timescale delta must be positive");
            for (std::size_t s = 0; s < n; ++s) {
                const double a = A[c * n + s];
                const std::size_t i = (k * d + c) * n + s;
                out.a_bar[i] = std::exp(dt * a);
                out.b_bar[i] = zoh_input_gain(dt, a) * B[s * l + k];
            }
        }
    return out;
}

ScanResult selective_scan(const Tensor &x, const DiscreteSSM &disc, const Tensor &C,
                          const Tensor &D) {
    const auto [d, n, l] = check_extents(x, disc.a_bar, C, D);
    ScanResult r{Tensor({d, l}), Tensor({l, d, n})};
    std::vector<double> h(d * n, 0.0);
    for (std::size_t k = 0; k < l; ++k) {
        const double *ab = disc.a_bar.data().data() + k * d * n;
        const double *bb = disc.b_bar.data().data() + k * d * n;
        double *hk = r.states.data().data() + k * d * n;
        for (std::size_t c = 0; c < d; ++c) {
            const double xv = x[c * l + k];
            double acc = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const std::size_t i = c * n + s;
                h[i] = ab[i] * h[i] + bb[i] * xv;
                hk[i] = h[i];
                acc += C[s * l + k] * h[i];
            }
            r.y[c * l + k] = acc + D[c] * xv;
        }
    }
    return r;
}

Decomposition decompose_output(const Tensor &x, const DiscreteSSM &disc, const Tensor &C,
                               const Tensor &D) {
    const auto [d, n, l] = check_extents(x, disc.a_bar, C, D);
    Decomposition out{Tensor({d, l}), Tensor({d, l})};
    std::vector<double> h(d * n, 0.0);
    for (std::size_t k = 0; k < l; ++k) {
        const double *ab = disc.a_bar.data().data() + k * d * n;
        const double *bb = disc.b_bar.data().data() + k * d * n;
        for (std::size_t c = 0; c < d; ++c) {
            const double xv = x[c * l + k];
            double lr = 0.0, loc = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const std::size_t i = c * n + s;
                const double carried = ab[i] * h[i];
                const double injected = bb[i] * xv;
                lr += C[s * l + k] * carried;
                loc += C[s * l + k] * injected;
                h[i] = carried + injected;
            }
            out.longrange[c * l + k] = lr;
            out.local[c * l + k] = loc;
        }
    }
    return out;
}

ScanGrads scan_backward(const Tensor &x, const Tensor &delta, const Tensor &A, const Tensor &B,
                        const Tensor &C, const Tensor &D, const DiscreteSSM &disc,
                        const ScanResult &fwd, const Tensor &dy) {
    const auto [d, n, l] = check_extents(x, disc.a_bar, C, D);
    if (!dy.same_shape(x)) throw ShapeError("upstream gradient must match y");
    ScanGrads g{Tensor(x.shape()), Tensor(delta.shape()), Tensor(A.shape()),
                Tensor(B.shape()), Tensor(C.shape()), Tensor(D.shape())};
    std::vector<double> dh(d * n, 0.0);
    for (std::size_t k = l; k-- > 0;) {
        const double *ab = disc.a_bar.data().data() + k * d * n;
        const double *bb = disc.b_bar.data().data() + k * d * n;
        const double *hk = fwd.states.data().data() + k * d * n;
        const double *hprev = k > 0 ? fwd.states.data().data() + (k - 1) * d * n : nullptr;
        for (std::size_t c = 0; c < d; ++c) {
            const double gy = dy[c * l + k];
            const double xv = x[c * l + k];
            const double dt = delta[c * l + k];
            g.D[c] += gy * xv;
            double dx = D[c] * gy;
            double ddt = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const std::size_t i = c * n + s;
                const double a = A[i];
                const double bk = B[s * l + k];
                g.C[s * l + k] += gy * hk[i];
                const double dhi = dh[i] + C[s * l + k] * gy;
                const double hp = hprev ? hprev[i] : 0.0;
                const double da_bar = dhi * hp;
                const double db_bar = dhi * xv;
                dx += dhi * bb[i];
                // a_bar = exp(dt*a); b_bar = gain(dt, a) * B
                ddt += da_bar * a * ab[i] + db_bar * bk * ab[i];
                g.A[i] += da_bar * dt * ab[i] + db_bar * bk * zoh_input_gain_da(dt, a);
                g.B[s * l + k] += db_bar * zoh_input_gain(dt, a);
                dh[i] = dhi * ab[i];
            }
            g.x[c * l + k] = dx;
            g.delta[c * l + k] = ddt;
        }
    }
    return g;
}

ad::Var selective_scan(ad::Var x, ad::Var delta, ad::Var A, ad::Var B, ad::Var C, ad::Var D) {
    DiscreteSSM disc = zoh_discretize(A.value(), delta.value(), B.value());
    ScanResult fwd = selective_scan(x.value(), disc, C.value(), D.value());
    Tensor y = fwd.y;
    auto saved = std::make_shared<std::tuple<Tensor, Tensor, Tensor, Tensor, Tensor, Tensor,
                                             DiscreteSSM, ScanResult>>(
        x.value(), delta.value(), A.value(), B.value(), C.value(), D.value(), std::move(disc),
        std::move(fwd));
    return x.tape().record(
        "selective_scan", std::move(y), {x, delta, A, B, C, D},
        [saved](const Tensor &gy, ad::GradSink &s) {
            const auto &[xv, dv, av, bv, cv, Dv, disc, fwd] = *saved;
            ScanGrads g = scan_backward(xv, dv, av, bv, cv, Dv, disc, fwd, gy);
            const Tensor *parts[] = {&g.x, &g.delta, &g.A, &g.B, &g.C, &g.D};
            for (std::size_t i = 0; i < 6; ++i) {
                if (!s.wants(i)) continue;
                Tensor &dst = s.grad(i);
                for (std::size_t j = 0; j < dst.numel(); ++j) dst[j] += (*parts[i])[j];
            }
        });
}

}  // namespace modem::ssm
