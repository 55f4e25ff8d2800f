// SPDX-License-Identifier: Apache-2.0
#include "modem/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace modem::ops {

std::size_t broadcast_block(const Tensor &a, const Tensor &b) {
    if (a.shape() == b.shape()) return 1;
    if (b.numel() == 1) return a.numel();
    const auto &as = a.shape();
    const auto &bs = b.shape();
    if (bs.size() < as.size() && std::equal(bs.begin(), bs.end(), as.begin()))
        return a.numel() / b.numel();
    throw ShapeError("cannot broadcast " + shape_str(bs) + " against " + shape_str(as));
}

Tensor reduce_to(const Tensor &g, const Shape &target) {
    if (g.shape() == target) return g;
    Tensor out(target);
    const std::size_t block = g.numel() / out.numel();
    if (target.size() == 1 && target[0] == 1) {
        out[0] = sum(g);
        return out;
    }
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < block; ++j) s += g[i * block + j];
        out[i] = s;
    }
    return out;
}

namespace {

double apply(BinaryOp op, double x, double y, DivByZero policy) {
    switch (op) {
    case BinaryOp::add: return x + y;
    case BinaryOp::sub: return x - y;
    case BinaryOp::mul: return x * y;
    case BinaryOp::div:
        if (y == 0.0 && policy == DivByZero::strict)
            throw ContractError("division by zero in strict mode");
        return x / y;
    }
    return 0.0;
}

}  // namespace

Tensor elementwise(BinaryOp op, const Tensor &a, const Tensor &b, DivByZero policy) {
    Tensor out(a.shape());
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < a.numel(); ++i) out[i] = apply(op, a[i], b[i], policy);
        return out;
    }
    const std::size_t block = broadcast_block(a, b);
    if (b.numel() == 1) return elementwise(op, a, b[0], policy);
    for (std::size_t i = 0; i < b.numel(); ++i) {
        const double y = b[i];
        for (std::size_t j = i * block; j < (i + 1) * block; ++j) out[j] = apply(op, a[j], y, policy);
    }
    return out;
}

Tensor elementwise(BinaryOp op, const Tensor &a, double b, DivByZero policy) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = apply(op, a[i], b, policy);
    return out;
}

Tensor scale(const Tensor &a, double s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
    return out;
}

Tensor matmul(const Tensor &a, const Tensor &b) {
    if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul needs operands of rank >= 2");
    const std::size_t m = a.shape()[a.rank() - 2];
    const std::size_t k = a.shape()[a.rank() - 1];
    const std::size_t kb = b.shape()[b.rank() - 2];
    const std::size_t n = b.shape()[b.rank() - 1];
    if (k != kb)
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t batch = a.numel() / (m * k);
    const bool shared_b = b.rank() == 2;
    if (!shared_b) {
        if (b.rank() != a.rank() ||
            !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
            throw ShapeError("matmul batch axes disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out(out_shape);
    const double *pa = a.data().data();
    const double *pb = b.data().data();
    double *po = out.data().data();
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const double *A = pa + bi * m * k;
        const double *B = shared_b ? pb : pb + bi * k * n;
        double *O = po + bi * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            double *orow = O + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = A[i * k + p];
                if (av == 0.0) continue;
                const double *brow = B + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }
    return out;
}

Tensor transpose(const Tensor &a) {
    if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return out;
}

namespace {

struct ConvGeom {
    std::ptrdiff_t c_in, h, w, c_out, k, stride, pad, h_out, w_out;
};

ConvGeom conv_geometry(const Shape &xs, const Shape &ws, std::size_t stride, std::size_t pad) {
    if (xs.size() != 3) throw ShapeError("conv2d input must be [C x H x W], got " + shape_str(xs));
    if (ws.size() != 4 || ws[2] != ws[3])
        throw ShapeError("conv2d weight must be [C_out x C_in x k x k], got " + shape_str(ws));
    if (ws[1] != xs[0])
        throw ShapeError("conv2d channel mismatch: input " + shape_str(xs) + ", weight " +
                         shape_str(ws));
    if (ws[2] % 2 == 0) throw ShapeError("conv2d kernel size must be odd");
    if (stride == 0) throw ShapeError("conv2d stride must be positive");
    ConvGeom g{};
    g.c_in = static_cast<std::ptrdiff_t>(xs[0]);
    g.h = static_cast<std::ptrdiff_t>(xs[1]);
    g.w = static_cast<std::ptrdiff_t>(xs[2]);
    g.c_out = static_cast<std::ptrdiff_t>(ws[0]);
    g.k = static_cast<std::ptrdiff_t>(ws[2]);
    g.stride = static_cast<std::ptrdiff_t>(stride);
    g.pad = static_cast<std::ptrdiff_t>(pad);
    const std::ptrdiff_t span_h = g.h + 2 * g.pad - g.k;
    const std::ptrdiff_t span_w = g.w + 2 * g.pad - g.k;
    if (span_h < 0 || span_w < 0 || span_h % g.stride != 0 || span_w % g.stride != 0)
        throw ShapeError("conv2d output extent is not an integer for input " + shape_str(xs) +
                         ", k=" + std::to_string(g.k) + ", stride=" + std::to_string(stride) +
                         ", pad=" + std::to_string(pad));
    g.h_out = span_h / g.stride + 1;
    g.w_out = span_w / g.stride + 1;
    return g;
}

// Output columns ox whose input column ox*stride + kx - pad lies inside [0, w).
void column_range(const ConvGeom &g, std::ptrdiff_t kx, std::ptrdiff_t &lo, std::ptrdiff_t &hi) {
    const std::ptrdiff_t off = kx - g.pad;
    lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
    const std::ptrdiff_t last = g.w - 1 - off;
    hi = last < 0 ? 0 : std::min(g.w_out, last / g.stride + 1);
}

}  // namespace

Tensor conv2d(const Tensor &x, const Tensor &w, std::size_t stride, std::size_t pad) {
    const ConvGeom g = conv_geometry(x.shape(), w.shape(), stride, pad);
    Tensor out({static_cast<std::size_t>(g.c_out), static_cast<std::size_t>(g.h_out),
                static_cast<std::size_t>(g.w_out)});
    const double *px = x.data().data();
    const double *pw = w.data().data();
    double *po = out.data().data();
    for (std::ptrdiff_t co = 0; co < g.c_out; ++co) {
        double *oplane = po + co * g.h_out * g.w_out;
        for (std::ptrdiff_t ci = 0; ci < g.c_in; ++ci) {
            const double *iplane = px + ci * g.h * g.w;
            for (std::ptrdiff_t ky = 0; ky < g.k; ++ky) {
                for (std::ptrdiff_t kx = 0; kx < g.k; ++kx) {
                    const double wv = pw[((co * g.c_in + ci) * g.k + ky) * g.k + kx];
                    std::ptrdiff_t lo, hi;
                    column_range(g, kx, lo, hi);
                    for (std::ptrdiff_t oy = 0; oy < g.h_out; ++oy) {
                        const std::ptrdiff_t iy = oy * g.stride + ky - g.pad;
                        if (iy < 0 || iy >= g.h) continue;
                        const double *irow = iplane + iy * g.w + kx - g.pad;
                        double *orow = oplane + oy * g.w_out;
                        if (g.stride == 1) {
                            for (std::ptrdiff_t ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox];
                        } else {
                            for (std::ptrdiff_t ox = lo; ox < hi; ++ox)
                                orow[ox] += wv * irow[ox * g.stride];
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor conv2d_grad_input(const Tensor &grad_out, const Tensor &w, const Shape &x_shape,
                         std::size_t stride, std::size_t pad) {
    const ConvGeom g = conv_geometry(x_shape, w.shape(), stride, pad);
    Tensor dx(x_shape);
    const double *pg = grad_out.data().data();
    const double *pw = w.data().data();
    double *pdx = dx.data().data();
    for (std::ptrdiff_t co = 0; co < g.c_out; ++co) {
        const double *gplane = pg + co * g.h_out * g.w_out;
        for (std::ptrdiff_t ci = 0; ci < g.c_in; ++ci) {
            double *dplane = pdx + ci * g.h * g.w;
            for (std::ptrdiff_t ky = 0; ky < g.k; ++ky) {
                for (std::ptrdiff_t kx = 0; kx < g.k; ++kx) {
                    const double wv = pw[((co * g.c_in + ci) * g.k + ky) * g.k + kx];
                    std::ptrdiff_t lo, hi;
                    column_range(g, kx, lo, hi);
                    for (std::ptrdiff_t oy = 0; oy < g.h_out; ++oy) {
                        const std::ptrdiff_t iy = oy * g.stride + ky - g.pad;
                        if (iy < 0 || iy >= g.h) continue;
                        double *drow = dplane + iy * g.w + kx - g.pad;
                        const double *grow = gplane + oy * g.w_out;
                        for (std::ptrdiff_t ox = lo; ox < hi; ++ox)
                            drow[ox * g.stride] += wv * grow[ox];
                    }
                }
            }
        }
    }
    return dx;
}

Tensor conv2d_grad_weight(const Tensor &grad_out, const Tensor &x, const Shape &w_shape,
                          std::size_t stride, std::size_t pad) {
    const ConvGeom g = conv_geometry(x.shape(), w_shape, stride, pad);
    Tensor dw(w_shape);
    const double *pg = grad_out.data().data();
    const double *px = x.data().data();
    double *pdw = dw.data().data();
    for (std::ptrdiff_t co = 0; co < g.c_out; ++co) {
        const double *gplane = pg + co * g.h_out * g.w_out;
        for (std::ptrdiff_t ci = 0; ci < g.c_in; ++ci) {
            const double *iplane = px + ci * g.h * g.w;
            for (std::ptrdiff_t ky = 0; ky < g.k; ++ky) {
                for (std::ptrdiff_t kx = 0; kx < g.k; ++kx) {
                    std::ptrdiff_t lo, hi;
                    column_range(g, kx, lo, hi);
                    double acc = 0.0;
                    for (std::ptrdiff_t oy = 0; oy < g.h_out; ++oy) {
                        const std::ptrdiff_t iy = oy * g.stride + ky - g.pad;
                        if (iy < 0 || iy >= g.h) continue;
                        const double *irow = iplane + iy * g.w + kx - g.pad;
                        const double *grow = gplane + oy * g.w_out;
                        for (std::ptrdiff_t ox = lo; ox < hi; ++ox)
                            acc += grow[ox] * irow[ox * g.stride];
                    }
                    pdw[((co * g.c_in + ci) * g.k + ky) * g.k + kx] = acc;
                }
            }
        }
    }
    return dw;
}

LayerNormResult layernorm(const Tensor &x, double eps) {
    const std::size_t c = x.dim(0);
    const std::size_t positions = x.numel() / c;
    LayerNormResult r{Tensor(x.shape()), Tensor({positions})};
    for (std::size_t p = 0; p < positions; ++p) {
        double mean = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) mean += x[ch * positions + p];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double d = x[ch * positions + p] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double rstd = 1.0 / std::sqrt(var + eps);
        r.rstd[p] = rstd;
        for (std::size_t ch = 0; ch < c; ++ch)
            r.normalized[ch * positions + p] = (x[ch * positions + p] - mean) * rstd;
    }
    return r;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor silu(const Tensor &x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * sigmoid(x[i]);
    return out;
}

Tensor sigmoid(const Tensor &x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = sigmoid(x[i]);
    return out;
}

Tensor softplus(const Tensor &x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = softplus(x[i]);
    return out;
}

Tensor softmax(const Tensor &x, std::size_t axis) {
    const auto &s = x.shape();
    if (axis >= s.size())
        throw ShapeError("softmax axis " + std::to_string(axis) + " invalid for " + shape_str(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[axis];
    Tensor out(s);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(x[base + j * inner] - mx);
                out[base + j * inner] = e;
                z += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
        }
    }
    return out;
}

Tensor pixel_shuffle(const Tensor &x, std::size_t r) {
    if (x.rank() != 3) throw ShapeError("pixel_shuffle expects [C x H x W]");
    if (r == 0 || x.dim(0) % (r * r) != 0)
        throw ShapeError("pixel_shuffle: channels " + std::to_string(x.dim(0)) +
                         " not divisible by r^2 = " + std::to_string(r * r));
    const std::size_t c = x.dim(0) / (r * r), h = x.dim(1), w = x.dim(2);
    Tensor out({c, h * r, w * r});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < r; ++dy)
            for (std::size_t dx = 0; dx < r; ++dx) {
                const std::size_t src = ch * r * r + dy * r + dx;
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t xx = 0; xx < w; ++xx)
                        out.at(ch, y * r + dy, xx * r + dx) = x.at(src, y, xx);
            }
    return out;
}

Tensor pixel_unshuffle(const Tensor &x, std::size_t r) {
    if (x.rank() != 3) throw ShapeError("pixel_unshuffle expects [C x H x W]");
    if (r == 0 || x.dim(1) % r != 0 || x.dim(2) % r != 0)
        throw ShapeError("pixel_unshuffle: spatial extents " + shape_str(x.shape()) +
                         " not divisible by " + std::to_string(r));
    const std::size_t c = x.dim(0), h = x.dim(1) / r, w = x.dim(2) / r;
    Tensor out({c * r * r, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < r; ++dy)
            for (std::size_t dx = 0; dx < r; ++dx) {
                const std::size_t dst = ch * r * r + dy * r + dx;
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t xx = 0; xx < w; ++xx)
                        out.at(dst, y, xx) = x.at(ch, y * r + dy, xx * r + dx);
            }
    return out;
}

Tensor global_avg_pool(const Tensor &x) {
    const std::size_t c = x.dim(0);
    const std::size_t n = x.numel() / c;
    Tensor out({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[ch * n + i];
        out[ch] = s / static_cast<double>(n);
    }
    return out;
}

namespace {
std::size_t reflect_index(std::size_t i, std::size_t n) {
    // Mirror about the last sample: n, n+1, ... -> n-2, n-3, ...
    if (i < n) return i;
    return 2 * (n - 1) - i;
}
}  // namespace

Tensor reflect_pad(const Tensor &x, std::size_t pad_bottom, std::size_t pad_right) {
    if (x.rank() != 3) throw ShapeError("reflect_pad expects [C x H x W]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if ((pad_bottom > 0 && pad_bottom >= h) || (pad_right > 0 && pad_right >= w))
        throw ShapeError("reflect padding must be smaller than the spatial extent");
    Tensor out({c, h + pad_bottom, w + pad_right});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h + pad_bottom; ++y)
            for (std::size_t xx = 0; xx < w + pad_right; ++xx)
                out.at(ch, y, xx) = x.at(ch, reflect_index(y, h), reflect_index(xx, w));
    return out;
}

Tensor crop(const Tensor &x, std::size_t height, std::size_t width) {
    if (x.rank() != 3 || height > x.dim(1) || width > x.dim(2))
        throw ShapeError("crop extent exceeds input " + shape_str(x.shape()));
    Tensor out({x.dim(0), height, width});
    for (std::size_t ch = 0; ch < x.dim(0); ++ch)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t xx = 0; xx < width; ++xx) out.at(ch, y, xx) = x.at(ch, y, xx);
    return out;
}

Tensor concat0(const Tensor &a, const Tensor &b) {
    if (a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(),
                                            b.shape().begin() + 1))
        throw ShapeError("concat0 trailing extents differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Shape s = a.shape();
    s[0] += b.dim(0);
    std::vector<double> d;
    d.reserve(a.numel() + b.numel());
    d.insert(d.end(), a.data().begin(), a.data().end());
    d.insert(d.end(), b.data().begin(), b.data().end());
    return Tensor(std::move(s), std::move(d));
}

Tensor slice0(const Tensor &x, std::size_t begin, std::size_t count) {
    if (count == 0 || begin + count > x.dim(0))
        throw ShapeError("slice0 [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(x.shape()));
    Shape s = x.shape();
    s[0] = count;
    const std::size_t block = x.numel() / x.dim(0);
    std::vector<double> d(x.data().begin() + static_cast<std::ptrdiff_t>(begin * block),
                          x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * block));
    return Tensor(std::move(s), std::move(d));
}

double sum(const Tensor &x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return s;
}

double max_abs_diff(const Tensor &a, const Tensor &b) {
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace modem::ops
