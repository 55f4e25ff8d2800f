// SPDX-License-Identifier: Apache-2.0
#include "modem/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace modem::loss {

namespace {

void require_same(const Tensor &a, const Tensor &b, const char *what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

struct Centered {
    std::vector<double> a, b;
    double saa = 0, sbb = 0, sab = 0;
};

Centered center(const Tensor &x, const Tensor &y) {
    const std::size_t n = x.numel();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    Centered c{std::vector<double>(n), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        c.a[i] = x[i] - mx;
        c.b[i] = y[i] - my;
        c.saa += c.a[i] * c.a[i];
        c.sbb += c.b[i] * c.b[i];
        c.sab += c.a[i] * c.b[i];
    }
    return c;
}

std::vector<double> log_softmax(const Tensor &x) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x.data()) m = std::max(m, v);
    double s = 0;
    for (double v : x.data()) s += std::exp(v - m);
    const double lse = m + std::log(s);
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - lse;
    return out;
}

}  // namespace

ad::Var l1(ad::Var pred, ad::Var target) {
    const Tensor &a = pred.value(), &b = target.value();
    require_same(a, b, "l1");
    const double n = static_cast<double>(a.numel());
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
    return pred.tape().record("l1", Tensor::scalar(s / n), {pred, target},
                              [a, b, n](const Tensor &g, ad::GradSink &sink) {
                                  const double go = g[0] / n;
                                  for (std::size_t side = 0; side < 2; ++side) {
                                      if (!sink.wants(side)) continue;
                                      Tensor &d = sink.grad(side);
                                      const double sgn = side == 0 ? 1.0 : -1.0;
                                      for (std::size_t i = 0; i < a.numel(); ++i) {
                                          const double diff = a[i] - b[i];
                                          if (diff != 0.0) d[i] += sgn * go * (diff > 0 ? 1.0 : -1.0);
                                      }
                                  }
                              });
}

Correlation pearson(const Tensor &a, const Tensor &b) {
    require_same(a, b, "pearson");
    const Centered c = center(a, b);
    const double denom = std::sqrt(c.saa * c.sbb);
    if (!(denom > 0.0) || !std::isfinite(denom)) return {0.0, true};
    return {std::clamp(c.sab / denom, -1.0, 1.0), false};
}

ad::Var correlation(ad::Var pred, ad::Var target, bool *degenerate) {
    const Tensor &x = pred.value(), &y = target.value();
    require_same(x, y, "correlation");
    auto c = std::make_shared<Centered>(center(x, y));
    const double denom = std::sqrt(c->saa * c->sbb);
    const bool flat = !(denom > 0.0) || !std::isfinite(denom);
    if (degenerate) *degenerate = flat;
    const double rho = flat ? 0.0 : std::clamp(c->sab / denom, -1.0, 1.0);
    return pred.tape().record(
        "correlation", Tensor::scalar(0.5 * (1.0 - rho)), {pred, target},
        [c, flat, denom](const Tensor &g, ad::GradSink &sink) {
            if (flat) return;
            const double r = c->sab / denom;
            // d rho / d x_i = b_i / denom - rho a_i / saa (and symmetrically for y).
            const double go = -0.5 * g[0];
            if (sink.wants(0)) {
                Tensor &d = sink.grad(0);
                for (std::size_t i = 0; i < c->a.size(); ++i)
                    d[i] += go * (c->b[i] / denom - r * c->a[i] / c->saa);
            }
            if (sink.wants(1)) {
                Tensor &d = sink.grad(1);
                for (std::size_t i = 0; i < c->a.size(); ++i)
                    d[i] += go * (c->a[i] / denom - r * c->b[i] / c->sbb);
            }
        });
}

double kl_divergence(const Tensor &reference, const Tensor &estimate) {
    require_same(reference, estimate, "kl_divergence");
    const auto lp = log_softmax(reference), lq = log_softmax(estimate);
    double s = 0;
    for (std::size_t i = 0; i < lp.size(); ++i) s += std::exp(lp[i]) * (lp[i] - lq[i]);
    return std::max(s, 0.0);
}

ad::Var kl_divergence(ad::Var reference, ad::Var estimate) {
    const Tensor &p_logits = reference.value(), &q_logits = estimate.value();
    const double value = kl_divergence(p_logits, q_logits);
    const auto lp = log_softmax(p_logits), lq = log_softmax(q_logits);
    return estimate.tape().record("kl_divergence", Tensor::scalar(value), {reference, estimate},
                                  [lp, lq](const Tensor &g, ad::GradSink &sink) {
                                      if (!sink.wants(1)) return;
                                      Tensor &d = sink.grad(1);
                                      for (std::size_t i = 0; i < lp.size(); ++i)
                                          d[i] += g[0] * (std::exp(lq[i]) - std::exp(lp[i]));
                                  });
}

}  // namespace modem::loss

namespace modem::metrics {

double psnr(const Tensor &a, const Tensor &b, double max_value) {
    if (!a.same_shape(b)) throw ShapeError("psnr: image shapes differ");
    double se = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_value * max_value / mse);
}

Tensor luma(const Tensor &img) {
    if (img.rank() == 2) return img;
    if (img.rank() != 3 || (img.dim(0) != 3 && img.dim(0) != 1))
        throw ShapeError("luma expects [3 x H x W] or [1 x H x W], got " + shape_str(img.shape()));
    const std::size_t h = img.dim(1), w = img.dim(2), n = h * w;
    Tensor y({h, w});
    if (img.dim(0) == 1) {
        std::copy(img.data().begin(), img.data().end(), y.data().begin());
        return y;
    }
    for (std::size_t i = 0; i < n; ++i) y[i] = 0.299 * img[i] + 0.587 * img[n + i] + 0.114 * img[2 * n + i];
    return y;
}

double ssim(const Tensor &a, const Tensor &b, double data_range) {
    if (!a.same_shape(b)) throw ShapeError("ssim: image shapes differ");
    const Tensor x = luma(a), y = luma(b);
    const std::size_t h = x.dim(0), w = x.dim(1);
    constexpr std::size_t win = 11, r = win / 2;
    if (h < win || w < win) throw std::invalid_argument("ssim needs images of at least 11x11");

    double g[win], gs = 0;
    for (std::size_t i = 0; i < win; ++i) {
        const double t = static_cast<double>(i) - static_cast<double>(r);
        g[i] = std::exp(-t * t / (2 * 1.5 * 1.5));
        gs += g[i];
    }
    for (double &v : g) v /= gs;

    // Separable filtering over valid positions: rows first, then columns.
    const std::size_t ow = w - win + 1, oh = h - win + 1;
    auto filter = [&](auto &&pixel) {
        std::vector<double> tmp(h * ow), out(oh * ow);
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double s = 0;
                for (std::size_t t = 0; t < win; ++t) s += g[t] * pixel(i * w + j + t);
                tmp[i * ow + j] = s;
            }
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double s = 0;
                for (std::size_t t = 0; t < win; ++t) s += g[t] * tmp[(i + t) * ow + j];
                out[i * ow + j] = s;
            }
        return out;
    };
    const auto mx = filter([&](std::size_t i) { return x[i]; });
    const auto my = filter([&](std::size_t i) { return y[i]; });
    const auto mxx = filter([&](std::size_t i) { return x[i] * x[i]; });
    const auto myy = filter([&](std::size_t i) { return y[i] * y[i]; });
    const auto mxy = filter([&](std::size_t i) { return x[i] * y[i]; });

    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    double total = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i], vy = myy[i] - my[i] * my[i];
        const double cxy = mxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

}  // namespace modem::metrics
