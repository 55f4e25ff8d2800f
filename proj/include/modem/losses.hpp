// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training objectives (tape primitives) and image quality metrics.

#include "modem/autodiff.hpp"

namespace modem::loss {

/// Mean absolute difference over all elements.
ad::Var l1(ad::Var pred, ad::Var target);

/// Pearson correlation over all elements jointly (channels are not separated).
struct Correlation {
    double rho = 0.0;
    bool degenerate = false;  // one argument has zero variance; rho reported as 0
};
Correlation pearson(const Tensor &a, const Tensor &b);

/// (1 - rho) / 2, in [0, 1]. Zero variance falls back to rho = 0 (loss 0.5, zero
/// gradient) and sets *degenerate when given.
ad::Var correlation(ad::Var pred, ad::Var target, bool *degenerate = nullptr);

/// KL(softmax(reference) || softmax(estimate)). No gradient reaches `reference`.
ad::Var kl_divergence(ad::Var reference, ad::Var estimate);
double kl_divergence(const Tensor &reference, const Tensor &estimate);

}  // namespace modem::loss

namespace modem::metrics {

/// 10 log10(max^2 / MSE); +inf for identical images.
double psnr(const Tensor &a, const Tensor &b, double max_value = 1.0);

/// Luma Y = 0.299 R + 0.587 G + 0.114 B of a [3 x H x W] image, or the single
/// plane of a [1 x H x W] / [H x W] one.
Tensor luma(const Tensor &image);

/// Mean SSIM over every 11x11 Gaussian window (sigma 1.5) lying inside the luma
/// plane, constants (0.01 L)^2 and (0.03 L)^2 with L = data_range. Throws
/// std::invalid_argument when an extent is below 11.
double ssim(const Tensor &a, const Tensor &b, double data_range = 1.0);

}  // namespace modem::metrics
