// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite-difference verification of tape gradients.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "modem/autodiff.hpp"

namespace modem {

/// Builds a scalar loss from leaf inputs; parameters are recorded with tape.param().
using ScalarGraph = std::function<ad::Var(ad::Tape &, std::span<const ad::Var>)>;

struct GradCheckOptions {
    double step = 1e-5;
    /// Passed to Tape::inject_fault on the analytic tape (negative controls).
    std::string fault_op;
    double fault_factor = 1.0;
};

struct GradCheckResult {
    /// max |g_ad - g_fd| / max(1, |g_fd|) over every checked element.
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "input 2[17]" or "<param name>[3]"
};

/// Compares tape gradients against central differences for every element of
/// `inputs` and of every trainable parameter in `params`. Parameter values are
/// perturbed in place and restored.
GradCheckResult check_gradients(const ScalarGraph &graph, const std::vector<Tensor> &inputs,
                                std::span<Parameter *const> params,
                                const GradCheckOptions &options = {});

}  // namespace modem
