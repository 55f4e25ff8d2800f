// SPDX-License-Identifier: Apache-2.0
#pragma once

// Finite-difference verification of every differentiable network block.

#include <cstdint>
#include <string>
#include <vector>

#include "modem/gradcheck.hpp"
#include "modem/scan_order.hpp"

namespace modem {

struct BlockCheck {
    std::string block;
    GradCheckResult result;
    bool passed = false;
};

struct SuiteOptions {
    double tolerance = 1e-4;
    std::uint64_t seed = 7;
    /// Negative control: scale the backward of this primitive on every block.
    std::string fault_op;
    double fault_factor = 1.5;
    /// Traversal used by the scan blocks.
    scan::ScanSpec scan{};
    /// Restrict to these blocks; empty runs everything.
    std::vector<std::string> only;
};

/// Block names in run order.
const std::vector<std::string> &gradient_suite_blocks();

std::vector<BlockCheck> run_gradient_suite(const SuiteOptions &options = {});

}  // namespace modem
