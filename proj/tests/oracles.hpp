// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reference implementations kept independent of the library code paths.

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cstdint>
#include <random>

#include "modem/ssm.hpp"
#include "test_util.hpp"

namespace modem::testing {

// Bit t of i -> bit 2t, bit t of j -> bit 2t+1, one bit at a time.
inline std::uint64_t interleave_loop(std::uint32_t i, std::uint32_t j) {
    std::uint64_t z = 0;
    for (unsigned t = 0; t < 32; ++t) {
        z |= static_cast<std::uint64_t>((i >> t) & 1u) << (2 * t);
        z |= static_cast<std::uint64_t>((j >> t) & 1u) << (2 * t + 1);
    }
    return z;
}

struct SsmInstance {
    Tensor x, delta, A, B, C, D;
};

inline SsmInstance random_ssm_instance(std::mt19937_64 &rng, std::size_t d, std::size_t n, std::size_t l) {
    SsmInstance in;
    in.x = random_tensor({d, l}, rng);
    in.delta = random_tensor({d, l}, rng, 0.01, 1.0);
    in.A = random_tensor({d, n}, rng, -3.0, -0.05);
    in.B = random_tensor({n, l}, rng);
    in.C = random_tensor({n, l}, rng);
    in.D = random_tensor({d}, rng);
    return in;
}

// y_k = sum_{m<=k} C_k (prod_{t=m+1..k} a_t) b_m x_m + D x_k, no recurrence.
inline Tensor unrolled_oracle(const SsmInstance &in, const ssm::DiscreteSSM &disc) {
    const std::size_t d = in.x.dim(0), l = in.x.dim(1), n = in.A.dim(1);
    Tensor y({d, l});
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t k = 0; k < l; ++k) {
            double acc = 0.0;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t m = 0; m <= k; ++m) {
                    double prod = 1.0;
                    for (std::size_t t = m + 1; t <= k; ++t) prod *= disc.a_bar[(t * d + c) * n + s];
                    acc += in.C[s * l + k] * prod * disc.b_bar[(m * d + c) * n + s] * in.x[c * l + m];
                }
            y[c * l + k] = acc + in.D[c] * in.x[c * l + k];
        }
    return y;
}

/// Relative error of the zero-order-hold input gain against a 113-bit evaluation of (e^{dt a} - 1) / a.
inline double zoh_gain_rel_error(double got, double dt, double a) {
    using quad = boost::multiprecision::cpp_bin_float_quad;
    const quad qa = a, qd = dt;
    const quad exact = (boost::multiprecision::exp(qd * qa) - 1) / qa;
    return static_cast<double>(boost::multiprecision::abs((got - exact) / exact));
}

}  // namespace modem::testing
