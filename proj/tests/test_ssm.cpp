// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "modem/gradcheck.hpp"
#include "modem/ops.hpp"
#include "modem/ssm.hpp"
#include "oracles.hpp"

using namespace modem;
using namespace modem::ssm;

namespace {

using testing::unrolled_oracle;
using testing::random_ssm_instance;

}  // namespace

TEST_CASE("zoh closed forms") {
    Tensor A({1, 1}, -1.0), dt({1, 1}, std::log(2.0)), B({1, 1}, 1.0);
    auto disc = zoh_discretize(A, dt, B);
    CHECK(std::abs(disc.a_bar[0] - 0.5) < 1e-14);
    CHECK(std::abs(disc.b_bar[0] - 0.5) < 1e-14);

    // Delta -> 0: a_bar -> 1 and b_bar = delta*B -> 0.
    Tensor tiny({1, 1}, 1e-20), B3({1, 1}, 3.0);
    auto lim = zoh_discretize(Tensor({1, 1}, -2.0), tiny, B3);
    CHECK(lim.a_bar[0] == 1.0);
    CHECK(lim.b_bar[0] == 1e-20 * 3.0);

    CHECK_THROWS_AS(zoh_discretize(A, Tensor({1, 1}, 0.0), B), ContractError);
    CHECK_THROWS_AS(zoh_discretize(A, Tensor({1, 2}, 0.1), B), ShapeError);
}

TEST_CASE("zoh near-zero A matches 128-bit reference") {
    for (double a : {-1e-15, -3e-12, -1e-9, -5e-8, -1e-6, -0.3}) {
        for (double dt : {1e-3, 0.05, 0.9}) {
            const double rel = testing::zoh_gain_rel_error(zoh_input_gain(dt, a), dt, a);
            CHECK(rel < 1e-12);
        }
    }
    CHECK(std::abs(zoh_input_gain(0.7, -1e-15) - 0.7) / 0.7 < 1e-12);
}

TEST_CASE("zoh gain derivative matches finite differences across branches") {
    for (double a : {-1e-7, -2e-3, -0.009, -0.011, -0.5, -4.0}) {
        for (double dt : {0.01, 0.3, 1.0}) {
            const double h = 1e-6 * std::max(1.0, std::abs(a));
            const double fd = (zoh_input_gain(dt, a + h) - zoh_input_gain(dt, a - h)) / (2 * h);
            CHECK(zoh_input_gain_da(dt, a) == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("scan degenerate cases") {
    std::mt19937_64 rng(3);
    SUBCASE("single step") {
        auto in = random_ssm_instance(rng, 3, 4, 1);
        auto disc = zoh_discretize(in.A, in.delta, in.B);
        auto r = selective_scan(in.x, disc, in.C, in.D);
        for (std::size_t c = 0; c < 3; ++c) {
            double e = in.D[c] * in.x[c];
            for (std::size_t s = 0; s < 4; ++s) e += in.C[s] * disc.b_bar[c * 4 + s] * in.x[c];
            CHECK(r.y[c] == doctest::Approx(e).epsilon(1e-15));
        }
    }
    SUBCASE("memoryless when a_bar is zero") {
        auto in = random_ssm_instance(rng, 2, 3, 6);
        auto disc = zoh_discretize(in.A, in.delta, in.B);
        disc.a_bar = Tensor(disc.a_bar.shape(), 0.0);
        auto r = selective_scan(in.x, disc, in.C, in.D);
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t k = 0; k < 6; ++k) {
                double e = in.D[c] * in.x[c * 6 + k];
                for (std::size_t s = 0; s < 3; ++s)
                    e += in.C[s * 6 + k] * disc.b_bar[(k * 2 + c) * 3 + s] * in.x[c * 6 + k];
                CHECK(r.y[c * 6 + k] == doctest::Approx(e).epsilon(1e-14));
            }
    }
    SUBCASE("state accessor") {
        auto in = random_ssm_instance(rng, 2, 3, 5);
        auto r = selective_scan(in.x, zoh_discretize(in.A, in.delta, in.B), in.C, in.D);
        CHECK(r.state(0).h == Tensor({2, 3}));
        CHECK(r.state(5).h[4] == r.states[4 * 6 + 4]);
        CHECK_THROWS_AS(r.state(6), ContractError);
    }
    auto in = random_ssm_instance(rng, 2, 3, 5);
    auto disc = zoh_discretize(in.A, in.delta, in.B);
    CHECK_THROWS_AS(selective_scan(in.x, disc, Tensor({3, 4}), in.D), ShapeError);
    CHECK_THROWS_AS(selective_scan(in.x, disc, in.C, Tensor({3})), ShapeError);
}

TEST_CASE("scan equals unrolled oracle on 200 random instances") {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const auto d = testing::random_extent(rng, 1, 4), n = testing::random_extent(rng, 1, 8),
                   l = testing::random_extent(rng, 1, 32);
        auto in = random_ssm_instance(rng, d, n, l);
        auto disc = zoh_discretize(in.A, in.delta, in.B);
        auto r = selective_scan(in.x, disc, in.C, in.D);
        REQUIRE(r.y.all_finite());
        worst = std::max(worst, ops::max_abs_diff(r.y, unrolled_oracle(in, disc)));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("decomposition identity and state replay") {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 200; ++t) {
        const auto d = testing::random_extent(rng, 1, 4), n = testing::random_extent(rng, 1, 8),
                   l = testing::random_extent(rng, 1, 32);
        auto in = random_ssm_instance(rng, d, n, l);
        auto disc = zoh_discretize(in.A, in.delta, in.B);
        auto r = selective_scan(in.x, disc, in.C, in.D);
        auto dec = decompose_output(in.x, disc, in.C, in.D);
        double worst = 0.0, replay = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            REQUIRE(dec.longrange[c * l] == 0.0);
            for (std::size_t k = 0; k < l; ++k) {
                const std::size_t i = c * l + k;
                worst = std::max(worst, std::abs(dec.longrange[i] + dec.local[i] + in.D[c] * in.x[i] - r.y[i]));
                const auto prev = r.state(k).h;
                double lr = 0.0, loc = 0.0;
                for (std::size_t s = 0; s < n; ++s) {
                    const std::size_t ti = (k * d + c) * n + s;
                    lr += in.C[s * l + k] * disc.a_bar[ti] * prev[c * n + s];
                    loc += in.C[s * l + k] * disc.b_bar[ti] * in.x[i];
                }
                replay = std::max({replay, std::abs(lr - dec.longrange[i]), std::abs(loc - dec.local[i])});
            }
        }
        REQUIRE(worst < 1e-14);
        REQUIRE(replay < 1e-14);
    }
}

TEST_CASE("scaling delta raises a_bar to that power") {
    std::mt19937_64 rng(5);
    auto in = random_ssm_instance(rng, 3, 5, 7);
    for (double c : {0.5, 2.0, 3.7}) {
        auto base = zoh_discretize(in.A, in.delta, in.B);
        auto scaled = zoh_discretize(in.A, ops::scale(in.delta, c), in.B);
        for (std::size_t i = 0; i < base.a_bar.numel(); ++i) {
            REQUIRE(scaled.a_bar[i] > 0.0);
            REQUIRE(scaled.a_bar[i] < 1.0);
            CHECK(scaled.a_bar[i] == doctest::Approx(std::pow(base.a_bar[i], c)).epsilon(1e-13));
        }
    }
}

TEST_CASE("state stays bounded over ten thousand steps") {
    std::mt19937_64 rng(9);
    const std::size_t d = 2, n = 4, l = 10000;
    auto in = random_ssm_instance(rng, d, n, l);
    in.delta = testing::random_tensor({d, l}, rng, 1e-3, 0.1);
    auto disc = zoh_discretize(in.A, in.delta, in.B);
    auto r = selective_scan(in.x, disc, in.C, in.D);
    double amax = 0.0, bmax = 0.0, hmax = 0.0;
    for (std::size_t i = 0; i < disc.a_bar.numel(); ++i) {
        amax = std::max(amax, disc.a_bar[i]);
        bmax = std::max(bmax, std::abs(disc.b_bar[i]));
        hmax = std::max(hmax, std::abs(r.states[i]));
    }
    CHECK(r.y.all_finite());
    CHECK(hmax <= n * bmax / (1.0 - amax));
}

TEST_CASE("scan backward") {
    std::mt19937_64 rng(11);
    SUBCASE("dD for a summed output with constant x") {
        auto in = random_ssm_instance(rng, 3, 2, 6);
        in.x = Tensor({3, 6}, 0.25);
        auto disc = zoh_discretize(in.A, in.delta, in.B);
        auto fwd = selective_scan(in.x, disc, in.C, in.D);
        auto g = scan_backward(in.x, in.delta, in.A, in.B, in.C, in.D, disc, fwd, Tensor({3, 6}, 1.0));
        for (std::size_t c = 0; c < 3; ++c) CHECK(g.D[c] == doctest::Approx(1.5));
    }
    SUBCASE("zero upstream gradient") {
        auto in = random_ssm_instance(rng, 2, 3, 4);
        auto disc = zoh_discretize(in.A, in.delta, in.B);
        auto fwd = selective_scan(in.x, disc, in.C, in.D);
        auto g = scan_backward(in.x, in.delta, in.A, in.B, in.C, in.D, disc, fwd, Tensor({2, 4}));
        for (const Tensor *t : {&g.x, &g.delta, &g.A, &g.B, &g.C, &g.D})
            for (double v : t->data()) CHECK(v == 0.0);
    }
    SUBCASE("finite differences through the tape primitive") {
        for (int trial = 0; trial < 4; ++trial) {
            auto in = random_ssm_instance(rng, 3, 4, 7);
            const Tensor w = testing::random_tensor({3, 7}, rng);
            ScalarGraph graph = [&](ad::Tape &, std::span<const ad::Var> v) {
                return ad::dot(selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]), w);
            };
            auto res = check_gradients(graph, {in.x, in.delta, in.A, in.B, in.C, in.D}, {});
            CHECK(res.checked == 21 + 21 + 12 + 28 + 28 + 3);
            CHECK_MESSAGE(res.max_rel_error < 1e-4, res.worst);
        }
    }
    SUBCASE("tiny delta exercises the series branch") {
        auto in = random_ssm_instance(rng, 2, 3, 5);
        in.delta = testing::random_tensor({2, 5}, rng, 1e-5, 2e-4);
        in.A = testing::random_tensor({2, 3}, rng, -1.0, -0.5);
        const Tensor w = testing::random_tensor({2, 5}, rng);
        ScalarGraph graph = [&](ad::Tape &, std::span<const ad::Var> v) {
            return ad::dot(selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]), w);
        };
        GradCheckOptions opt;
        opt.step = 1e-7;
        auto res = check_gradients(graph, {in.x, in.delta, in.A, in.B, in.C, in.D}, {}, opt);
        CHECK_MESSAGE(res.max_rel_error < 1e-4, res.worst);
    }
}
