// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>

#include "modem/config.hpp"
#include "modem/image.hpp"
#include "modem/losses.hpp"
#include "modem/ops.hpp"
#include "modem/optim.hpp"
#include "modem/synth.hpp"
#include "modem/train.hpp"
#include "test_util.hpp"

using namespace modem;

namespace {

double eval_loss(ad::Var (*f)(ad::Var, ad::Var), const Tensor &a, const Tensor &b) {
    ad::Tape tape;
    return f(tape.constant(a), tape.constant(b)).value()[0];
}

double cor_loss(const Tensor &a, const Tensor &b) {
    ad::Tape tape;
    return loss::correlation(tape.constant(a), tape.constant(b)).value()[0];
}

double kl(const Tensor &p, const Tensor &q) {
    ad::Tape tape;
    return loss::kl_divergence(tape.constant(p), tape.constant(q)).value()[0];
}

/// Non-separable SSIM: every 11x11 window visited directly with its 2-D Gaussian weights.
double ssim_oracle(const Tensor &a, const Tensor &b) {
    auto gray = [](const Tensor &t) {
        const std::size_t n = t.dim(1) * t.dim(2);
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = 0.299 * t[i] + 0.587 * t[n + i] + 0.114 * t[2 * n + i];
        return y;
    };
    const auto x = gray(a), y = gray(b);
    const std::size_t h = a.dim(1), w = a.dim(2);
    double g[11][11], gs = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) gs += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
    double total = 0;
    std::size_t count = 0;
    for (std::size_t r = 0; r + 11 <= h; ++r)
        for (std::size_t c = 0; c + 11 <= w; ++c) {
            double mx = 0, my = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double wt = g[i][j] / gs;
                    mx += wt * x[(r + i) * w + c + j];
                    my += wt * y[(r + i) * w + c + j];
                }
            double vx = 0, vy = 0, cxy = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double wt = g[i][j] / gs;
                    const double dx = x[(r + i) * w + c + j] - mx, dy = y[(r + i) * w + c + j] - my;
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cxy += wt * dx * dy;
                }
            const double c1 = 1e-4, c2 = 9e-4;
            total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    return total / count;
}

config::RunConfig tiny_run() {
    auto c = config::toy_preset();
    c.data.train = 8;
    c.data.held_out = 2;
    c.data.size = 32;
    c.train.patch = 32;
    c.train.batch = 1;
    c.train.iterations = 50;
    c.train.schedule.periods = {50};
    c.train.probe = 2;
    return c;
}

std::filesystem::path scratch_dir(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / ("modem_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("l1 loss") {
    std::mt19937_64 rng(1);
    const Tensor x = testing::random_tensor({3, 4, 5}, rng);
    CHECK(eval_loss(loss::l1, x, x) == 0.0);
    CHECK(eval_loss(loss::l1, x, ops::add(x, Tensor::scalar(0.5))) == doctest::Approx(0.5).epsilon(1e-15));
    const Tensor y = testing::random_tensor({3, 4, 5}, rng);
    double s = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += std::abs(x[i] - y[i]);
    CHECK(std::abs(eval_loss(loss::l1, x, y) - s / 60) < 1e-15);
    CHECK_THROWS_AS(eval_loss(loss::l1, x, Tensor({3, 4, 4})), ShapeError);
}

TEST_CASE("correlation loss") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 50; ++t) {
        const Tensor x = testing::random_tensor({3, 6, 5}, rng), y = testing::random_tensor({3, 6, 5}, rng);
        CHECK(std::abs(cor_loss(x, x)) < 1e-15);
        CHECK(std::abs(cor_loss(x, ops::add(ops::scale(x, 2.0), Tensor::scalar(3.0)))) < 1e-15);
        CHECK(std::abs(cor_loss(x, ops::scale(x, -1.0)) - 1.0) < 1e-15);
        const double base = cor_loss(x, y);
        CHECK(base >= 0.0);
        CHECK(base <= 1.0);
        std::uniform_real_distribution<double> d(0.01, 10.0), off(-5.0, 5.0);
        const double a = d(rng), b = off(rng);
        CHECK(std::abs(cor_loss(x, ops::add(ops::scale(y, a), Tensor::scalar(b))) - base) < 1e-12);
        CHECK(std::abs(cor_loss(ops::add(ops::scale(x, a), Tensor::scalar(b)), y) - base) < 1e-12);
    }
    // Pearson over all elements jointly, against a direct formula.
    const Tensor x = testing::random_tensor({3, 4, 4}, rng), y = testing::random_tensor({3, 4, 4}, rng);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < 48; ++i) mx += x[i] / 48, my += y[i] / 48;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < 48; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    CHECK(std::abs(cor_loss(x, y) - (1 - sxy / std::sqrt(sxx * syy)) / 2) < 1e-14);

    bool flat = false;
    ad::Tape tape;
    auto c = tape.leaf(Tensor({3, 4, 4}, 0.25));
    auto v = loss::correlation(c, tape.constant(y), &flat);
    CHECK(flat);
    CHECK(v.value()[0] == 0.5);
    tape.backward(v);
    const Tensor gc = tape.grad(c);
    for (double g : gc.data()) CHECK(g == 0.0);
    CHECK_FALSE(loss::pearson(x, y).degenerate);
    CHECK(loss::pearson(x, Tensor({3, 4, 4}, 1.0)).degenerate);
}

TEST_CASE("kl divergence") {
    CHECK(std::abs(kl(Tensor::from({0, 0}), Tensor::from({0, std::log(3.0)})) - 0.1438) < 1e-4);
    const double exact = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
    CHECK(std::abs(kl(Tensor::from({0, 0}), Tensor::from({0, std::log(3.0)})) - exact) < 1e-15);
    std::mt19937_64 rng(3);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = testing::random_extent(rng, 1, 40);
        const Tensor p = testing::random_tensor({n}, rng, -5, 5), q = testing::random_tensor({n}, rng, -5, 5);
        CHECK(kl(p, q) >= 0.0);
        CHECK(kl(p, p) == 0.0);
    }
    // Shift invariance of softmax.
    const Tensor p = testing::random_tensor({6}, rng), q = testing::random_tensor({6}, rng);
    CHECK(std::abs(kl(p, q) - kl(ops::add(p, Tensor::scalar(4.0)), q)) < 1e-13);
    CHECK_THROWS_AS(kl(Tensor({3}), Tensor({4})), ShapeError);

    ad::Tape tape;
    auto a = tape.leaf(p), b = tape.leaf(q);
    tape.backward(loss::kl_divergence(a, b));
    const Tensor ga = tape.grad(a), gb = tape.grad(b);
    for (double g : ga.data()) CHECK(g == 0.0);
    double s = 0;
    for (double g : gb.data()) s += g;
    CHECK(std::abs(s) < 1e-15);
}

TEST_CASE("psnr") {
    CHECK(metrics::psnr(Tensor({3, 4, 4}), Tensor({3, 4, 4}, 1.0)) == 0.0);
    const Tensor a({3, 8, 8}, 0.5);
    CHECK(metrics::psnr(a, ops::add(a, Tensor::scalar(1.0 / 255))) == doctest::Approx(20 * std::log10(255.0)).epsilon(1e-12));
    CHECK(std::abs(metrics::psnr(a, ops::add(a, Tensor::scalar(1.0 / 255))) - 48.13) < 0.005);
    CHECK(metrics::psnr(a, a) == std::numeric_limits<double>::infinity());
    std::mt19937_64 rng(4);
    for (int t = 0; t < 20; ++t) {
        const Tensor x = testing::random_tensor({3, 9, 7}, rng, 0, 1), y = testing::random_tensor({3, 9, 7}, rng, 0, 1);
        double se = 0;
        for (std::size_t i = 0; i < x.numel(); ++i) se += (x[i] - y[i]) * (x[i] - y[i]);
        CHECK(std::abs(metrics::psnr(x, y) - 10 * std::log10(x.numel() / se)) < 1e-10);
    }
}

TEST_CASE("ssim") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
        const std::size_t h = testing::random_extent(rng, 11, 24), w = testing::random_extent(rng, 11, 24);
        const Tensor x = testing::random_tensor({3, h, w}, rng, 0, 1);
        Tensor y = x;
        const double noise = 0.05 * t;
        for (double &v : y.storage()) v = std::clamp(v + std::uniform_real_distribution<double>(-noise, noise)(rng), 0.0, 1.0);
        if (t % 5 == 0) y = testing::random_tensor({3, h, w}, rng, 0, 1);
        const double s = metrics::ssim(x, y);
        CHECK(std::abs(s - ssim_oracle(x, y)) < 1e-8);
        CHECK(s >= -1.0);
        CHECK(s <= 1.0);
        CHECK(metrics::ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(metrics::ssim(Tensor({3, 10, 30}), Tensor({3, 10, 30})), std::invalid_argument);
}

TEST_CASE("adamw") {
    std::mt19937_64 rng(6);
    Parameter p{"p", testing::random_tensor({5}, rng)};
    const Tensor start = p.value;
    SUBCASE("zero gradient without decay leaves parameters unchanged") {
        optim::AdamW opt({&p}, {.weight_decay = 0.0});
        for (int i = 0; i < 3; ++i) opt.step({{&p, Tensor({5})}}, 1e-2);
        CHECK(p.value == start);
    }
    SUBCASE("zero learning rate is bit-exact") {
        optim::AdamW opt({&p}, {});
        opt.step({{&p, testing::random_tensor({5}, rng)}}, 0.0);
        CHECK(p.value == start);
    }
    SUBCASE("decay alone shrinks by (1 - lr wd)") {
        optim::AdamW opt({&p}, {.weight_decay = 0.1});
        opt.step({{&p, Tensor({5})}}, 0.05);
        for (std::size_t i = 0; i < 5; ++i) CHECK(p.value[i] == start[i] * (1 - 0.05 * 0.1));
    }
    SUBCASE("matches the reference recursion over several steps") {
        const optim::AdamWConfig cfg{0.9, 0.999, 1e-8, 1e-2};
        optim::AdamW opt({&p}, cfg);
        std::vector<double> ref(start.data().begin(), start.data().end()), m(5), v(5);
        for (int t = 1; t <= 6; ++t) {
            const Tensor g = testing::random_tensor({5}, rng);
            const double lr = 1e-3 * t;
            opt.step({{&p, g}}, lr);
            for (std::size_t i = 0; i < 5; ++i) {
                ref[i] -= lr * cfg.weight_decay * ref[i];
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
                ref[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
            }
            for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(p.value[i] - ref[i]) < 1e-15);
        }
        CHECK(opt.steps() == 6);
    }
    SUBCASE("first step moves each coordinate by about lr against its gradient sign") {
        optim::AdamW opt({&p}, {.weight_decay = 0.0});
        const Tensor g = testing::random_tensor({5}, rng);
        opt.step({{&p, g}}, 1e-3);
        for (std::size_t i = 0; i < 5; ++i)
            CHECK(p.value[i] - start[i] == doctest::Approx(-1e-3 * g[i] / (std::abs(g[i]) + 1e-8)).epsilon(1e-9));
    }
    SUBCASE("frozen parameters are skipped") {
        p.trainable = false;
        optim::AdamW opt({&p}, {});
        opt.step({{&p, testing::random_tensor({5}, rng)}}, 1.0);
        CHECK(p.value == start);
    }
}

TEST_CASE("cosine restart schedule") {
    optim::CosineRestartSchedule s;
    s.peak = 1e-3;
    s.periods = {100, 200};
    s.restart_weights = {1.0, 0.5};
    s.eta_mins = {1e-5, 1e-6};
    CHECK(s.at(0) == 1e-3);
    CHECK(s.at(50) == doctest::Approx((1e-3 + 1e-5) / 2).epsilon(1e-14));
    CHECK(s.at(100) == doctest::Approx(0.5e-3).epsilon(1e-14));
    CHECK(s.at(200) == doctest::Approx((0.5e-3 + 1e-6) / 2).epsilon(1e-14));
    CHECK(s.at(300) == 1e-6);
    CHECK(s.at(5000) == 1e-6);
    for (std::size_t t = 1; t < 100; ++t) CHECK(s.at(t) < s.at(t - 1));
    s.restart_weights = {1.0, 1.0};
    CHECK(s.at(100) == 1e-3);
    s.eta_mins = {1e-5};
    CHECK_THROWS_AS(s.at(0), std::invalid_argument);
}

TEST_CASE("synthetic degradations") {
    const Tensor gt = synth::clean_image(40, 36, 11);
    CHECK(gt.shape() == Shape{3, 40, 36});
    for (double v : gt.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (auto kind : {synth::Kind::streaks, synth::Kind::haze, synth::Kind::flecks, synth::Kind::mixed}) {
        CHECK(synth::synth_degrade(gt, kind, 0.0, 3).lq == gt);
        const auto a = synth::synth_degrade(gt, kind, 0.7, 3), b = synth::synth_degrade(gt, kind, 0.7, 3);
        CHECK(a.lq == b.lq);
        CHECK(image::encode_ppm(a.lq) == image::encode_ppm(b.lq));
        CHECK(a.lq.shape() == gt.shape());
        CHECK(ops::max_abs_diff(a.lq, gt) > 0.05);
        for (double v : a.lq.data()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK_FALSE(synth::synth_degrade(gt, kind, 0.7, 4).lq == a.lq);
        CHECK(synth::parse_kind(synth::to_string(kind)) == kind);
    }
    // Full haze: t = 0 leaves only the airlight.
    const Tensor fog = synth::apply_haze(gt, Tensor({40, 36}), 0.8);
    for (double v : fog.data()) CHECK(v == 0.8);
    CHECK(synth::apply_haze(gt, Tensor({40, 36}, 1.0), 0.8) == gt);
    // Streaks and flecks only brighten.
    const Tensor s = synth::add_streaks(gt, 0.8, 5), f = synth::add_flecks(gt, 0.8, 5);
    for (std::size_t i = 0; i < gt.numel(); ++i) {
        CHECK(s[i] >= gt[i]);
        CHECK(f[i] >= gt[i]);
    }
    const auto [t, a] = synth::haze_field(40, 36, 0.5, 9);
    for (double v : t.data()) {
        CHECK(v >= 1 - 0.4 - 1e-12);
        CHECK(v <= 1 - 0.15 + 1e-12);
    }
    CHECK(a >= 0.75);
    CHECK_THROWS_AS(synth::synth_degrade(gt, synth::Kind::haze, 1.5, 1), std::invalid_argument);
    CHECK_THROWS_AS(synth::parse_kind("snow"), std::invalid_argument);
}

TEST_CASE("dataset and manifest") {
    synth::SynthSpec spec;
    spec.train = 5;
    spec.held_out = 3;
    spec.size = 16;
    spec.kinds = {synth::Kind::streaks, synth::Kind::haze};
    const auto d = synth::make_dataset(spec), again = synth::make_dataset(spec);
    CHECK(d.train.size() == 5);
    CHECK(d.held_out.size() == 3);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(d.train[i].lq == again.train[i].lq);
        CHECK(d.train[i].kind == spec.kinds[i % 2]);
        CHECK(d.train[i].severity >= spec.severity_min);
        CHECK(d.train[i].severity <= spec.severity_max);
    }
    for (const auto &h : d.held_out)
        for (const auto &t : d.train) CHECK(h.seed != t.seed);
    // Generating more samples does not change the earlier ones.
    spec.train = 7;
    const auto more = synth::make_dataset(spec);
    CHECK(more.train[2].gt == d.train[2].gt);
    const std::string m = synth::manifest_json(spec, more);
    CHECK(m.find("\"held_out\"") != std::string::npos);
    CHECK(m.find("\"streaks\"") != std::string::npos);
}

TEST_CASE("image files") {
    std::mt19937_64 rng(7);
    const Tensor img = image::quantize(testing::random_tensor({3, 5, 7}, rng, 0, 1));
    CHECK(image::decode_pnm(image::encode_ppm(img)) == img);
    const Tensor gray = image::quantize(testing::random_tensor({1, 4, 3}, rng, 0, 1));
    CHECK(image::decode_pnm(image::encode_pgm(gray)) == gray);
    using namespace std::string_literals;
    CHECK(image::decode_pnm("P6\n# comment\n1 1\n255\n\xff\x00\x80"s) ==
          Tensor({3, 1, 1}, std::vector<double>{1.0, 0.0, 128 / 255.0}));
    CHECK_THROWS_AS(image::decode_pnm("P3\n1 1\n255\n1 2 3"), image::ImageError);
    CHECK_THROWS_AS(image::decode_pnm("P6\n2 2\n255\n\x01\x02"), image::ImageError);
    CHECK_THROWS_AS(image::decode_pnm("P6\n1 1\n65535\n\x01\x02\x03\x04\x05\x06"), image::ImageError);
    CHECK_THROWS_AS(image::read_image("/nonexistent/x.ppm"), image::ImageError);
    CHECK(image::encode_ppm(Tensor({3, 1, 1}, 2.0)).back() == '\xff');
}

TEST_CASE("run configuration") {
    const auto toy = config::toy_preset();
    const auto back = config::parse(config::dump(toy));
    CHECK(config::dump(back) == config::dump(toy));
    CHECK(config::parse("{}").model.backbone.channels == toy.model.backbone.channels);
    CHECK(config::parse(R"({"preset": "full"})").model.backbone.depths == std::vector<std::size_t>{4, 4, 6, 8, 6, 4, 4});
    const auto c = config::parse(R"({"model": {"channels": 12, "scan": "hilbert", "ddem": {"c_d": 8}},
                                     "train": {"iterations": 7, "betas": [0.8, 0.99]},
                                     "data": {"kinds": ["haze", "flecks"]}})");
    CHECK(c.model.backbone.channels == 12);
    CHECK(c.model.block.scan.kind == scan::ScanKind::hilbert);
    CHECK(c.model.ddem.c_d == 8);
    CHECK(c.train.iterations == 7);
    CHECK(c.train.adam.beta1 == 0.8);
    CHECK(c.data.kinds.size() == 2);
    for (const char *bad : {R"({"bogus": 1})", R"({"model": {"chanels": 4}})", R"({"train": {"iterations": -3}})",
                            R"({"train": {"iterations": 1.5}})", R"({"train": {"lr": "fast"}})",
                            R"({"model": {"depths": [1, 1]}})", R"({"data": {"kinds": ["snow"]}})",
                            R"({"model": {"scan": "spiral"}})", R"({"train": {"stage": 3}})", "[1, 2",
                            R"({"train": {"periods": [10], "eta_mins": [1, 2]}})", R"({"preset": "huge"})",
                            R"({"train": {"patch": 128}})"})
        CHECK_THROWS_AS(config::parse(bad), config::ConfigError);
    CHECK(config::dump_model(config::parse_model(config::dump_model(toy.model))) == config::dump_model(toy.model));
}

TEST_CASE("seed override from the environment") {
    auto c = config::toy_preset();
    setenv("MODEM_SEED", "1234", 1);
    config::apply_seed_override(c);
    CHECK(c.train.seed == 1234);
    CHECK(c.data.seed == 1234);
    setenv("MODEM_SEED", "12x", 1);
    CHECK_THROWS_AS(config::apply_seed_override(c), config::ConfigError);
    unsetenv("MODEM_SEED");
}

TEST_CASE("stage-one smoke run, determinism and resumption") {
    const auto c = tiny_run();
    const auto data = synth::make_dataset(c.data);
    auto curve = [&] {
        nn::Modem m(c.model, c.train.seed, false);
        std::string csv = train::csv_header();
        train::run(m, c.train, data, [&](const train::LossRow &r) { csv += train::csv_row(r); });
        return csv;
    };
    const std::string a = curve();
    CHECK(a == curve());
    CHECK(a.rfind("step,l1,l_cor,l_kl,total,lr\n", 0) == 0);
    CHECK(std::count(a.begin(), a.end(), '\n') == 51);
    CHECK(a.find("nan") == std::string::npos);

    // Save at step 20, resume into a fresh model and compare the next step.
    const auto dir = scratch_dir("resume");
    nn::Modem m(c.model, c.train.seed, false);
    train::Trainer t(m, c.train, data);
    for (int i = 0; i < 20; ++i) t.step();
    t.save(dir / "s1.ckpt");
    const auto next = t.step();

    nn::Modem fresh(c.model, 99, false);
    train::Trainer r(fresh, c.train, data);
    r.resume(dir / "s1.ckpt");
    CHECK(r.next_step() == 20);
    const auto again = r.step();
    CHECK(train::csv_row(again) == train::csv_row(next));
    CHECK(train::csv_row(r.step()) == train::csv_row(t.step()));
    std::filesystem::remove_all(dir);
}

TEST_CASE("divergence aborts with a diagnostic") {
    auto c = tiny_run();
    const auto data = synth::make_dataset(c.data);
    nn::Modem m(c.model, 1, false);
    m.backbone.embed.weight.value[0] = std::numeric_limits<double>::quiet_NaN();
    train::Trainer t(m, c.train, data);
    try {
        t.step();
        FAIL("expected divergence");
    } catch (const train::TrainingDiverged &e) {
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
        CHECK(std::string(e.what()).find("backbone.embed.weight") != std::string::npos);
    }
}

TEST_CASE("stage two keeps the teacher frozen") {
    auto c = tiny_run();
    c.train.iterations = 20;
    const auto data = synth::make_dataset(c.data);
    nn::Modem s1(c.model, 1, false);
    train::run(s1, c.train, data);
    const Checkpoint ckpt = snapshot(train::stage_parameters(s1, 1), 1);

    nn::Modem m(c.model, 5, true);
    train::prepare_stage2(m, ckpt);
    auto teacher_before = snapshot(m.teacher_parameters(), 1);
    auto backbone_before = snapshot(m.backbone_parameters(), 1);
    c.train.stage = 2;

    // The degraded-only student differs from the teacher's view, so the KL term is live.
    {
        ad::Tape tape;
        train::LossReport rep;
        train::objective(tape, m, 2, data.train[0].lq, data.train[0].gt, true, rep);
        CHECK(rep.l_kl > 0.0);
        CHECK(rep.total == doctest::Approx(rep.l1 + rep.l_cor + rep.l_kl).epsilon(1e-14));
    }

    std::string csv;
    const auto res = train::run(m, c.train, data, [&](const train::LossRow &r) { csv += train::csv_row(r); });
    for (const auto &row : res.curve) CHECK(row.loss.l_kl > 0.0);
    const auto teacher_after = snapshot(m.teacher_parameters(), 1);
    CHECK(encode_checkpoint(teacher_after) == encode_checkpoint(teacher_before));
    CHECK_FALSE(encode_checkpoint(snapshot(m.backbone_parameters(), 1)) == encode_checkpoint(backbone_before));

    SUBCASE("frozen backbone") {
        nn::Modem f(c.model, 5, true);
        train::prepare_stage2(f, ckpt);
        auto cfg = c.train;
        cfg.freeze_backbone = true;
        train::run(f, cfg, data);
        CHECK(encode_checkpoint(snapshot(f.backbone_parameters(), 1)) == encode_checkpoint(backbone_before));
        CHECK(encode_checkpoint(snapshot(f.teacher_parameters(), 1)) == encode_checkpoint(teacher_before));
    }
    SUBCASE("stage-two checkpoints reload") {
        const auto bytes = encode_checkpoint(snapshot(train::stage_parameters(m, 2), 2));
        const auto model = train::load_model(decode_checkpoint(bytes), c.model);
        REQUIRE(model->student);
        const Tensor out = train::restore_image(*model, data.held_out[0].lq);
        CHECK(out == train::restore_image(m, data.held_out[0].lq));
        CHECK(out.shape() == data.held_out[0].lq.shape());
    }
    CHECK_THROWS_AS(train::prepare_stage2(m, snapshot(m.parameters(), 2)), FormatError);
    nn::Modem no_student(c.model, 1, false);
    CHECK_THROWS_AS(train::Trainer(no_student, c.train, data), ContractError);
    CHECK_THROWS_AS(train::restore_image(no_student, data.held_out[0].lq), ContractError);
}

TEST_CASE("identity-initialized model restores a clean image to itself") {
    const auto c = tiny_run();
    nn::Modem m(c.model, 2, true);
    const Tensor gt = image::quantize(synth::clean_image(20, 13, 4));
    const auto s = synth::synth_degrade(gt, synth::Kind::mixed, 0.0, 1);
    const Tensor out = train::restore_image(m, s.lq);
    CHECK(out.shape() == gt.shape());
    CHECK(ops::max_abs_diff(out, gt) == 0.0);
}
