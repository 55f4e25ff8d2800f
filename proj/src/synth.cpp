// SPDX-License-Identifier: Apache-2.0
#include "modem/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace modem::synth {

namespace {

using Rng = std::mt19937_64;

double uni(Rng &rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Tensor check_image(const Tensor &img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("expected a [3 x H x W] image, got " + shape_str(img.shape()));
    return img;
}

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3 - 2 * t);
}

/// Bilinear upsampling of a random 4x4 lattice: a smooth field in [0, 1].
Tensor smooth_field(std::size_t h, std::size_t w, Rng &rng) {
    constexpr std::size_t g = 4;
    double lattice[g][g];
    for (auto &row : lattice)
        for (double &v : row) v = uni(rng, 0.0, 1.0);
    Tensor f({h, w});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const double y = (h > 1 ? static_cast<double>(i) / (h - 1) : 0.0) * (g - 1);
            const double x = (w > 1 ? static_cast<double>(j) / (w - 1) : 0.0) * (g - 1);
            const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(y), g - 2);
            const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(x), g - 2);
            const double fy = y - y0, fx = x - x0;
            f.at(i, j) = (1 - fy) * ((1 - fx) * lattice[y0][x0] + fx * lattice[y0][x0 + 1]) +
                         fy * ((1 - fx) * lattice[y0 + 1][x0] + fx * lattice[y0 + 1][x0 + 1]);
        }
    return f;
}

}  // namespace

Kind parse_kind(std::string_view name) {
    if (name == "streaks") return Kind::streaks;
    if (name == "haze") return Kind::haze;
    if (name == "flecks") return Kind::flecks;
    if (name == "mixed") return Kind::mixed;
    throw std::invalid_argument("unknown degradation kind '" + std::string(name) +
                                "' (expected streaks, haze, flecks or mixed)");
}

std::string to_string(Kind kind) {
    switch (kind) {
    case Kind::streaks: return "streaks";
    case Kind::haze: return "haze";
    case Kind::flecks: return "flecks";
    case Kind::mixed: return "mixed";
    }
    return "?";
}

Tensor clean_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor img({3, h, w});
    double corner[4][3];
    for (auto &c : corner)
        for (double &v : c) v = uni(rng, 0.1, 0.9);
    const std::size_t n = h * w;
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const double y = h > 1 ? static_cast<double>(i) / (h - 1) : 0.0;
            const double x = w > 1 ? static_cast<double>(j) / (w - 1) : 0.0;
            for (std::size_t c = 0; c < 3; ++c)
                img[c * n + i * w + j] = (1 - y) * ((1 - x) * corner[0][c] + x * corner[1][c]) +
                                         y * ((1 - x) * corner[2][c] + x * corner[3][c]);
        }

    const int shapes = std::uniform_int_distribution<int>(3, 6)(rng);
    for (int s = 0; s < shapes; ++s) {
        const bool disc = uni(rng, 0, 1) < 0.5;
        const double cy = uni(rng, 0, h), cx = uni(rng, 0, w);
        const double ry = uni(rng, 0.08, 0.3) * h, rx = uni(rng, 0.08, 0.3) * w;
        double colour[3];
        for (double &v : colour) v = uni(rng, 0.0, 1.0);
        const double opacity = uni(rng, 0.5, 0.9);
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const double dy = (i + 0.5 - cy) / ry, dx = (j + 0.5 - cx) / rx;
                const double d = disc ? std::sqrt(dy * dy + dx * dx) : std::max(std::abs(dy), std::abs(dx));
                const double a = opacity * (1.0 - smoothstep(0.85, 1.0, d));
                if (a <= 0) continue;
                for (std::size_t c = 0; c < 3; ++c) {
                    double &p = img[c * n + i * w + j];
                    p = (1 - a) * p + a * colour[c];
                }
            }
    }

    const double fy = uni(rng, 0.2, 0.8), fx = uni(rng, 0.2, 0.8), phase = uni(rng, 0, 2 * std::numbers::pi);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const double t = 0.04 * std::sin(fy * i + fx * j + phase);
            for (std::size_t c = 0; c < 3; ++c) {
                double &p = img[c * n + i * w + j];
                p = std::clamp(p + t, 0.0, 1.0);
            }
        }
    return img;
}

Tensor add_streaks(const Tensor &img, double severity, std::uint64_t seed) {
    check_image(img);
    Tensor out = img;
    const std::size_t h = img.dim(1), w = img.dim(2), n = h * w;
    Rng rng(seed);
    const auto count = static_cast<std::size_t>(std::lround(severity * 24.0 * static_cast<double>(n) / 4096.0));
    if (count == 0) return out;
    const double base = uni(rng, std::numbers::pi / 3, 2 * std::numbers::pi / 3);
    Tensor layer({h, w});
    for (std::size_t s = 0; s < count; ++s) {
        const double theta = base + uni(rng, -0.08, 0.08);
        const double len = uni(rng, 0.15, 0.4) * static_cast<double>(h);
        const double y0 = uni(rng, 0, h), x0 = uni(rng, 0, w);
        const double dy = std::sin(theta) * len, dx = std::cos(theta) * len;
        const double strength = uni(rng, 0.5, 1.0) * (0.3 + 0.5 * severity);
        const double halfwidth = uni(rng, 0.6, 1.2);
        const auto lo_i = static_cast<std::ptrdiff_t>(std::floor(std::min(y0, y0 + dy) - 2));
        const auto hi_i = static_cast<std::ptrdiff_t>(std::ceil(std::max(y0, y0 + dy) + 2));
        const auto lo_j = static_cast<std::ptrdiff_t>(std::floor(std::min(x0, x0 + dx) - 2));
        const auto hi_j = static_cast<std::ptrdiff_t>(std::ceil(std::max(x0, x0 + dx) + 2));
        const double l2 = dy * dy + dx * dx;
        for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(lo_i, 0); i < std::min<std::ptrdiff_t>(hi_i, h); ++i)
            for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(lo_j, 0); j < std::min<std::ptrdiff_t>(hi_j, w); ++j) {
                const double py = i + 0.5 - y0, px = j + 0.5 - x0;
                const double t = std::clamp((py * dy + px * dx) / l2, 0.0, 1.0);
                const double ey = py - t * dy, ex = px - t * dx;
                const double d = std::sqrt(ey * ey + ex * ex);
                const double a = std::max(0.0, 1.0 - d / halfwidth);
                layer.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) += strength * a;
            }
    }
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) out[c * n + i] = std::min(1.0, out[c * n + i] + layer[i]);
    return out;
}

std::pair<Tensor, double> haze_field(std::size_t h, std::size_t w, double severity, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t = smooth_field(h, w, rng);
    for (double &v : t.storage()) v = 1.0 - severity * (0.3 + 0.5 * v);
    return {t, uni(rng, 0.75, 0.95)};
}

Tensor apply_haze(const Tensor &img, const Tensor &t, double airlight) {
    check_image(img);
    const std::size_t h = img.dim(1), w = img.dim(2), n = h * w;
    if (t.shape() != Shape{h, w}) throw ShapeError("transmission must be [H x W], got " + shape_str(t.shape()));
    Tensor out(img.shape());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) out[c * n + i] = img[c * n + i] * t[i] + airlight * (1.0 - t[i]);
    return out;
}

Tensor add_flecks(const Tensor &img, double severity, std::uint64_t seed) {
    check_image(img);
    Tensor out = img;
    const std::size_t h = img.dim(1), w = img.dim(2), n = h * w;
    Rng rng(seed);
    const auto count = static_cast<std::size_t>(std::lround(severity * 30.0 * static_cast<double>(n) / 4096.0));
    for (std::size_t s = 0; s < count; ++s) {
        const double cy = uni(rng, 0, h), cx = uni(rng, 0, w), r = uni(rng, 0.8, 2.5);
        const double alpha = 0.5 + 0.5 * severity * uni(rng, 0.5, 1.0);
        for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(cy - r - 1); i <= static_cast<std::ptrdiff_t>(cy + r + 1); ++i)
            for (std::ptrdiff_t j = static_cast<std::ptrdiff_t>(cx - r - 1); j <= static_cast<std::ptrdiff_t>(cx + r + 1); ++j) {
                if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(h) || j >= static_cast<std::ptrdiff_t>(w)) continue;
                const double d = std::hypot(i + 0.5 - cy, j + 0.5 - cx);
                const double a = alpha * (1.0 - smoothstep(r - 0.5, r + 0.5, d));
                if (a <= 0) continue;
                for (std::size_t c = 0; c < 3; ++c) {
                    double &p = out[c * n + static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)];
                    p += (1.0 - p) * a;
                }
            }
    }
    return out;
}

SynthSample synth_degrade(const Tensor &gt, Kind kind, double severity, std::uint64_t seed) {
    check_image(gt);
    if (!(severity >= 0.0 && severity <= 1.0)) throw std::invalid_argument("severity must lie in [0, 1]");
    SynthSample s{gt, gt, kind, severity, seed};
    if (severity == 0.0) return s;
    const std::size_t h = gt.dim(1), w = gt.dim(2);
    auto haze = [&](const Tensor &img) {
        auto [t, a] = haze_field(h, w, severity, seed ^ 0x9e3779b97f4a7c15ULL);
        return apply_haze(img, t, a);
    };
    switch (kind) {
    case Kind::streaks: s.lq = add_streaks(gt, severity, seed); break;
    case Kind::haze: s.lq = haze(gt); break;
    case Kind::flecks: s.lq = add_flecks(gt, severity, seed); break;
    case Kind::mixed: s.lq = haze(add_streaks(gt, severity, seed)); break;
    }
    return s;
}

std::uint64_t sample_seed(std::uint64_t base, std::size_t index) {
    // splitmix64 of the pair
    std::uint64_t z = base * 0x9e3779b97f4a7c15ULL + index + 0x632be59bd9b4e019ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Dataset make_dataset(const SynthSpec &spec) {
    if (spec.kinds.empty()) throw std::invalid_argument("dataset needs at least one degradation kind");
    if (!(0.0 <= spec.severity_min && spec.severity_min <= spec.severity_max && spec.severity_max <= 1.0))
        throw std::invalid_argument("severity range must satisfy 0 <= min <= max <= 1");
    if (spec.size == 0) throw std::invalid_argument("image size must be positive");
    auto make = [&](std::size_t index) {
        const std::uint64_t seed = sample_seed(spec.seed, index);
        Rng rng(seed);
        const Kind kind = spec.kinds[index % spec.kinds.size()];
        const double severity = spec.severity_min == spec.severity_max
                                    ? spec.severity_min
                                    : uni(rng, spec.severity_min, spec.severity_max);
        return synth_degrade(clean_image(spec.size, spec.size, rng()), kind, severity, rng());
    };
    Dataset d;
    for (std::size_t i = 0; i < spec.train; ++i) d.train.push_back(make(i));
    for (std::size_t i = 0; i < spec.held_out; ++i) d.held_out.push_back(make(spec.train + i));
    return d;
}

std::string manifest_json(const SynthSpec &spec, const Dataset &data) {
    nlohmann::ordered_json j;
    j["seed"] = spec.seed;
    j["size"] = spec.size;
    auto list = nlohmann::ordered_json::array();
    auto add = [&](const std::vector<SynthSample> &set, const char *split, std::size_t offset) {
        for (std::size_t i = 0; i < set.size(); ++i)
            list.push_back({{"split", split},
                            {"index", offset + i},
                            {"seed", set[i].seed},
                            {"kind", to_string(set[i].kind)},
                            {"severity", set[i].severity}});
    };
    add(data.train, "train", 0);
    add(data.held_out, "held_out", data.train.size());
    j["samples"] = std::move(list);
    return j.dump(2) + "\n";
}

}  // namespace modem::synth
