// SPDX-License-Identifier: Apache-2.0
#include "modem/scan_order.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <ostream>

namespace modem::scan {

namespace {

// Spreads the low 32 bits of v into the even bit lanes of a 64-bit word.
constexpr std::uint64_t spread_bits(std::uint64_t v) noexcept {
    v &= 0x00000000ffffffffULL;
    v = (v | (v << 16)) & 0x0000ffff0000ffffULL;
    v = (v | (v << 8)) & 0x00ff00ff00ff00ffULL;
    v = (v | (v << 4)) & 0x0f0f0f0f0f0f0f0fULL;
    v = (v | (v << 2)) & 0x3333333333333333ULL;
    v = (v | (v << 1)) & 0x5555555555555555ULL;
    return v;
}

constexpr std::uint32_t compact_bits(std::uint64_t v) noexcept {
    v &= 0x5555555555555555ULL;
    v = (v | (v >> 1)) & 0x3333333333333333ULL;
    v = (v | (v >> 2)) & 0x0f0f0f0f0f0f0f0fULL;
    v = (v | (v >> 4)) & 0x00ff00ff00ff00ffULL;
    v = (v | (v >> 8)) & 0x0000ffff0000ffffULL;
    v = (v | (v >> 16)) & 0x00000000ffffffffULL;
    return static_cast<std::uint32_t>(v);
}

void hilbert_rotate(std::uint64_t s, std::uint64_t &x, std::uint64_t &y, std::uint64_t rx,
                    std::uint64_t ry) {
    if (ry == 0) {
        if (rx == 1) {
            x = s - 1 - x;
            y = s - 1 - y;
        }
        std::swap(x, y);
    }
}

std::size_t next_pow2(std::size_t v) { return std::bit_ceil(std::max<std::size_t>(v, 1)); }

void check_grid(std::size_t h, std::size_t w) {
    if (h == 0 || w == 0) throw ShapeError("scan grid extents must be positive");
    if (h * w > 0xffffffffULL) throw ShapeError("scan grid too large for 32-bit indices");
}

// Orders produced by walking a curve over the padded square and dropping
// cells outside the grid.
template <typename Decode>
std::vector<std::uint32_t> filtered_curve(std::size_t h, std::size_t w, Decode decode) {
    const std::size_t side = next_pow2(std::max(h, w));
    std::vector<std::uint32_t> fwd;
    fwd.reserve(h * w);
    const std::uint64_t cells = static_cast<std::uint64_t>(side) * side;
    if (side == h && side == w) {
        fwd.resize(h * w);
        for (std::uint64_t z = 0; z < cells; ++z) {
            const auto [i, j] = decode(z);
            fwd[z] = static_cast<std::uint32_t>(i * w + j);
        }
        return fwd;
    }
    for (std::uint64_t z = 0; z < cells; ++z) {
        const auto [i, j] = decode(z);
        if (i < h && j < w) fwd.push_back(static_cast<std::uint32_t>(i * w + j));
    }
    return fwd;
}

}  // namespace

ScanSpec parse_scan(std::string_view name) {
    if (name == "raster") return {ScanKind::raster, 8};
    if (name == "continuous" || name == "zigzag") return {ScanKind::continuous, 8};
    if (name == "morton") return {ScanKind::morton, 8};
    if (name == "hilbert") return {ScanKind::hilbert, 8};
    if (name.starts_with("local")) {
        auto rest = name.substr(5);
        if (rest.empty()) return {ScanKind::local, 8};
        std::size_t w = 0;
        for (char c : rest) {
            if (c < '0' || c > '9') throw ContractError("unknown scan kind '" + std::string(name) + "'");
            w = w * 10 + static_cast<std::size_t>(c - '0');
        }
        if (w == 0) throw ContractError("local scan window must be >= 1");
        return {ScanKind::local, w};
    }
    throw ContractError("unknown scan kind '" + std::string(name) + "'");
}

std::string to_string(const ScanSpec &spec) {
    switch (spec.kind) {
    case ScanKind::raster: return "raster";
    case ScanKind::continuous: return "continuous";
    case ScanKind::local: return "local" + std::to_string(spec.window);
    case ScanKind::morton: return "morton";
    case ScanKind::hilbert: return "hilbert";
    }
    return "unknown";
}

std::uint64_t morton_encode(std::uint32_t i, std::uint32_t j) noexcept {
    return spread_bits(i) | (spread_bits(j) << 1);
}

std::pair<std::uint32_t, std::uint32_t> morton_decode(std::uint64_t z) noexcept {
    return {compact_bits(z), compact_bits(z >> 1)};
}

unsigned hilbert_order_for_side(std::uint64_t side) {
    if (side == 0 || !std::has_single_bit(side))
        throw ContractError("Hilbert curve needs a power-of-two side, got " + std::to_string(side));
    return static_cast<unsigned>(std::countr_zero(side));
}

std::uint64_t hilbert_encode(std::uint32_t i, std::uint32_t j, unsigned order) {
    if (order > 31) throw ContractError("Hilbert order must be <= 31");
    const std::uint64_t n = std::uint64_t{1} << order;
    if (i >= n || j >= n) throw ContractError("Hilbert coordinate outside the 2^order square");
    std::uint64_t x = i, y = j, d = 0;
    for (std::uint64_t s = n / 2; s > 0; s /= 2) {
        const std::uint64_t rx = (x & s) ? 1 : 0;
        const std::uint64_t ry = (y & s) ? 1 : 0;
        d += s * s * ((3 * rx) ^ ry);
        hilbert_rotate(s, x, y, rx, ry);
    }
    return d;
}

std::pair<std::uint32_t, std::uint32_t> hilbert_decode(std::uint64_t d, unsigned order) {
    if (order > 31) throw ContractError("Hilbert order must be <= 31");
    const std::uint64_t n = std::uint64_t{1} << order;
    std::uint64_t x = 0, y = 0, t = d;
    for (std::uint64_t s = 1; s < n; s *= 2) {
        const std::uint64_t rx = 1 & (t / 2);
        const std::uint64_t ry = 1 & (t ^ rx);
        hilbert_rotate(s, x, y, rx, ry);
        x += s * rx;
        y += s * ry;
        t /= 4;
    }
    return {static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)};
}

ScanPermutation::ScanPermutation(std::size_t height, std::size_t width,
                                 std::vector<std::uint32_t> forward)
    : height_(height), width_(width), forward_(std::move(forward)) {
    check_grid(height, width);
    const std::size_t n = height * width;
    if (forward_.size() != n)
        throw ContractError("scan permutation has " + std::to_string(forward_.size()) +
                            " entries for a " + std::to_string(n) + "-pixel grid");
    constexpr std::uint32_t unset = 0xffffffffu;
    inverse_.assign(n, unset);
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint32_t p = forward_[k];
        if (p >= n || inverse_[p] != unset) throw ContractError("scan order is not a bijection");
        inverse_[p] = static_cast<std::uint32_t>(k);
    }
}

ScanPermutation ScanPermutation::reversed() const {
    std::vector<std::uint32_t> fwd(forward_.rbegin(), forward_.rend());
    return ScanPermutation(height_, width_, std::move(fwd));
}

ScanPermutation build_order(std::size_t h, std::size_t w, const ScanSpec &spec) {
    check_grid(h, w);
    std::vector<std::uint32_t> fwd;
    fwd.reserve(h * w);
    switch (spec.kind) {
    case ScanKind::raster:
        for (std::size_t p = 0; p < h * w; ++p) fwd.push_back(static_cast<std::uint32_t>(p));
        break;
    case ScanKind::continuous:
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t t = 0; t < w; ++t) {
                const std::size_t j = (i % 2 == 0) ? t : w - 1 - t;
                fwd.push_back(static_cast<std::uint32_t>(i * w + j));
            }
        break;
    case ScanKind::local: {
        if (spec.window == 0) throw ContractError("local scan window must be >= 1");
        const std::size_t b = spec.window;
        for (std::size_t bi = 0; bi < h; bi += b)
            for (std::size_t bj = 0; bj < w; bj += b)
                for (std::size_t i = bi; i < std::min(h, bi + b); ++i)
                    for (std::size_t j = bj; j < std::min(w, bj + b); ++j)
                        fwd.push_back(static_cast<std::uint32_t>(i * w + j));
        break;
    }
    case ScanKind::morton:
        fwd = filtered_curve(h, w, [](std::uint64_t z) {
            const auto [i, j] = morton_decode(z);
            return std::pair<std::size_t, std::size_t>{i, j};
        });
        break;
    case ScanKind::hilbert: {
        const unsigned order = hilbert_order_for_side(next_pow2(std::max(h, w)));
        fwd = filtered_curve(h, w, [order](std::uint64_t d) {
            const auto [i, j] = hilbert_decode(d, order);
            return std::pair<std::size_t, std::size_t>{i, j};
        });
        break;
    }
    }
    return ScanPermutation(h, w, std::move(fwd));
}

Tensor gather(const Tensor &x, const ScanPermutation &p) {
    if (x.rank() != 3 || x.dim(1) != p.height() || x.dim(2) != p.width())
        throw ShapeError("gather: map " + shape_str(x.shape()) + " does not match a " +
                         std::to_string(p.height()) + "x" + std::to_string(p.width()) + " scan");
    const std::size_t c = x.dim(0), l = p.size();
    Tensor out({c, l});
    const auto fwd = p.forward();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double *src = x.data().data() + ch * l;
        double *dst = out.data().data() + ch * l;
        for (std::size_t k = 0; k < l; ++k) dst[k] = src[fwd[k]];
    }
    return out;
}

Tensor scatter(const Tensor &seq, const ScanPermutation &p) {
    if (seq.rank() != 2 || seq.dim(1) != p.size())
        throw ShapeError("scatter: sequence " + shape_str(seq.shape()) + " does not match a scan of " +
                         std::to_string(p.size()) + " steps");
    const std::size_t c = seq.dim(0), l = p.size();
    Tensor out({c, p.height(), p.width()});
    const auto fwd = p.forward();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double *src = seq.data().data() + ch * l;
        double *dst = out.data().data() + ch * l;
        for (std::size_t k = 0; k < l; ++k) dst[fwd[k]] = src[k];
    }
    return out;
}

ad::Var gather(ad::Var x_flat, const ScanPermutation &p) {
    if (x_flat.value().rank() != 2 || x_flat.value().dim(1) != p.size())
        throw ShapeError("gather: flattened map " + shape_str(x_flat.shape()) +
                         " does not match scan length " + std::to_string(p.size()));
    return ad::index_columns(x_flat, std::vector<std::uint32_t>(p.forward().begin(), p.forward().end()));
}

ad::Var scatter(ad::Var seq, const ScanPermutation &p) {
    if (seq.value().rank() != 2 || seq.value().dim(1) != p.size())
        throw ShapeError("scatter: sequence " + shape_str(seq.shape()) +
                         " does not match scan length " + std::to_string(p.size()));
    return ad::index_columns(seq, std::vector<std::uint32_t>(p.inverse().begin(), p.inverse().end()));
}

LocalityStats locality_stats(const ScanPermutation &p) {
    const std::size_t h = p.height(), w = p.width();
    if (h < 2 || w < 2) throw ContractError("locality_stats needs a grid of at least 2x2");
    const auto inv = p.inverse();
    std::vector<std::uint32_t> d;
    d.reserve(h * (w - 1) + (h - 1) * w);
    auto dist = [&](std::size_t a, std::size_t b) {
        return inv[a] > inv[b] ? inv[a] - inv[b] : inv[b] - inv[a];
    };
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j + 1 < w; ++j) d.push_back(dist(i * w + j, i * w + j + 1));
    for (std::size_t i = 0; i + 1 < h; ++i)
        for (std::size_t j = 0; j < w; ++j) d.push_back(dist(i * w + j, (i + 1) * w + j));

    LocalityStats s;
    s.pairs = d.size();
    double total = 0.0;
    for (auto v : d) total += v;
    s.mean = total / static_cast<double>(d.size());
    std::sort(d.begin(), d.end());
    const std::size_t n = d.size();
    s.median = n % 2 ? d[n / 2] : 0.5 * (static_cast<double>(d[n / 2 - 1]) + d[n / 2]);
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    s.p95 = d[std::max<std::size_t>(rank, 1) - 1];
    s.block_depth = block_contiguity_depth(p);
    return s;
}

unsigned block_contiguity_depth(const ScanPermutation &p) {
    const std::size_t h = p.height(), w = p.width();
    const auto inv = p.inverse();
    unsigned best = 0;
    for (unsigned k = 1; (std::size_t{1} << k) <= std::min(h, w); ++k) {
        const std::size_t b = std::size_t{1} << k;
        bool ok = true;
        for (std::size_t bi = 0; ok && bi + b <= h; bi += b)
            for (std::size_t bj = 0; ok && bj + b <= w; bj += b) {
                std::uint32_t lo = 0xffffffffu, hi = 0;
                for (std::size_t i = bi; i < bi + b; ++i)
                    for (std::size_t j = bj; j < bj + b; ++j) {
                        lo = std::min(lo, inv[i * w + j]);
                        hi = std::max(hi, inv[i * w + j]);
                    }
                ok = (hi - lo + 1) == b * b;
            }
        if (!ok) break;
        best = k;
    }
    return best;
}

namespace {

template <typename F>
double median_ms(int repeats, F &&f) {
    std::vector<double> t;
    for (int r = 0; r < std::max(repeats, 1); ++r) {
        const auto start = std::chrono::steady_clock::now();
        f();
        const auto stop = std::chrono::steady_clock::now();
        t.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    std::sort(t.begin(), t.end());
    return t[t.size() / 2];
}

}  // namespace

std::vector<BenchRow> bench_orders(std::span<const std::pair<std::size_t, std::size_t>> sizes,
                                   std::span<const ScanSpec> kinds, int repeats) {
    std::vector<BenchRow> rows;
    for (const auto &[h, w] : sizes) {
        Tensor map({4, h, w});
        for (std::size_t i = 0; i < map.numel(); ++i) map[i] = static_cast<double>(i % 97);
        for (const ScanSpec &spec : kinds) {
            BenchRow row{spec, h, w, 0.0, 0.0};
            std::size_t sink = 0;
            row.build_ms = median_ms(repeats, [&] { sink += build_order(h, w, spec).size(); });
            const ScanPermutation perm = build_order(h, w, spec);
            double acc = 0.0;
            row.gather_ms = median_ms(repeats, [&] { acc += gather(map, perm)[0]; });
            if (sink == 0 || !std::isfinite(acc)) row.build_ms = -1.0;
            rows.push_back(row);
        }
    }
    return rows;
}

void write_bench_csv(std::ostream &os, std::span<const BenchRow> rows) {
    os << "kind,height,width,build_ms,gather_ms\n";
    for (const auto &r : rows)
        os << to_string(r.spec) << ',' << r.height << ',' << r.width << ',' << r.build_ms << ','
           << r.gather_ms << '\n';
}

}  // namespace modem::scan
