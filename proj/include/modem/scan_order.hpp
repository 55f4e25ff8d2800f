// SPDX-License-Identifier: Apache-2.0
#pragma once

// 1-D traversal orders over 2-D grids.
//
// Coordinates are (i, j) = (row, column). A ScanPermutation maps sequence
// position k to the flat raster index i * W + j of the pixel visited at step k.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "modem/autodiff.hpp"
#include "modem/tensor.hpp"

namespace modem::scan {

enum class ScanKind { raster, continuous, local, morton, hilbert };

/// A scan kind plus its window size (only meaningful for `local`).
struct ScanSpec {
    ScanKind kind = ScanKind::morton;
    std::size_t window = 8;

    friend bool operator==(const ScanSpec &, const ScanSpec &) = default;
};

/// "raster", "continuous", "local" (8x8 windows), "local<N>", "morton", "hilbert".
ScanSpec parse_scan(std::string_view name);
std::string to_string(const ScanSpec &spec);

/// Bit t of i goes to bit 2t of the code, bit t of j to bit 2t+1.
std::uint64_t morton_encode(std::uint32_t i, std::uint32_t j) noexcept;
std::pair<std::uint32_t, std::uint32_t> morton_decode(std::uint64_t z) noexcept;

/// Position of (i, j) along the Hilbert curve filling a 2^order square.
std::uint64_t hilbert_encode(std::uint32_t i, std::uint32_t j, unsigned order);
std::pair<std::uint32_t, std::uint32_t> hilbert_decode(std::uint64_t d, unsigned order);
/// log2(side); throws ContractError if side is not a power of two.
unsigned hilbert_order_for_side(std::uint64_t side);

class ScanPermutation {
  public:
    ScanPermutation() = default;
    /// Validates that `forward` is a bijection on [0, H*W).
    ScanPermutation(std::size_t height, std::size_t width, std::vector<std::uint32_t> forward);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return forward_.size(); }

    /// forward()[k] = raster index visited at step k.
    std::span<const std::uint32_t> forward() const noexcept { return forward_; }
    /// inverse()[p] = step at which raster index p is visited.
    std::span<const std::uint32_t> inverse() const noexcept { return inverse_; }

    /// The same path traversed end to start.
    ScanPermutation reversed() const;

  private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<std::uint32_t> forward_;
    std::vector<std::uint32_t> inverse_;
};

/// Morton and Hilbert orders on non-power-of-two grids pad virtually to the
/// next power-of-two square and skip codes that fall outside the grid.
ScanPermutation build_order(std::size_t height, std::size_t width, const ScanSpec &spec);

/// [C x H x W] -> [C x L], column k holding pixel forward()[k].
Tensor gather(const Tensor &x, const ScanPermutation &p);
/// [C x L] -> [C x H x W]; exact inverse of gather.
Tensor scatter(const Tensor &seq, const ScanPermutation &p);

/// Differentiable versions on channel-major maps already flattened to [C x H*W].
ad::Var gather(ad::Var x_flat, const ScanPermutation &p);
ad::Var scatter(ad::Var seq, const ScanPermutation &p);

struct LocalityStats {
    double mean = 0.0;
    double median = 0.0;
    double p95 = 0.0;
    unsigned block_depth = 0;
    std::size_t pairs = 0;
};

/// Sequence distance |k(u) - k(v)| over all horizontally and vertically
/// adjacent pixel pairs. Median of an even count averages the middle two;
/// p95 uses the nearest-rank rule.
LocalityStats locality_stats(const ScanPermutation &p);

/// Largest k such that, for every k' <= k, each aligned 2^k' x 2^k' block lying fully
/// inside the grid occupies one contiguous run of sequence positions.
unsigned block_contiguity_depth(const ScanPermutation &p);

struct BenchRow {
    ScanSpec spec;
    std::size_t height = 0;
    std::size_t width = 0;
    double build_ms = 0.0;   // median over repeats
    double gather_ms = 0.0;  // median over repeats, 4-channel map
};

std::vector<BenchRow> bench_orders(std::span<const std::pair<std::size_t, std::size_t>> sizes,
                                   std::span<const ScanSpec> kinds, int repeats = 5);

/// Columns: kind,height,width,build_ms,gather_ms
void write_bench_csv(std::ostream &os, std::span<const BenchRow> rows);

}  // namespace modem::scan
