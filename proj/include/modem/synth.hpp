// SPDX-License-Identifier: Apache-2.0
#pragma once

// Procedural clean images and toy degradations: rain-like streaks, haze, bright flecks.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "modem/tensor.hpp"

namespace modem::synth {

enum class Kind { streaks, haze, flecks, mixed };

Kind parse_kind(std::string_view name);
std::string to_string(Kind kind);

struct SynthSample {
    Tensor gt;  // [3 x H x W] in [0, 1]
    Tensor lq;  // same shape, in [0, 1]
    Kind kind = Kind::streaks;
    double severity = 0.0;
    std::uint64_t seed = 0;
};

/// Smooth colour gradient with soft-edged shapes and a faint texture.
Tensor clean_image(std::size_t height, std::size_t width, std::uint64_t seed);

/// Oriented additive bright line segments sharing one dominant direction.
Tensor add_streaks(const Tensor &img, double severity, std::uint64_t seed);
/// I t + a (1 - t) per pixel; t is [H x W] and broadcast over channels.
Tensor apply_haze(const Tensor &img, const Tensor &transmission, double airlight);
/// Smooth transmission field in [1 - 0.8 severity, 1 - 0.3 severity] and its airlight.
std::pair<Tensor, double> haze_field(std::size_t height, std::size_t width, double severity, std::uint64_t seed);
/// Random bright discs blended towards white.
Tensor add_flecks(const Tensor &img, double severity, std::uint64_t seed);

/// Severity in [0, 1]; severity 0 returns the clean image unchanged. Mixed is haze over streaks.
SynthSample synth_degrade(const Tensor &gt, Kind kind, double severity, std::uint64_t seed);

struct SynthSpec {
    std::size_t train = 64;
    std::size_t held_out = 16;
    std::size_t size = 64;  // square images
    std::vector<Kind> kinds{Kind::mixed};
    double severity_min = 0.4;
    double severity_max = 0.9;
    std::uint64_t seed = 1;
};

/// Per-index seeds make every sample independent of generation order.
std::uint64_t sample_seed(std::uint64_t base, std::size_t index);

struct Dataset {
    std::vector<SynthSample> train;
    std::vector<SynthSample> held_out;
};

/// Held-out samples use indices after the training ones, so the two never share a seed.
Dataset make_dataset(const SynthSpec &spec);

/// JSON listing every sample's split, index, seed, kind and severity.
std::string manifest_json(const SynthSpec &spec, const Dataset &data);

}  // namespace modem::synth
