// SPDX-License-Identifier: Apache-2.0
#pragma once

// 8-bit binary PPM (P6) and PGM (P5) images as [C x H x W] tensors in [0, 1].

#include <filesystem>
#include <stdexcept>
#include <string>

#include "modem/tensor.hpp"

namespace modem::image {

class ImageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Values are clamped to [0, 1] and rounded to the nearest of 256 levels.
std::string encode_ppm(const Tensor &rgb);
std::string encode_pgm(const Tensor &gray);  // [H x W] or [1 x H x W]

/// Accepts P6 (-> [3 x H x W]) and P5 (-> [1 x H x W]) with maxval 255 and # comments.
Tensor decode_pnm(const std::string &bytes);

Tensor read_image(const std::filesystem::path &path);
void write_ppm(const std::filesystem::path &path, const Tensor &rgb);
void write_pgm(const std::filesystem::path &path, const Tensor &gray);

/// Round-trips a tensor through 8-bit quantization.
Tensor quantize(const Tensor &x);

/// Clamp every element to [0, 1].
Tensor clamp01(const Tensor &x);

}  // namespace modem::image
