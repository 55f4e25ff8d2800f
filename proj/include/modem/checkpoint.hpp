// SPDX-License-Identifier: Apache-2.0
#pragma once

// Named-tensor checkpoints.
//
// Little-endian layout:
//   "MODM"  u32 version  u32 tensor_count  u8 stage
//   per tensor: u16 name_len, name bytes (UTF-8), u8 rank, u64 dims[rank], f64 data[numel]

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "modem/layers.hpp"

namespace modem {

/// Malformed, truncated or mismatched checkpoint.
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint8_t stage = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor *find(const std::string &name) const;
};

std::string encode_checkpoint(const Checkpoint &ckpt);
Checkpoint decode_checkpoint(const std::string &bytes);

Checkpoint snapshot(const nn::ParamList &params, std::uint8_t stage);
/// Copies values into params. Throws FormatError naming every missing and extra
/// tensor, or the first shape mismatch.
void restore(const Checkpoint &ckpt, const nn::ParamList &params);

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::filesystem::path &path);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path &path, const std::string &bytes);
std::string read_file(const std::filesystem::path &path);

}  // namespace modem
