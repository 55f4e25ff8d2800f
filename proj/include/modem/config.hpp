// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON run configuration. Every section is optional and overrides a preset;
// unknown keys and ill-typed values are rejected before any work starts.
//
// {
//   "preset": "toy" | "full",
//   "model": {"channels", "depths", "refine", "expand", "state", "dt_rank", "scan",
//             "bidirectional", "ddem": {"channels", "groups", "group_depth", "stem_stride",
//             "c_d", "c_d1", "c_d2"}},
//   "train": {"stage", "iterations", "batch", "patch", "progressive_patch", "lr",
//             "periods", "restart_weights", "eta_mins", "betas", "eps", "weight_decay",
//             "seed", "freeze_backbone", "use_kl", "probe"},
//   "data":  {"train", "held_out", "size", "kinds", "severity_min", "severity_max", "seed"},
//   "out_dir": "path"
// }

#include <filesystem>
#include <stdexcept>
#include <string>

#include "modem/model.hpp"
#include "modem/synth.hpp"
#include "modem/train.hpp"

namespace modem::config {

class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct RunConfig {
    std::string preset = "toy";
    nn::ModelConfig model;
    train::TrainConfig train;
    synth::SynthSpec data;
    std::string out_dir = "runs/toy";
};

/// Small network and schedule sized for a single CPU core.
RunConfig toy_preset();
/// Published network dimensions; training settings stay desk-scale.
RunConfig full_preset();
RunConfig preset(const std::string &name);

RunConfig parse(const std::string &json_text);
RunConfig load(const std::filesystem::path &path);
std::string dump(const RunConfig &cfg);

/// Model section only, stored next to checkpoints so they can be rebuilt.
std::string dump_model(const nn::ModelConfig &cfg);
nn::ModelConfig parse_model(const std::string &json_text);

/// MODEM_SEED, when set, replaces both the training and the data seed.
void apply_seed_override(RunConfig &cfg);

}  // namespace modem::config
