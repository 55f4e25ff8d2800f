// SPDX-License-Identifier: Apache-2.0
#pragma once

// Two-stage training: a ground-truth-aware estimator first, then distillation into
// a degraded-only estimator against the frozen first-stage one.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "modem/checkpoint.hpp"
#include "modem/model.hpp"
#include "modem/optim.hpp"
#include "modem/synth.hpp"

namespace modem::train {

struct TrainConfig {
    int stage = 1;
    std::size_t iterations = 600;
    std::size_t batch = 2;
    std::size_t patch = 64;
    /// Train on half-size patches for the first half of the run.
    bool progressive_patch = false;
    optim::CosineRestartSchedule schedule;
    optim::AdamWConfig adam;
    std::uint64_t seed = 1;
    bool freeze_backbone = false;  // stage 2 only
    bool use_kl = true;            // stage 2 only; false gives the no-distillation ablation
    /// Training samples whose full-image loss is measured before and after the run.
    std::size_t probe = 8;
};

struct LossReport {
    double l1 = 0, l_cor = 0, l_kl = 0, total = 0;
    bool degenerate = false;  // some correlation term hit zero variance
};

struct LossRow {
    std::size_t step = 0;
    LossReport loss;
    double lr = 0;
};

/// Column order: step,l1,l_cor,l_kl,total,lr
std::string csv_header();
std::string csv_row(const LossRow &row);

class TrainingDiverged : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Records the stage's objective for one image pair and returns its scalar node.
ad::Var objective(ad::Tape &tape, const nn::Modem &model, int stage, const Tensor &lq, const Tensor &gt,
                  bool use_kl, LossReport &report);

class Trainer {
  public:
    /// Stage 2 requires a student and freezes the teacher (and the backbone on request).
    Trainer(nn::Modem &model, TrainConfig cfg, const synth::Dataset &data);

    LossRow step();
    std::size_t next_step() const noexcept { return step_; }

    /// Mean objective over the first `probe` training images at full size, without updating.
    double probe_loss() const;

    /// Model weights at `path`, optimizer moments and step at `path` + ".optim".
    void save(const std::filesystem::path &path) const;
    void resume(const std::filesystem::path &path);

    const TrainConfig &config() const noexcept { return cfg_; }

  private:
    nn::Modem &model_;
    TrainConfig cfg_;
    const synth::Dataset &data_;
    optim::AdamW opt_;
    std::size_t step_ = 0;
};

struct EvalReport {
    double psnr_degraded = 0, psnr_restored = 0;
    double ssim_degraded = 0, ssim_restored = 0;
    std::size_t count = 0;
};

/// Restored output clamped to [0, 1]. With `gt` the first-stage estimator sees
/// concat(lq, gt); otherwise the degraded-only estimator is used.
Tensor restore_image(const nn::Modem &model, const Tensor &lq, const Tensor *gt = nullptr);

/// Mean per-image PSNR and SSIM of the degraded inputs and of the restorations.
EvalReport evaluate(const nn::Modem &model, const std::vector<synth::SynthSample> &samples, bool with_gt);

struct RunResult {
    std::vector<LossRow> curve;
    double probe_start = 0, probe_end = 0;
    EvalReport eval;
};

/// Trains for cfg.iterations steps, then evaluates on the held-out split
/// (stage 1 with the ground-truth prior, stage 2 with the degraded-only one).
RunResult run(nn::Modem &model, const TrainConfig &cfg, const synth::Dataset &data,
              const std::function<void(const LossRow &)> &on_row = {});

/// Parameters persisted at the end of a stage.
nn::ParamList stage_parameters(nn::Modem &model, int stage);

/// Loads a stage-1 checkpoint into backbone and teacher, then initializes the student.
void prepare_stage2(nn::Modem &model, const Checkpoint &stage1);

/// Builds a model for a checkpoint of either stage.
std::unique_ptr<nn::Modem> load_model(const Checkpoint &ckpt, const nn::ModelConfig &cfg);

}  // namespace modem::train
