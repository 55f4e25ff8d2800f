// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <unordered_map>
#include <utility>
#include <vector>

#include "modem/layers.hpp"

namespace modem::optim {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

using GradMap = std::unordered_map<const Parameter *, Tensor>;

/// Adam with decoupled weight decay:
///   p <- p (1 - lr wd);  m, v <- moment updates;  p <- p - lr m_hat / (sqrt(v_hat) + eps)
/// Parameters that are frozen or absent from the gradient map are left alone.
class AdamW {
  public:
    AdamW(nn::ParamList params, AdamWConfig cfg);

    void step(const GradMap &grads, double lr);

    std::size_t steps() const noexcept { return steps_; }
    const AdamWConfig &config() const noexcept { return cfg_; }

    /// Moments as (param name, m, v), for checkpointing.
    struct Moments {
        std::vector<std::pair<std::string, Tensor>> m, v;
        std::size_t steps = 0;
    };
    Moments state() const;
    void load_state(const Moments &s);

  private:
    nn::ParamList params_;
    AdamWConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::vector<std::size_t> count_;  // per-parameter update count for bias correction
    std::size_t steps_ = 0;
};

/// Cosine annealing with restarts. Within period i starting at s_i:
///   lr(t) = eta_i + (peak w_i - eta_i) (1 + cos(pi (t - s_i) / P_i)) / 2
/// Past the last period the final minimum is held.
struct CosineRestartSchedule {
    double peak = 3e-4;
    std::vector<std::size_t> periods{1000};
    std::vector<double> restart_weights{1.0};
    std::vector<double> eta_mins{1e-6};

    double at(std::size_t step) const;
    /// Throws std::invalid_argument on empty or mismatched lists or a zero period.
    void validate() const;
};

}  // namespace modem::optim
