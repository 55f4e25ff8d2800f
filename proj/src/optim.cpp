// SPDX-License-Identifier: Apache-2.0
#include "modem/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace modem::optim {

AdamW::AdamW(nn::ParamList params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const Parameter *p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
    count_.assign(params_.size(), 0);
}

void AdamW::step(const GradMap &grads, double lr) {
    ++steps_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter &p = *params_[k];
        if (!p.trainable) continue;
        auto it = grads.find(&p);
        if (it == grads.end()) continue;
        const Tensor &g = it->second;
        if (!g.same_shape(p.value)) throw ShapeError("gradient shape mismatch for " + p.name);
        const std::size_t t = ++count_[k];
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
        const double decay = 1.0 - lr * cfg_.weight_decay;
        Tensor &m = m_[k], &v = v_[k];
        for (std::size_t i = 0; i < g.numel(); ++i) {
            p.value[i] *= decay;
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }
}

AdamW::Moments AdamW::state() const {
    Moments s;
    s.steps = steps_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        s.m.emplace_back(params_[k]->name, m_[k]);
        s.v.emplace_back(params_[k]->name, v_[k]);
        // The per-parameter count rides along as a scalar so resumption is exact.
        s.m.emplace_back(params_[k]->name + "#count", Tensor::scalar(static_cast<double>(count_[k])));
    }
    return s;
}

void AdamW::load_state(const Moments &s) {
    auto lookup = [](const std::vector<std::pair<std::string, Tensor>> &list, const std::string &name) -> const Tensor & {
        for (const auto &[n, t] : list)
            if (n == name) return t;
        throw std::invalid_argument("optimizer state lacks " + name);
    };
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const std::string &name = params_[k]->name;
        const Tensor &m = lookup(s.m, name), &v = lookup(s.v, name);
        if (!m.same_shape(m_[k]) || !v.same_shape(v_[k]))
            throw std::invalid_argument("optimizer state shape mismatch for " + name);
        m_[k] = m;
        v_[k] = v;
        count_[k] = static_cast<std::size_t>(lookup(s.m, name + "#count")[0]);
    }
    steps_ = s.steps;
}

void CosineRestartSchedule::validate() const {
    if (periods.empty()) throw std::invalid_argument("schedule needs at least one period");
    if (restart_weights.size() != periods.size() || eta_mins.size() != periods.size())
        throw std::invalid_argument("schedule periods, restart_weights and eta_mins must have equal lengths");
    for (std::size_t p : periods)
        if (p == 0) throw std::invalid_argument("schedule periods must be positive");
}

double CosineRestartSchedule::at(std::size_t step) const {
    validate();
    std::size_t start = 0;
    for (std::size_t i = 0; i < periods.size(); ++i) {
        if (step < start + periods[i]) {
            const double frac = static_cast<double>(step - start) / static_cast<double>(periods[i]);
            const double top = peak * restart_weights[i];
            return eta_mins[i] + (top - eta_mins[i]) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
        }
        start += periods[i];
    }
    return eta_mins.back();
}

}  // namespace modem::optim
