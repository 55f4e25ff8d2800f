// SPDX-License-Identifier: Apache-2.0
#include "modem/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace modem {

namespace {

double evaluate(const ScalarGraph &graph, const std::vector<Tensor> &inputs) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor &t : inputs) vars.push_back(tape.constant(t));
    ad::Var loss = graph(tape, vars);
    return loss.value()[0];
}

}  // namespace

GradCheckResult check_gradients(const ScalarGraph &graph, const std::vector<Tensor> &inputs,
                                std::span<Parameter *const> params,
                                const GradCheckOptions &options) {
    ad::Tape tape;
    if (!options.fault_op.empty()) tape.inject_fault(options.fault_op, options.fault_factor);
    std::vector<ad::Var> vars;
    for (const Tensor &t : inputs) vars.push_back(tape.leaf(t));
    ad::Var loss = graph(tape, vars);
    tape.backward(loss);

    GradCheckResult result;
    const double h = options.step;
    auto consider = [&](double analytic, double numeric, const std::string &where) {
        const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
        ++result.checked;
        if (result.worst.empty() || rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst = where;
        }
    };

    std::vector<Tensor> work = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor analytic = tape.grad(vars[i]);
        for (std::size_t j = 0; j < work[i].numel(); ++j) {
            const double orig = work[i][j];
            work[i][j] = orig + h;
            const double up = evaluate(graph, work);
            work[i][j] = orig - h;
            const double down = evaluate(graph, work);
            work[i][j] = orig;
            consider(analytic[j], (up - down) / (2.0 * h),
                     "input " + std::to_string(i) + "[" + std::to_string(j) + "]");
        }
    }

    const auto grads = tape.param_grads();
    for (Parameter *p : params) {
        if (!p->trainable) continue;
        auto it = std::find_if(grads.begin(), grads.end(),
                               [p](const auto &entry) { return entry.first == p; });
        const Tensor analytic = it != grads.end() ? it->second : Tensor(p->value.shape());
        for (std::size_t j = 0; j < p->value.numel(); ++j) {
            const double orig = p->value[j];
            p->value[j] = orig + h;
            const double up = evaluate(graph, inputs);
            p->value[j] = orig - h;
            const double down = evaluate(graph, inputs);
            p->value[j] = orig;
            consider(analytic[j], (up - down) / (2.0 * h), p->name + "[" + std::to_string(j) + "]");
        }
    }
    return result;
}

}  // namespace modem
