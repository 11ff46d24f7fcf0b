#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "unitedqa/tensor.hpp"

namespace unitedqa {

/// Adam hyperparameters and per-parameter moment accumulators.
struct OptimizerState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    static OptimizerState for_params(const std::vector<Tensor>& params, double lr = 1e-3) {
        OptimizerState s;
        s.learning_rate = lr;
        s.first_moment.reserve(params.size());
        s.second_moment.reserve(params.size());
        for (const auto& p : params) {
            s.first_moment.emplace_back(p.size(), 0.0);
            s.second_moment.emplace_back(p.size(), 0.0);
        }
        return s;
    }
};

/// One bias-corrected Adam update over a parameter list. `grads[i]` must
/// match `params[i]` in size; the step counter advances by exactly one.
inline void adam_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
                      OptimizerState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
    if (state.learning_rate < 0.0) throw std::invalid_argument("adam_step: negative learning rate");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& v = params[pi].values_mut();
        const auto& g = grads[pi];
        if (g.size() != v.size()) throw std::invalid_argument("adam_step: gradient shape mismatch");
        auto& m = state.first_moment[pi];
        auto& s = state.second_moment[pi];
        for (std::size_t i = 0; i < v.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            s[i] = state.beta2 * s[i] + (1.0 - state.beta2) * g[i] * g[i];
            if (state.learning_rate != 0.0) {
                const double mhat = m[i] / bc1;
                const double shat = s[i] / bc2;
                v[i] -= state.learning_rate * mhat / (std::sqrt(shat) + state.epsilon);
            }
        }
    }
}

/// Linear warmup to peak_lr over warmup_ratio * total_steps, then linear
/// decay to zero at total_steps.
inline double lr_schedule(std::size_t step, std::size_t total_steps, double warmup_ratio,
                          double peak_lr) {
    if (total_steps == 0) throw std::invalid_argument("lr_schedule: total_steps must be positive");
    if (step > total_steps) throw std::invalid_argument("lr_schedule: step past total_steps");
    if (warmup_ratio < 0.0 || warmup_ratio > 1.0)
        throw std::invalid_argument("lr_schedule: warmup_ratio outside [0,1]");
    const double warmup_steps = warmup_ratio * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    if (warmup_steps > 0.0 && s < warmup_steps) return peak_lr * s / warmup_steps;
    if (warmup_steps >= static_cast<double>(total_steps)) return peak_lr;
    return peak_lr * (static_cast<double>(total_steps) - s) /
           (static_cast<double>(total_steps) - warmup_steps);
}

}  // namespace unitedqa
