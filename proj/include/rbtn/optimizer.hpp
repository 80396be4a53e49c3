#pragma once

#include "rbtn/networks.hpp"

#include <cmath>
#include <cstdint>

namespace rbtn {

struct AdamConfig {
    double alpha = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
    ParamSet<T> m;
    ParamSet<T> v;
    std::int64_t step = 0;

    AdamState() = default;
    explicit AdamState(const ParamSet<T>& like) : m(like.zeros_like()), v(like.zeros_like()) {}

    bool operator==(const AdamState&) const = default;
};

// One bias-corrected Adam update of params from grads.
template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, const AdamConfig& cfg) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const T lr = static_cast<T>(cfg.alpha * std::sqrt(1.0 - std::pow(cfg.beta2, t)) / (1.0 - std::pow(cfg.beta1, t)));
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const T eps = static_cast<T>(cfg.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto m = state.m.values[i].array();
        auto v = state.v.values[i].array();
        const auto g = grads.values[i].array();
        m = b1 * m + (T(1) - b1) * g;
        v = b2 * v + (T(1) - b2) * g.square();
        params.values[i].array() -= lr * m / (v.sqrt() + eps);
    }
}

// Plain gradient descent, used by tests that need a strictly monotone step.
template <typename T>
void sgd_step(ParamSet<T>& params, const ParamSet<T>& grads, double lr) {
    for (std::size_t i = 0; i < params.size(); ++i) params.values[i] -= static_cast<T>(lr) * grads.values[i];
}

} // namespace rbtn
