// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/core/optim.hpp"

#include <cmath>

namespace latflow {

template <typename T>
void AdamW<T>::step(ParamSet<T>& params) {
    const auto& cfg = state_.config;
    // Validate everything first so a bad gradient leaves all parameters untouched.
    for (auto& p : params.entries()) {
        if (!p.trainable || !p.value.has_grad()) continue;
        for (T g : p.value.grad()) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw OptimizerError("non-finite gradient in parameter " + p.name);
            }
        }
    }
    ++state_.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state_.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state_.step));
    for (auto& p : params.entries()) {
        if (!p.trainable) continue;
        auto data = p.value.mutable_data();
        auto& m = state_.first_moment[p.name];
        auto& v = state_.second_moment[p.name];
        if (m.size() != data.size()) {
            m.assign(data.size(), 0.0f);
            v.assign(data.size(), 0.0f);
        }
        const bool has_grad = p.value.has_grad();
        auto grad = p.value.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            double x = static_cast<double>(data[i]);
            x -= cfg.lr * cfg.weight_decay * x;
            x -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            data[i] = static_cast<T>(x);
        }
    }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace latflow
