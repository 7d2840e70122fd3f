// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latflow/core/params.hpp"

namespace latflow {

struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct OptimizerState {
    AdamWConfig config;
    std::int64_t step = 0;
    // Moments keyed by parameter name, stored in single precision so that a
    // checkpointed state resumes bit-exactly.
    std::map<std::string, std::vector<float>> first_moment;
    std::map<std::string, std::vector<float>> second_moment;
};

// AdamW with decoupled weight decay (Loshchilov & Hutter):
//   p ← p − lr·wd·p − lr·m̂/(√v̂ + eps)
// Only parameters flagged trainable are touched; frozen ones are never
// written, even when they carry a gradient.
template <typename T>
class AdamW {
   public:
    explicit AdamW(AdamWConfig config = {}) { state_.config = config; }

    // Throws OptimizerError naming the parameter when a gradient is not finite.
    void step(ParamSet<T>& params);

    const OptimizerState& state() const { return state_; }
    OptimizerState& state() { return state_; }
    void set_lr(double lr) { state_.config.lr = lr; }

   private:
    OptimizerState state_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace latflow
