// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Conditional flow matching on the optimal-transport path and fixed-step ODE
// sampling. Latents are [L, D]; the velocity network sees [x ; z_d] as
// [L, 2D] and returns [L, D].

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "latflow/core/ops.hpp"
#include "latflow/core/rng.hpp"
#include "latflow/models/compressor.hpp"
#include "latflow/models/udit.hpp"

namespace latflow {

struct FlowPathConfig {
    double sigma_min = 1e-4;
    void validate() const;
};

enum class OdeScheme { kEuler, kMidpoint };

struct SolverConfig {
    std::int64_t steps = 50;
    OdeScheme scheme = OdeScheme::kEuler;
    void validate() const;
};

std::string to_string(OdeScheme s);
OdeScheme ode_scheme_from_string(const std::string& s);

template <typename T>
using VelocityFn = std::function<TensorT<T>(const TensorT<T>& input, T t)>;

// Wraps a uDiT (and optional routing context) as a velocity field.
template <typename T>
VelocityFn<T> velocity_of(const UditT<T>& model, const RoutingContext<T>* ctx = nullptr);

template <typename T>
struct PathSample {
    TensorT<T> x0, xt, target;
};

// x_t = (1 − (1 − σ)·t)·x0 + t·x1, target = x1 − (1 − σ)·x0.
template <typename T>
PathSample<T> path_at(const TensorT<T>& x0, const TensorT<T>& x1, T t, const FlowPathConfig& cfg);
// Same with x0 ~ N(0, I) drawn from rng.
template <typename T>
PathSample<T> sample_path(const TensorT<T>& x1, T t, Rng& rng, const FlowPathConfig& cfg);

// Mean over examples of ‖v([x_t ; z_d], t) − target‖² / numel, with t ~ U[0, 1]
// and fresh x0 drawn per example.
template <typename T>
TensorT<T> cfm_loss(const VelocityFn<T>& v, const std::vector<TensorT<T>>& z_clean,
                    const std::vector<TensorT<T>>& z_dist, Rng& rng, const FlowPathConfig& cfg);

// Integrates dx/dt = v([x ; z_d], t) from t = 0 to 1 with uniform steps,
// starting at x0. No graph is recorded. A non-finite state → SolverError.
template <typename T>
TensorT<T> ode_integrate(const VelocityFn<T>& v, TensorT<T> x0, const TensorT<T>& z_dist, const SolverConfig& solver);
// Same from x0 ~ N(0, I) drawn from rng.
template <typename T>
TensorT<T> ode_solve(const VelocityFn<T>& v, const TensorT<T>& z_dist, Rng& rng, const SolverConfig& solver);

// Encoder mean of the distorted clip → ODE → decoder, trimmed to the input
// length. x: [1, N].
Tensor enhance(const Tensor& x, const Compressor& compressor, const Udit& model, const SolverConfig& solver, Rng& rng,
               const RoutingContext<float>* ctx = nullptr);

}  // namespace latflow
