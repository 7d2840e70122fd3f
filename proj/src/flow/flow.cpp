// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/flow/flow.hpp"

#include <cmath>

namespace latflow {

void FlowPathConfig::validate() const {
    if (!(sigma_min >= 0 && sigma_min < 1)) throw ConfigError("flow sigma_min must lie in [0, 1)");
}

void SolverConfig::validate() const {
    if (steps < 1) throw ConfigError("solver steps must be >= 1");
}

std::string to_string(OdeScheme s) { return s == OdeScheme::kEuler ? "euler" : "midpoint"; }

OdeScheme ode_scheme_from_string(const std::string& s) {
    if (s == "euler") return OdeScheme::kEuler;
    if (s == "midpoint") return OdeScheme::kMidpoint;
    throw ConfigError("unknown ODE scheme '" + s + "' (expected euler or midpoint)");
}

template <typename T>
VelocityFn<T> velocity_of(const UditT<T>& model, const RoutingContext<T>* ctx) {
    return [&model, ctx](const TensorT<T>& input, T t) { return model.forward(input, t, ctx); };
}

template <typename T>
PathSample<T> path_at(const TensorT<T>& x0, const TensorT<T>& x1, T t, const FlowPathConfig& cfg) {
    if (!(t >= T(0) && t <= T(1))) throw ContractError("path time must lie in [0, 1]");
    if (x0.shape() != x1.shape()) throw ContractError("path endpoints differ in shape");
    const T s = static_cast<T>(1.0 - cfg.sigma_min);
    return {x0, add(scale(x0, T(1) - s * t), scale(x1, t)), sub(x1, scale(x0, s))};
}

template <typename T>
PathSample<T> sample_path(const TensorT<T>& x1, T t, Rng& rng, const FlowPathConfig& cfg) {
    return path_at(seeded_normal<T>(rng, x1.shape()), x1, t, cfg);
}

template <typename T>
TensorT<T> cfm_loss(const VelocityFn<T>& v, const std::vector<TensorT<T>>& z_clean,
                    const std::vector<TensorT<T>>& z_dist, Rng& rng, const FlowPathConfig& cfg) {
    if (z_clean.size() != z_dist.size() || z_clean.empty()) {
        throw ContractError("cfm_loss needs equally many (nonzero) clean and distorted latents");
    }
    TensorT<T> total;
    for (std::size_t i = 0; i < z_clean.size(); ++i) {
        if (z_clean[i].shape() != z_dist[i].shape()) {
            throw ContractError("clean latent " + shape_str(z_clean[i].shape()) + " vs distorted " +
                                shape_str(z_dist[i].shape()));
        }
        const T t = static_cast<T>(rng.uniform());
        auto p = sample_path(z_clean[i], t, rng, cfg);
        auto l = mse(v(concat_cols<T>({p.xt, z_dist[i]}), t), p.target);
        total = total.defined() ? add(total, l) : l;
    }
    return scale(total, T(1) / static_cast<T>(z_clean.size()));
}

namespace {

template <typename T>
void check_finite(const TensorT<T>& x, std::int64_t step) {
    for (T e : x.data()) {
        if (!std::isfinite(double(e))) throw SolverError("non-finite ODE state after step " + std::to_string(step));
    }
}

}  // namespace

template <typename T>
TensorT<T> ode_integrate(const VelocityFn<T>& v, TensorT<T> x, const TensorT<T>& z_dist, const SolverConfig& solver) {
    solver.validate();
    if (x.shape() != z_dist.shape()) throw ContractError("ODE state and conditioning differ in shape");
    NoGradGuard guard;
    const double h = 1.0 / double(solver.steps);
    auto field = [&](const TensorT<T>& state, double t) {
        return v(concat_cols<T>({state, z_dist}), static_cast<T>(std::min(t, 1.0)));
    };
    for (std::int64_t k = 0; k < solver.steps; ++k) {
        const double t = double(k) * h;
        if (solver.scheme == OdeScheme::kEuler) {
            x = add(x, scale(field(x, t), static_cast<T>(h)));
        } else {
            auto mid = add(x, scale(field(x, t), static_cast<T>(h / 2)));
            x = add(x, scale(field(mid, t + h / 2), static_cast<T>(h)));
        }
        check_finite(x, k);
    }
    return x;
}

template <typename T>
TensorT<T> ode_solve(const VelocityFn<T>& v, const TensorT<T>& z_dist, Rng& rng, const SolverConfig& solver) {
    return ode_integrate(v, seeded_normal<T>(rng, z_dist.shape()), z_dist, solver);
}

Tensor enhance(const Tensor& x, const Compressor& compressor, const Udit& model, const SolverConfig& solver, Rng& rng,
               const RoutingContext<float>* ctx) {
    if (compressor.config().latent_dim != model.config().latent_dim) {
        throw ContractError("compressor latent_dim " + std::to_string(compressor.config().latent_dim) +
                            " does not match the flow model's " + std::to_string(model.config().latent_dim));
    }
    if (x.rows() != 1 || x.cols() < 1) throw ContractError("enhance expects a [1, N] waveform");
    NoGradGuard guard;
    auto zd = compressor.encode(x).mu;
    auto z = ode_solve(velocity_of(model, ctx), zd, rng, solver);
    return compressor.decode(z, x.cols());
}

#define LATFLOW_INSTANTIATE_FLOW(T)                                                                         \
    template VelocityFn<T> velocity_of(const UditT<T>&, const RoutingContext<T>*);                          \
    template PathSample<T> path_at(const TensorT<T>&, const TensorT<T>&, T, const FlowPathConfig&);         \
    template PathSample<T> sample_path(const TensorT<T>&, T, Rng&, const FlowPathConfig&);                  \
    template TensorT<T> cfm_loss(const VelocityFn<T>&, const std::vector<TensorT<T>>&,                      \
                                 const std::vector<TensorT<T>>&, Rng&, const FlowPathConfig&);              \
    template TensorT<T> ode_integrate(const VelocityFn<T>&, TensorT<T>, const TensorT<T>&, const SolverConfig&); \
    template TensorT<T> ode_solve(const VelocityFn<T>&, const TensorT<T>&, Rng&, const SolverConfig&);

LATFLOW_INSTANTIATE_FLOW(float)
LATFLOW_INSTANTIATE_FLOW(double)

}  // namespace latflow
