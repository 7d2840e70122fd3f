// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Low-rank experts and their noisy Top-k router.
//
// Shapes follow the host linear map W0 ∈ R^{d×ℓ}: A is [r, ℓ], B is [d, r],
// and the update is ΔW = (α/r)·B·A. Inputs are row batches [n, ℓ]; routing
// is per row (one latent frame = one token).

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "latflow/core/ops.hpp"
#include "latflow/core/params.hpp"

namespace latflow {

struct AdapterConfig {
    std::int64_t rank = 8;
    double alpha = 8.0;  // α; the default equals the rank
    std::int64_t num_experts = 5;
    std::int64_t top_k = 3;
    bool use_router = true;     // false: a single plain LoRA expert
    bool renormalize = false;   // rescale Top-k weights to sum to 1
    double load_balance_weight = 0.0;

    double scaling() const { return alpha / double(rank); }
    void validate() const;
};

template <typename T>
struct LoraExpertT {
    TensorT<T> a;  // [r, ℓ]
    TensorT<T> b;  // [d, r]
};

// x·(scale·B·A)ᵀ for row-batched x.
template <typename T>
TensorT<T> lora_delta(const TensorT<T>& x, const LoraExpertT<T>& e, T scale);

// h = x·W0ᵀ + (α/r)·x·(B·A)ᵀ; W0 is never modified.
template <typename T>
TensorT<T> lora_forward(const TensorT<T>& w0, const LoraExpertT<T>& e, const TensorT<T>& x, T alpha);

// W0 + (α/r)·B·A.
template <typename T>
TensorT<T> lora_merge(const TensorT<T>& w0, const LoraExpertT<T>& e, T alpha);

// Gate statistics of one routed call, kept for the load-balance objective.
template <typename T>
struct GateRecord {
    TensorT<T> weights;                // [n, N] softmax output (differentiable)
    std::vector<std::int64_t> counts;  // selections per expert
    std::int64_t tokens = 0;
    std::int64_t k = 1;
};

template <typename T>
struct RoutingContext {
    bool training = false;
    Rng* rng = nullptr;                      // gating noise; required when training
    std::vector<GateRecord<T>>* records = nullptr;
};

template <typename T>
struct RouterT {
    std::vector<TensorT<T>> rows;  // one [1, ℓ] gating row per expert
    TensorT<T> noise_mu;           // [1, 1]
    TensorT<T> noise_log_sigma;    // [1, 1]
    std::int64_t top_k = 1;
    bool renormalize = false;

    std::int64_t experts() const { return static_cast<std::int64_t>(rows.size()); }
};

// softmax(x·Wgᵀ + ε), ε ~ N(μ, σ²) per element in training, ε = μ otherwise.
template <typename T>
TensorT<T> gate(const TensorT<T>& x, const RouterT<T>& router, const RoutingContext<T>* ctx);

// Indices of the k largest weights, largest first; ties go to the lower index.
std::vector<std::int64_t> topk_select(const std::vector<double>& weights, std::int64_t k);

// One adapter bank attached to one host linear map.
template <typename T>
struct AdapterBankT {
    std::string name;  // parameter prefix
    std::int64_t in = 0, out = 0;
    AdapterConfig cfg;
    std::vector<LoraExpertT<T>> experts;
    std::unique_ptr<RouterT<T>> router;  // null for plain LoRA

    static std::unique_ptr<AdapterBankT> make(ParamSet<T>& ps, Rng& rng, const std::string& name, std::int64_t in,
                                              std::int64_t out, const AdapterConfig& cfg);
    // Σ_{i∈S(x)} G_i(x)·(α/r)·B_i·A_i·x per row (plain LoRA: the single delta).
    TensorT<T> delta(const TensorT<T>& x, const RoutingContext<T>* ctx) const;
    // Appends a zero-B expert and a zero gating row; returns the new expert index.
    std::int64_t add_expert(ParamSet<T>& ps, Rng& rng);

    std::string expert_prefix(std::int64_t i) const { return name + ".expert" + std::to_string(i); }
    std::string router_prefix() const { return name + ".router"; }
};

// N·Σ_i f_i·P_i averaged over records, where f_i is the fraction of Top-k
// slots routed to expert i and P_i its mean gate weight. Uniform routing
// gives 1, all traffic on one expert gives N.
template <typename T>
TensorT<T> load_balance_loss(const std::vector<GateRecord<T>>& records);

}  // namespace latflow
