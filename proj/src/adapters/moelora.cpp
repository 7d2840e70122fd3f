// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/adapters/moelora.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace latflow {

void AdapterConfig::validate() const {
    if (rank <= 0) throw ConfigError("adapter rank must be positive");
    if (num_experts <= 0) throw ConfigError("adapter num_experts must be positive");
    if (use_router && (top_k < 1 || top_k > num_experts)) {
        throw ConfigError("adapter top_k must lie in [1, num_experts]");
    }
    if (!use_router && num_experts != 1) throw ConfigError("plain LoRA (use_router = false) has exactly one expert");
    if (load_balance_weight < 0) throw ConfigError("load_balance_weight must be >= 0");
}

template <typename T>
TensorT<T> lora_delta(const TensorT<T>& x, const LoraExpertT<T>& e, T s) {
    return scale(matmul(matmul(x, e.a, false, true), e.b, false, true), s);
}

template <typename T>
TensorT<T> lora_forward(const TensorT<T>& w0, const LoraExpertT<T>& e, const TensorT<T>& x, T alpha) {
    if (e.a.cols() != w0.cols() || e.b.rows() != w0.rows() || e.a.rows() != e.b.cols()) {
        throw ContractError("LoRA factors " + shape_str(e.b.shape()) + "·" + shape_str(e.a.shape()) +
                            " do not fit a host weight " + shape_str(w0.shape()));
    }
    if (x.cols() != w0.cols()) throw ContractError("LoRA input width does not match the host weight");
    const T s = alpha / static_cast<T>(e.a.rows());
    return add(matmul(x, w0, false, true), lora_delta(x, e, s));
}

template <typename T>
TensorT<T> lora_merge(const TensorT<T>& w0, const LoraExpertT<T>& e, T alpha) {
    if (e.a.cols() != w0.cols() || e.b.rows() != w0.rows()) throw ContractError("LoRA factors do not fit host weight");
    return add(w0, scale(matmul(e.b, e.a), alpha / static_cast<T>(e.a.rows())));
}

template <typename T>
TensorT<T> gate(const TensorT<T>& x, const RouterT<T>& router, const RoutingContext<T>* ctx) {
    auto wg = router.rows.size() == 1 ? router.rows[0] : concat_rows<T>(router.rows);
    auto logits = matmul(x, wg, false, true);
    if (ctx && ctx->training) {
        if (!ctx->rng) throw ContractError("training-mode gating needs an RNG");
        auto n = seeded_normal<T>(*ctx->rng, logits.shape());
        logits = add(logits, add(router.noise_mu, mul(exp(router.noise_log_sigma), n)));
    } else {
        logits = add(logits, router.noise_mu);
    }
    return softmax(logits, 1);
}

std::vector<std::int64_t> topk_select(const std::vector<double>& weights, std::int64_t k) {
    const auto n = static_cast<std::int64_t>(weights.size());
    if (k < 1 || k > n) throw ContractError("top-k needs 1 <= k <= " + std::to_string(n) + ", got " + std::to_string(k));
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) { return weights[a] > weights[b]; });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

template <typename T>
std::unique_ptr<AdapterBankT<T>> AdapterBankT<T>::make(ParamSet<T>& ps, Rng& rng, const std::string& name,
                                                       std::int64_t in, std::int64_t out, const AdapterConfig& cfg) {
    cfg.validate();
    auto bank = std::make_unique<AdapterBankT>();
    bank->name = name;
    bank->in = in;
    bank->out = out;
    bank->cfg = cfg;
    if (cfg.use_router) {
        bank->router = std::make_unique<RouterT<T>>();
        bank->router->top_k = cfg.top_k;
        bank->router->renormalize = cfg.renormalize;
        bank->router->noise_mu = ps.add(bank->router_prefix() + ".noise_mu", TensorT<T>::zeros({1, 1}));
        bank->router->noise_log_sigma = ps.add(bank->router_prefix() + ".noise_log_sigma", TensorT<T>::zeros({1, 1}));
    }
    for (std::int64_t i = 0; i < cfg.num_experts; ++i) {
        const auto p = bank->expert_prefix(i);
        LoraExpertT<T> e;
        e.a = ps.add(p + ".A", init::normal<T>(rng, {cfg.rank, in}, 1.0 / std::sqrt(double(in))));
        e.b = ps.add(p + ".B", TensorT<T>::zeros({out, cfg.rank}));
        bank->experts.push_back(e);
        if (bank->router) {
            bank->router->rows.push_back(ps.add(bank->router_prefix() + ".w" + std::to_string(i),
                                                init::fan_in_uniform<T>(rng, {1, in})));
        }
    }
    return bank;
}

template <typename T>
std::int64_t AdapterBankT<T>::add_expert(ParamSet<T>& ps, Rng& rng) {
    if (!router) throw ConfigError("cannot extend a plain LoRA adapter (no router) with another expert");
    const auto i = static_cast<std::int64_t>(experts.size());
    const auto p = expert_prefix(i);
    LoraExpertT<T> e;
    e.a = ps.add(p + ".A", init::normal<T>(rng, {cfg.rank, in}, 1.0 / std::sqrt(double(in))));
    e.b = ps.add(p + ".B", TensorT<T>::zeros({out, cfg.rank}));
    experts.push_back(e);
    router->rows.push_back(ps.add(router_prefix() + ".w" + std::to_string(i), TensorT<T>::zeros({1, in})));
    cfg.num_experts = i + 1;
    return i;
}

template <typename T>
TensorT<T> AdapterBankT<T>::delta(const TensorT<T>& x, const RoutingContext<T>* ctx) const {
    if (experts.empty()) throw ContractError("adapter bank " + name + " has no experts");
    if (x.cols() != in) throw DimensionError("adapter bank " + name + ": input width mismatch");
    const T s = static_cast<T>(cfg.scaling());
    if (!router) return lora_delta(x, experts[0], s);

    const auto n = x.rows(), ne = router->experts();
    auto g = gate(x, *router, ctx);
    // Constant Top-k mask; gradients reach the router through the kept weights.
    std::vector<T> mask(static_cast<std::size_t>(n * ne), T(0));
    std::vector<std::int64_t> counts(static_cast<std::size_t>(ne), 0);
    std::vector<double> row(static_cast<std::size_t>(ne));
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t i = 0; i < ne; ++i) row[i] = double(g.data()[r * ne + i]);
        for (auto i : topk_select(row, router->top_k)) {
            mask[r * ne + i] = T(1);
            ++counts[i];
        }
    }
    auto gs = mul(g, TensorT<T>::from_data({n, ne}, std::move(mask)));
    if (router->renormalize) gs = mul(gs, reciprocal(sum_cols(gs)));
    if (ctx && ctx->records) ctx->records->push_back({g, counts, n, router->top_k});

    TensorT<T> acc;
    for (std::int64_t i = 0; i < ne; ++i) {
        if (counts[i] == 0) continue;  // contributes exactly zero
        auto term = mul(lora_delta(x, experts[i], s), slice_cols(gs, i, 1));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return acc;
}

template <typename T>
TensorT<T> load_balance_loss(const std::vector<GateRecord<T>>& records) {
    if (records.empty()) return TensorT<T>::zeros({1, 1});
    TensorT<T> total;
    for (const auto& r : records) {
        const auto ne = static_cast<std::int64_t>(r.counts.size());
        std::vector<T> f(static_cast<std::size_t>(ne));
        for (std::int64_t i = 0; i < ne; ++i) f[i] = static_cast<T>(double(r.counts[i]) / double(r.tokens * r.k));
        auto p = scale(sum_rows(r.weights), T(1) / static_cast<T>(r.tokens));  // [1, N]
        auto term = scale(sum(mul(p, TensorT<T>::from_data({1, ne}, std::move(f)))), static_cast<T>(ne));
        total = total.defined() ? add(total, term) : term;
    }
    return scale(total, T(1) / static_cast<T>(records.size()));
}

#define LATFLOW_INSTANTIATE_ADAPTERS(T)                                                              \
    template TensorT<T> lora_delta(const TensorT<T>&, const LoraExpertT<T>&, T);                     \
    template TensorT<T> lora_forward(const TensorT<T>&, const LoraExpertT<T>&, const TensorT<T>&, T); \
    template TensorT<T> lora_merge(const TensorT<T>&, const LoraExpertT<T>&, T);                     \
    template TensorT<T> gate(const TensorT<T>&, const RouterT<T>&, const RoutingContext<T>*);        \
    template struct AdapterBankT<T>;                                                                 \
    template TensorT<T> load_balance_loss(const std::vector<GateRecord<T>>&);

LATFLOW_INSTANTIATE_ADAPTERS(float)
LATFLOW_INSTANTIATE_ADAPTERS(double)

}  // namespace latflow
