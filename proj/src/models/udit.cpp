// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/models/udit.hpp"

#include <algorithm>
#include <cmath>

#include "latflow/core/json_fields.hpp"

namespace latflow {

std::vector<std::pair<std::int64_t, std::int64_t>> UditConfig::skip_pairs() const {
    std::vector<std::pair<std::int64_t, std::int64_t>> p;
    if (!use_skips) return p;
    for (std::int64_t i = 0; i < layers / 2; ++i) p.emplace_back(i, layers - 1 - i);
    return p;
}

void UditConfig::validate() const {
    if (latent_dim <= 0 || layers <= 0 || embed_dim <= 0 || heads <= 0) {
        throw ConfigError("udit latent_dim, layers, embed_dim and heads must be positive");
    }
    if (embed_dim % heads != 0) throw ConfigError("udit embed_dim must be divisible by heads");
    if (!(mlp_ratio > 0)) throw ConfigError("udit mlp_ratio must be positive");
    if (max_len <= 1) throw ConfigError("udit max_len must be at least 2");
    if (time_freq_dim <= 0 || time_freq_dim % 2 != 0) throw ConfigError("udit time_freq_dim must be positive and even");
}

namespace {

// x·(1 + scale) + shift with [1, E] modulation rows.
template <typename T>
TensorT<T> modulate(const TensorT<T>& x, const TensorT<T>& shift, const TensorT<T>& scale_row) {
    return add(mul(x, add_scalar(scale_row, T(1))), shift);
}

}  // namespace

template <typename T>
DitBlock<T> DitBlock<T>::make(ParamSet<T>& ps, Rng& rng, const std::string& name, const UditConfig& cfg) {
    const auto e = cfg.embed_dim, h = cfg.mlp_hidden();
    DitBlock b;
    b.ada = nn::Linear<T>::make(ps, rng, name + ".ada", e, 6 * e, true, nn::Init::kZero);
    b.norm1 = nn::LayerNorm<T>::make(ps, name + ".norm1", e, false);
    b.norm2 = nn::LayerNorm<T>::make(ps, name + ".norm2", e, false);
    b.wq = nn::Linear<T>::make(ps, rng, name + ".Wq", e, e);
    // A key bias shifts every score of a query equally, so softmax cancels it.
    b.wk = nn::Linear<T>::make(ps, rng, name + ".Wk", e, e, false);
    b.wv = nn::Linear<T>::make(ps, rng, name + ".Wv", e, e);
    b.wo = nn::Linear<T>::make(ps, rng, name + ".Wo", e, e);
    b.mlp_in = nn::Linear<T>::make(ps, rng, name + ".mlp_in", e, h);
    b.mlp_out = nn::Linear<T>::make(ps, rng, name + ".mlp_out", h, e);
    b.heads = cfg.heads;
    return b;
}

template <typename T>
std::pair<std::int64_t, std::int64_t> DitBlock<T>::target_dims(const std::string& target) const {
    if (target == "Wq") return {wq.in(), wq.out()};
    if (target == "Wk") return {wk.in(), wk.out()};
    if (target == "Wv") return {wv.in(), wv.out()};
    if (target == "Wo") return {wo.in(), wo.out()};
    if (target == "mlp_in") return {mlp_in.in(), mlp_in.out()};
    if (target == "mlp_out") return {mlp_out.in(), mlp_out.out()};
    if (target == "mlp") return {mlp_in.in(), mlp_out.out()};
    throw ConfigError("unknown adapter target '" + target + "' (expected Wq, Wk, Wv, Wo, mlp_in, mlp_out or mlp)");
}

template <typename T>
TensorT<T> DitBlock<T>::project(const char* target, const nn::Linear<T>& lin, const TensorT<T>& x,
                                const RoutingContext<T>* ctx) const {
    auto y = lin(x);
    if (auto it = adapters.find(target); it != adapters.end()) y = add(y, it->second->delta(x, ctx));
    return y;
}

template <typename T>
TensorT<T> DitBlock<T>::operator()(const TensorT<T>& x, const TensorT<T>& cond, const RoutingContext<T>* ctx) const {
    const auto e = x.cols();
    auto mod = ada(cond);
    auto part = [&](int i) { return slice_cols(mod, i * e, e); };

    auto h = modulate(norm1(x), part(0), part(1));
    auto a = attention(project("Wq", wq, h, ctx), project("Wk", wk, h, ctx), project("Wv", wv, h, ctx), heads,
                       x.rows());
    auto y = add(x, mul(part(2), project("Wo", wo, a, ctx)));

    auto h2 = modulate(norm2(y), part(3), part(4));
    auto m = project("mlp_out", mlp_out, gelu(project("mlp_in", mlp_in, h2, ctx)), ctx);
    if (auto it = adapters.find("mlp"); it != adapters.end()) m = add(m, it->second->delta(h2, ctx));
    return add(y, mul(part(5), m));
}

template <typename T>
UditT<T>::UditT(const UditConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed, 0x75646974);  // "udit"
    const auto e = cfg_.embed_dim;
    in_proj_ = nn::Linear<T>::make(params_, rng, "in_proj", 2 * cfg_.latent_dim, e);
    pos_ = params_.add("pos", init::normal<T>(rng, {cfg_.max_len, e}, 0.02));
    t_fc1_ = nn::Linear<T>::make(params_, rng, "time.fc1", cfg_.time_freq_dim, e);
    t_fc2_ = nn::Linear<T>::make(params_, rng, "time.fc2", e, e);
    for (std::int64_t i = 0; i < cfg_.layers; ++i) {
        blocks_.push_back(DitBlock<T>::make(params_, rng, "block" + std::to_string(i), cfg_));
    }
    for (auto [shallow, deep] : cfg_.skip_pairs()) {
        fuse_.emplace(deep, nn::Linear<T>::make(params_, rng, "skip" + std::to_string(deep), 2 * e, e));
    }
    final_norm_ = nn::LayerNorm<T>::make(params_, "final.norm", e, false);
    final_ada_ = nn::Linear<T>::make(params_, rng, "final.ada", e, 2 * e, true, nn::Init::kZero);
    out_proj_ = nn::Linear<T>::make(params_, rng, "out_proj", e, cfg_.latent_dim, true, nn::Init::kZero);
}

template <typename T>
TensorT<T> UditT<T>::time_embed(T t) const {
    if (!(t >= T(0) && t <= T(1))) throw ContractError("flow time must lie in [0, 1], got " + std::to_string(t));
    const auto half = cfg_.time_freq_dim / 2;
    std::vector<T> f(static_cast<std::size_t>(2 * half));
    for (std::int64_t i = 0; i < half; ++i) {
        const double w = std::exp(-std::log(10000.0) * double(i) / double(half));
        const double arg = 1000.0 * double(t) * w;
        f[i] = static_cast<T>(std::cos(arg));
        f[half + i] = static_cast<T>(std::sin(arg));
    }
    return t_fc2_(silu(t_fc1_(TensorT<T>::from_data({1, 2 * half}, std::move(f)))));
}

template <typename T>
TensorT<T> UditT<T>::positions(std::int64_t len) const {
    const auto m = cfg_.max_len;
    if (len <= m) return slice_rows(pos_, 0, len);
    // Linear interpolation of the learned table onto `len` evenly spaced points.
    std::vector<T> w(static_cast<std::size_t>(len * m), T(0));
    for (std::int64_t p = 0; p < len; ++p) {
        const double s = double(p) * double(m - 1) / double(len - 1);
        const auto i0 = std::min<std::int64_t>(static_cast<std::int64_t>(s), m - 2);
        const double frac = s - double(i0);
        w[p * m + i0] = static_cast<T>(1.0 - frac);
        w[p * m + i0 + 1] = static_cast<T>(frac);
    }
    return matmul(TensorT<T>::from_data({len, m}, std::move(w)), pos_);
}

template <typename T>
TensorT<T> UditT<T>::forward(const TensorT<T>& input, T t, const RoutingContext<T>* ctx) const {
    if (input.cols() != 2 * cfg_.latent_dim) {
        throw DimensionError("udit input has " + std::to_string(input.cols()) + " channels, expected 2·" +
                             std::to_string(cfg_.latent_dim));
    }
    if (input.rows() < 1) throw DimensionError("udit input has no frames");
    auto cond = silu(time_embed(t));
    auto h = add(in_proj_(input), positions(input.rows()));
    std::vector<TensorT<T>> outs;
    outs.reserve(blocks_.size());
    for (std::int64_t i = 0; i < cfg_.layers; ++i) {
        if (auto it = fuse_.find(i); it != fuse_.end() && skips_on_) {
            const auto shallow = cfg_.layers - 1 - i;
            h = it->second(concat_cols<T>({h, outs[shallow]}));
        }
        h = blocks_[i](h, cond, ctx);
        outs.push_back(h);
    }
    auto mod = final_ada_(cond);
    const auto e = cfg_.embed_dim;
    return out_proj_(modulate(final_norm_(h), slice_cols(mod, 0, e), slice_cols(mod, e, e)));
}

nlohmann::json to_json(const UditConfig& c) {
    return {{"latent_dim", c.latent_dim}, {"layers", c.layers},   {"embed_dim", c.embed_dim},
            {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio}, {"max_len", c.max_len},
            {"time_freq_dim", c.time_freq_dim}, {"use_skips", c.use_skips}};
}

UditConfig udit_config_from_json(const nlohmann::json& j) {
    UditConfig c;
    JsonFields f(j, "udit");
    f.get("latent_dim", c.latent_dim)
        .get("layers", c.layers)
        .get("embed_dim", c.embed_dim)
        .get("heads", c.heads)
        .get("mlp_ratio", c.mlp_ratio)
        .get("max_len", c.max_len)
        .get("time_freq_dim", c.time_freq_dim)
        .get("use_skips", c.use_skips);
    f.finish();
    c.validate();
    return c;
}

void save_udit(const std::filesystem::path& path, const Udit& model, const nlohmann::json& meta) {
    Checkpoint ck;
    ck.model_type = "udit";
    ck.meta = meta.is_object() ? meta : nlohmann::json::object();
    ck.meta["config"] = to_json(model.config());
    for (const auto& p : model.params().entries()) {
        if (p.name.rfind("adapters.", 0) == 0) continue;
        ck.add(p.name, p.value.shape(), p.value.to_vector());
    }
    save_checkpoint(path, ck);
}

Udit load_udit(const std::filesystem::path& path) {
    auto ck = load_checkpoint(path);
    if (ck.model_type != "udit") throw IoError(path.string() + " holds a '" + ck.model_type + "' checkpoint, not a udit");
    Udit m(udit_config_from_json(ck.meta.at("config")));
    m.params().load_values(ck.tensors_with_prefix(""), true);
    return m;
}

template struct DitBlock<float>;
template struct DitBlock<double>;
template class UditT<float>;
template class UditT<double>;

}  // namespace latflow
