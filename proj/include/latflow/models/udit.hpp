// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// uDiT velocity network: per-frame input projection of [z_t ; z_d], learned
// positions, adaLN-zero transformer blocks conditioned on the time embedding,
// and U-Net style long skips (block i feeds block layers−1−i through a
// concat-then-linear fusion). Sequences are frame-major [L, channels].

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "latflow/adapters/moelora.hpp"
#include "latflow/core/checkpoint.hpp"
#include "latflow/nn/layers.hpp"

namespace latflow {

struct UditConfig {
    std::int64_t latent_dim = 128;  // D; the input carries 2D channels
    std::int64_t layers = 12;
    std::int64_t embed_dim = 384;
    std::int64_t heads = 6;
    double mlp_ratio = 4.0;
    std::int64_t max_len = 512;        // learned positions; longer inputs interpolate
    std::int64_t time_freq_dim = 256;  // sinusoidal features of t
    bool use_skips = true;

    std::int64_t mlp_hidden() const { return static_cast<std::int64_t>(mlp_ratio * double(embed_dim) + 0.5); }
    // (shallow, deep) = (i, layers−1−i) for i < layers/2.
    std::vector<std::pair<std::int64_t, std::int64_t>> skip_pairs() const;
    void validate() const;
};

// Host linear maps that can carry an adapter bank. "mlp" wraps the whole
// feed-forward branch (E → E) rather than one of its two matrices.
inline constexpr std::array<const char*, 7> kAdapterTargets = {"Wq", "Wk", "Wv", "Wo", "mlp_in", "mlp_out", "mlp"};

template <typename T>
struct DitBlock {
    nn::Linear<T> ada;  // E → 6E: shift, scale, gate for attention then MLP; zero-init
    nn::LayerNorm<T> norm1, norm2;
    nn::Linear<T> wq, wk, wv, wo, mlp_in, mlp_out;
    std::int64_t heads = 1;
    std::map<std::string, std::unique_ptr<AdapterBankT<T>>> adapters;

    static DitBlock make(ParamSet<T>& ps, Rng& rng, const std::string& name, const UditConfig& cfg);
    // x: [L, E]; cond: [1, E] (SiLU of the time embedding).
    TensorT<T> operator()(const TensorT<T>& x, const TensorT<T>& cond, const RoutingContext<T>* ctx) const;
    // (in, out) of a target's host map; throws ConfigError for unknown names.
    std::pair<std::int64_t, std::int64_t> target_dims(const std::string& target) const;

   private:
    TensorT<T> project(const char* target, const nn::Linear<T>& lin, const TensorT<T>& x,
                       const RoutingContext<T>* ctx) const;
};

template <typename T>
class UditT {
   public:
    explicit UditT(const UditConfig& cfg, std::uint64_t seed = 0);

    const UditConfig& config() const { return cfg_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }
    std::vector<DitBlock<T>>& blocks() { return blocks_; }
    const std::vector<DitBlock<T>>& blocks() const { return blocks_; }

    // Sinusoids of 1000·t through Linear → SiLU → Linear; t ∉ [0, 1] throws.
    TensorT<T> time_embed(T t) const;
    // input: [L, 2D] → velocity [L, D]. Deterministic; ctx only matters
    // when adapters are attached.
    TensorT<T> forward(const TensorT<T>& input, T t, const RoutingContext<T>* ctx = nullptr) const;

    // Ablation switch: bypass the long-skip fusion (prev output passes through).
    void set_skip_fusion(bool on) { skips_on_ = on; }

   private:
    TensorT<T> positions(std::int64_t len) const;

    UditConfig cfg_;
    ParamSet<T> params_;
    nn::Linear<T> in_proj_, t_fc1_, t_fc2_, final_ada_, out_proj_;
    nn::LayerNorm<T> final_norm_;
    TensorT<T> pos_;  // [max_len, E]
    std::vector<DitBlock<T>> blocks_;
    std::map<std::int64_t, nn::Linear<T>> fuse_;  // keyed by deep block index
    bool skips_on_ = true;
};

using Udit = UditT<float>;

// Backbone tensors only; adapter tensors (names under "adapters.") are skipped.
void save_udit(const std::filesystem::path& path, const Udit& model, const nlohmann::json& meta = {});
Udit load_udit(const std::filesystem::path& path);

nlohmann::json to_json(const UditConfig& cfg);
UditConfig udit_config_from_json(const nlohmann::json& j);

}  // namespace latflow
