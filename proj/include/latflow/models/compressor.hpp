// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// VAE audio compressor: complex STFT → 3×3 conv → T-F blocks → per-frame
// projection to a 2D-channel latent split into mean and softplus scale. The
// decoder mirrors it and ends in a 3×3 conv to (re, im) and an inverse STFT.
//
// T-F feature maps are [frames*bins, channels] with row = frame*bins + bin.
// Latents are frame-major [L, D].

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "latflow/core/checkpoint.hpp"
#include "latflow/nn/layers.hpp"
#include "latflow/signal/stft.hpp"

namespace latflow {

struct CompressorConfig {
    int sample_rate = 8000;
    std::int64_t window_len = 320;  // 40 ms
    std::int64_t hop = 160;         // 20 ms → 50 Hz latents
    std::int64_t fft_size = 320;
    std::int64_t latent_dim = 128;
    std::int64_t blocks = 3;
    std::int64_t embed_dim = 128;
    std::int64_t lstm_hidden = 256;
    std::int64_t attn_heads = 4;
    std::int64_t attn_qk_dim = 4;  // per-head query/key channels per bin
    double kl_weight = 1e-4;
    // Zero the encoder's final projection and the decoder's output conv.
    bool zero_init_heads = false;

    SpectrogramConfig spectrogram() const { return {window_len, hop, fft_size}; }
    double latent_rate() const { return double(sample_rate) / double(hop); }
    void validate() const;
};

template <typename T>
struct LatentGaussianT {
    TensorT<T> mu;     // [L, D]
    TensorT<T> sigma;  // [L, D], > 0
};

// TF-GridNet style block: frequency BiLSTM, time BiLSTM, then multi-head
// attention across frames; each sub-module is pre-normed and residual.
template <typename T>
struct TfBlock {
    struct Recurrent {
        nn::LayerNorm<T> norm;
        nn::BiLstm<T> rnn;
        nn::Linear<T> proj;  // 2H → C
    };
    Recurrent freq, time;
    nn::LayerNorm<T> attn_norm;
    nn::Linear<T> q, k, v, out;  // q,k: C → heads*E; v: C → C; out: C → C
    TensorT<T> q_slope, k_slope, v_slope;  // PReLU
    std::int64_t heads = 1, qk_dim = 1;

    static TfBlock make(ParamSet<T>& ps, Rng& rng, const std::string& name, const CompressorConfig& cfg,
                        nn::Init out_init = nn::Init::kDefault);
    // h: [frames*bins, C] → same shape.
    TensorT<T> operator()(const TensorT<T>& h, std::int64_t frames, std::int64_t bins) const;
};

template <typename T>
class CompressorT {
   public:
    explicit CompressorT(const CompressorConfig& cfg, std::uint64_t seed = 0);

    const CompressorConfig& config() const { return cfg_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }

    // x: [1, N]; zero-padded to a hop multiple, so L = ceil(N / hop).
    LatentGaussianT<T> encode(const TensorT<T>& x) const;
    // z: [L, D] → [1, out_len]; requires ceil(out_len / hop) == L.
    TensorT<T> decode(const TensorT<T>& z, std::int64_t out_len) const;

    const TfBlock<T>& encoder_block(std::size_t i) const { return enc_blocks_[i]; }

   private:
    TensorT<T> conv3x3(const TensorT<T>& x, const nn::Linear<T>& w, std::int64_t frames) const;

    CompressorConfig cfg_;
    ParamSet<T> params_;
    std::int64_t bins_;
    nn::Linear<T> enc_conv_, enc_proj_, dec_proj_, dec_conv_;
    TensorT<T> enc_gn_gain_, enc_gn_bias_;
    std::vector<TfBlock<T>> enc_blocks_, dec_blocks_;
};

using Compressor = CompressorT<float>;

// z = mu + sigma ⊙ ε, ε ~ N(0, I) drawn from rng.
template <typename T>
TensorT<T> reparameterize(const LatentGaussianT<T>& g, Rng& rng);

// Σ ½(μ² + σ² − 1 − log σ²) over all elements of one clip.
template <typename T>
TensorT<T> kl_divergence(const LatentGaussianT<T>& g);

template <typename T>
struct VaeLoss {
    TensorT<T> total;
    double recon = 0, kl = 0;
};

// Mean over clips of multires(x, decode(z)) + kl_weight · KL. Throws
// TrainingError naming the component when a value is not finite.
template <typename T>
VaeLoss<T> vae_loss(const CompressorT<T>& model, const std::vector<TensorT<T>>& clips, Rng& rng);

// Pads [1, N] with zeros to a multiple of hop.
template <typename T>
TensorT<T> pad_to_hop(const TensorT<T>& x, std::int64_t hop);

void save_compressor(const std::filesystem::path& path, const Compressor& model, const nlohmann::json& meta = {});
Compressor load_compressor(const std::filesystem::path& path);

nlohmann::json to_json(const CompressorConfig& cfg);
// Unknown keys → ConfigError.
CompressorConfig compressor_config_from_json(const nlohmann::json& j);

}  // namespace latflow
