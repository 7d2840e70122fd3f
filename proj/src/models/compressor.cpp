// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/models/compressor.hpp"

#include <cmath>

#include "latflow/core/json_fields.hpp"
#include "latflow/signal/loss.hpp"

namespace latflow {

void CompressorConfig::validate() const {
    spectrogram().validate();
    if (latent_dim <= 0 || blocks < 0 || embed_dim <= 0 || lstm_hidden <= 0 || attn_qk_dim <= 0) {
        throw ConfigError("compressor dimensions must be positive");
    }
    if (attn_heads <= 0 || embed_dim % attn_heads != 0) {
        throw ConfigError("compressor embed_dim must be divisible by attn_heads");
    }
    if (kl_weight < 0) throw ConfigError("compressor kl_weight must be >= 0");
    if (sample_rate <= 0) throw ConfigError("compressor sample_rate must be positive");
}

namespace {

// Rows gathered for a 3×3 neighbourhood in (frame, bin); -1 outside the map.
std::vector<std::int64_t> neighbourhood_index(std::int64_t frames, std::int64_t bins) {
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(frames * bins * 9));
    for (std::int64_t t = 0; t < frames; ++t)
        for (std::int64_t f = 0; f < bins; ++f)
            for (std::int64_t dt = -1; dt <= 1; ++dt)
                for (std::int64_t df = -1; df <= 1; ++df) {
                    const auto tt = t + dt, ff = f + df;
                    idx.push_back(tt < 0 || tt >= frames || ff < 0 || ff >= bins ? -1 : tt * bins + ff);
                }
    return idx;
}

// [frames, 2*bins] spectrogram ↔ [frames*bins, 2] two-channel map.
template <typename T>
TensorT<T> spec_to_map(const TensorT<T>& s, std::int64_t bins) {
    const auto rows = s.rows() * bins;
    return concat_cols<T>({reshape(slice_cols(s, 0, bins), {rows, 1}), reshape(slice_cols(s, bins, bins), {rows, 1})});
}

template <typename T>
TensorT<T> map_to_spec(const TensorT<T>& m, std::int64_t frames, std::int64_t bins) {
    return concat_cols<T>(
        {reshape(slice_cols(m, 0, 1), {frames, bins}), reshape(slice_cols(m, 1, 1), {frames, bins})});
}

// [T*F, heads*w] with per-position head blocks → [T, heads*F*w], head-major.
template <typename T>
TensorT<T> heads_to_frames(const TensorT<T>& x, std::int64_t frames, std::int64_t heads, std::int64_t w) {
    std::vector<TensorT<T>> parts;
    const auto bins = x.rows() / frames;
    for (std::int64_t h = 0; h < heads; ++h) parts.push_back(reshape(slice_cols(x, h * w, w), {frames, bins * w}));
    return heads == 1 ? parts[0] : concat_cols<T>(parts);
}

template <typename T>
TensorT<T> frames_to_heads(const TensorT<T>& x, std::int64_t bins, std::int64_t heads, std::int64_t w) {
    std::vector<TensorT<T>> parts;
    const auto rows = x.rows() * bins;
    for (std::int64_t h = 0; h < heads; ++h) parts.push_back(reshape(slice_cols(x, h * bins * w, bins * w), {rows, w}));
    return heads == 1 ? parts[0] : concat_cols<T>(parts);
}

}  // namespace

template <typename T>
TfBlock<T> TfBlock<T>::make(ParamSet<T>& ps, Rng& rng, const std::string& name, const CompressorConfig& cfg,
                            nn::Init out_init) {
    TfBlock b;
    const auto c = cfg.embed_dim, hid = cfg.lstm_hidden;
    auto recurrent = [&](const std::string& p) {
        Recurrent r;
        r.norm = nn::LayerNorm<T>::make(ps, p + ".norm", c);
        r.rnn = nn::BiLstm<T>::make(ps, rng, p + ".rnn", c, hid);
        r.proj = nn::Linear<T>::make(ps, rng, p + ".proj", 2 * hid, c, true, out_init);
        return r;
    };
    b.freq = recurrent(name + ".freq");
    b.time = recurrent(name + ".time");
    b.heads = cfg.attn_heads;
    b.qk_dim = cfg.attn_qk_dim;
    b.attn_norm = nn::LayerNorm<T>::make(ps, name + ".attn.norm", c);
    b.q = nn::Linear<T>::make(ps, rng, name + ".attn.q", c, b.heads * b.qk_dim);
    b.k = nn::Linear<T>::make(ps, rng, name + ".attn.k", c, b.heads * b.qk_dim);
    b.v = nn::Linear<T>::make(ps, rng, name + ".attn.v", c, c);
    b.q_slope = ps.add(name + ".attn.q_slope", TensorT<T>::full({1, 1}, T(0.25)));
    b.k_slope = ps.add(name + ".attn.k_slope", TensorT<T>::full({1, 1}, T(0.25)));
    b.v_slope = ps.add(name + ".attn.v_slope", TensorT<T>::full({1, 1}, T(0.25)));
    b.out = nn::Linear<T>::make(ps, rng, name + ".attn.out", c, c, true, out_init);
    return b;
}

template <typename T>
TensorT<T> TfBlock<T>::operator()(const TensorT<T>& h_in, std::int64_t frames, std::int64_t bins) const {
    auto h = h_in;
    // Along frequency: one sequence per frame.
    auto a = freq.rnn(freq.norm(h), bins, frames, SequenceLayout::kBatchMajor);
    h = add(h, freq.proj(a));
    // Along time: one sequence per bin.
    a = time.rnn(time.norm(h), frames, bins, SequenceLayout::kStepMajor);
    h = add(h, time.proj(a));
    // Across frames, each frame's full (bin, channel) map as one token.
    a = attn_norm(h);
    const auto cv = v.out() / heads;
    auto qf = heads_to_frames(prelu(q(a), q_slope), frames, heads, qk_dim);
    auto kf = heads_to_frames(prelu(k(a), k_slope), frames, heads, qk_dim);
    auto vf = heads_to_frames(prelu(v(a), v_slope), frames, heads, cv);
    auto o = frames_to_heads(attention(qf, kf, vf, heads, frames), bins, heads, cv);
    return add(h, out(o));
}

template <typename T>
CompressorT<T>::CompressorT(const CompressorConfig& cfg, std::uint64_t seed) : cfg_(cfg), bins_(cfg.fft_size / 2 + 1) {
    cfg_.validate();
    Rng rng(seed, 0x636f6d70);
    const auto c = cfg.embed_dim, d = cfg.latent_dim;
    const auto head_init = cfg.zero_init_heads ? nn::Init::kZero : nn::Init::kDefault;
    enc_conv_ = nn::Linear<T>::make(params_, rng, "enc.conv", 9 * 2, c);
    enc_gn_gain_ = params_.add("enc.gn.gain", TensorT<T>::full({1, c}, T(1)));
    enc_gn_bias_ = params_.add("enc.gn.bias", TensorT<T>::zeros({1, c}));
    for (std::int64_t i = 0; i < cfg.blocks; ++i)
        enc_blocks_.push_back(TfBlock<T>::make(params_, rng, "enc.block" + std::to_string(i), cfg));
    enc_proj_ = nn::Linear<T>::make(params_, rng, "enc.proj", bins_ * c, 2 * d, true, head_init);
    dec_proj_ = nn::Linear<T>::make(params_, rng, "dec.proj", d, bins_ * c);
    for (std::int64_t i = 0; i < cfg.blocks; ++i)
        dec_blocks_.push_back(TfBlock<T>::make(params_, rng, "dec.block" + std::to_string(i), cfg));
    dec_conv_ = nn::Linear<T>::make(params_, rng, "dec.conv", 9 * c, 2, true, head_init);
}

template <typename T>
TensorT<T> CompressorT<T>::conv3x3(const TensorT<T>& x, const nn::Linear<T>& w, std::int64_t frames) const {
    return w(gather_rows(x, neighbourhood_index(frames, bins_), 9));
}

template <typename T>
TensorT<T> pad_to_hop(const TensorT<T>& x, std::int64_t hop) {
    const auto n = x.cols();
    const auto target = ((n + hop - 1) / hop) * hop;
    if (target == n) return x;
    return concat_cols<T>({x, TensorT<T>::zeros({1, target - n})});
}

template <typename T>
LatentGaussianT<T> CompressorT<T>::encode(const TensorT<T>& x) const {
    if (x.shape().size() != 2 || x.rows() != 1 || x.cols() < 1) throw DimensionError("encode expects a [1, N] waveform");
    auto xp = pad_to_hop(x, cfg_.hop);
    const auto frames = xp.cols() / cfg_.hop;
    const auto c = cfg_.embed_dim;
    auto h = conv3x3(spec_to_map(stft(xp, cfg_.spectrogram()), bins_), enc_conv_, frames);
    // Single-group GroupNorm over the whole map, per-channel affine.
    const auto rows = frames * bins_;
    h = reshape(layer_norm(reshape(h, {1, rows * c}), TensorT<T>(), TensorT<T>(), T(1e-5)), {rows, c});
    h = add(mul(h, enc_gn_gain_), enc_gn_bias_);
    for (const auto& b : enc_blocks_) h = b(h, frames, bins_);
    auto out = enc_proj_(reshape(h, {frames, bins_ * c}));
    const auto d = cfg_.latent_dim;
    return {slice_cols(out, 0, d), softplus(slice_cols(out, d, d))};
}

template <typename T>
TensorT<T> CompressorT<T>::decode(const TensorT<T>& z, std::int64_t out_len) const {
    if (z.shape().size() != 2 || z.cols() != cfg_.latent_dim) {
        throw DimensionError("decode expects [L, " + std::to_string(cfg_.latent_dim) + "], got " + shape_str(z.shape()));
    }
    const auto frames = z.rows();
    if (out_len < 1 || (out_len + cfg_.hop - 1) / cfg_.hop != frames) {
        throw ContractError("decode: " + std::to_string(frames) + " latent frames cannot yield " +
                            std::to_string(out_len) + " samples");
    }
    auto h = reshape(dec_proj_(z), {frames * bins_, cfg_.embed_dim});
    for (const auto& b : dec_blocks_) h = b(h, frames, bins_);
    auto spec = map_to_spec(conv3x3(h, dec_conv_, frames), frames, bins_);
    return istft(spec, cfg_.spectrogram(), out_len);
}

template <typename T>
TensorT<T> reparameterize(const LatentGaussianT<T>& g, Rng& rng) {
    return add(g.mu, mul(g.sigma, seeded_normal<T>(rng, g.mu.shape())));
}

template <typename T>
TensorT<T> kl_divergence(const LatentGaussianT<T>& g) {
    auto var = square(g.sigma);
    auto terms = sub(add(square(g.mu), var), log(var, T(1e-30)));
    return scale(add_scalar(sum(terms), -static_cast<T>(g.mu.numel())), T(0.5));
}

template <typename T>
VaeLoss<T> vae_loss(const CompressorT<T>& model, const std::vector<TensorT<T>>& clips, Rng& rng) {
    if (clips.empty()) throw ContractError("vae_loss needs at least one clip");
    VaeLoss<T> out;
    const T w = static_cast<T>(model.config().kl_weight);
    const T inv = T(1) / static_cast<T>(clips.size());
    for (const auto& x : clips) {
        auto g = model.encode(x);
        auto y = model.decode(reparameterize(g, rng), x.cols());
        auto recon = multires_stft_loss(x, y);
        auto kl = kl_divergence(g);
        if (!std::isfinite(double(recon.item()))) throw TrainingError("non-finite reconstruction loss");
        if (!std::isfinite(double(kl.item()))) throw TrainingError("non-finite KL divergence");
        out.recon += double(recon.item()) / clips.size();
        out.kl += double(kl.item()) / clips.size();
        auto clip_total = scale(add(recon, scale(kl, w)), inv);
        out.total = out.total.defined() ? add(out.total, clip_total) : clip_total;
    }
    return out;
}

nlohmann::json to_json(const CompressorConfig& c) {
    return {{"sample_rate", c.sample_rate}, {"window_len", c.window_len},   {"hop", c.hop},
            {"fft_size", c.fft_size},       {"latent_dim", c.latent_dim},   {"blocks", c.blocks},
            {"embed_dim", c.embed_dim},     {"lstm_hidden", c.lstm_hidden}, {"attn_heads", c.attn_heads},
            {"attn_qk_dim", c.attn_qk_dim}, {"kl_weight", c.kl_weight},     {"zero_init_heads", c.zero_init_heads}};
}

CompressorConfig compressor_config_from_json(const nlohmann::json& j) {
    CompressorConfig c;
    JsonFields f(j, "compressor");
    f.get("sample_rate", c.sample_rate)
        .get("window_len", c.window_len)
        .get("hop", c.hop)
        .get("fft_size", c.fft_size)
        .get("latent_dim", c.latent_dim)
        .get("blocks", c.blocks)
        .get("embed_dim", c.embed_dim)
        .get("lstm_hidden", c.lstm_hidden)
        .get("attn_heads", c.attn_heads)
        .get("attn_qk_dim", c.attn_qk_dim)
        .get("kl_weight", c.kl_weight)
        .get("zero_init_heads", c.zero_init_heads);
    f.finish();
    c.validate();
    return c;
}

void save_compressor(const std::filesystem::path& path, const Compressor& model, const nlohmann::json& meta) {
    Checkpoint ck;
    ck.model_type = "compressor";
    ck.meta = meta.is_object() ? meta : nlohmann::json::object();
    ck.meta["config"] = to_json(model.config());
    add_params(ck, model.params());
    save_checkpoint(path, ck);
}

Compressor load_compressor(const std::filesystem::path& path) {
    auto ck = load_checkpoint(path);
    if (ck.model_type != "compressor") {
        throw IoError(path.string() + " holds a '" + ck.model_type + "' checkpoint, not a compressor");
    }
    Compressor m(compressor_config_from_json(ck.meta.at("config")));
    m.params().load_values(ck.tensors_with_prefix(""), true);
    return m;
}

template struct TfBlock<float>;
template struct TfBlock<double>;
template class CompressorT<float>;
template class CompressorT<double>;
template TensorT<float> reparameterize(const LatentGaussianT<float>&, Rng&);
template TensorT<double> reparameterize(const LatentGaussianT<double>&, Rng&);
template TensorT<float> kl_divergence(const LatentGaussianT<float>&);
template TensorT<double> kl_divergence(const LatentGaussianT<double>&);
template VaeLoss<float> vae_loss(const CompressorT<float>&, const std::vector<TensorT<float>>&, Rng&);
template VaeLoss<double> vae_loss(const CompressorT<double>&, const std::vector<TensorT<double>>&, Rng&);
template TensorT<float> pad_to_hop(const TensorT<float>&, std::int64_t);
template TensorT<double> pad_to_hop(const TensorT<double>&, std::int64_t);

}  // namespace latflow
