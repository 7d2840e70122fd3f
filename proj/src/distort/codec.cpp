// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// libopus is only present as a runtime library here, so its entry points are
// declared by hand and resolved with dlopen.

#include <dlfcn.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>

#include "latflow/core/error.hpp"
#include "latflow/distort/distort.hpp"
#include "latflow/signal/fft.hpp"

namespace latflow {

namespace {

constexpr int kOpusApplicationAudio = 2049;
constexpr int kOpusSetBitrate = 4002;
constexpr int kOpusSetComplexity = 4010;
constexpr int kOpusGetLookahead = 4027;
constexpr int kMaxPacket = 4000;

struct OpusApi {
    void* handle = nullptr;
    void* (*encoder_create)(std::int32_t, int, int, int*) = nullptr;
    int (*encoder_ctl)(void*, int, ...) = nullptr;
    std::int32_t (*encode)(void*, const std::int16_t*, int, unsigned char*, std::int32_t) = nullptr;
    void (*encoder_destroy)(void*) = nullptr;
    void* (*decoder_create)(std::int32_t, int, int*) = nullptr;
    int (*decode)(void*, const unsigned char*, std::int32_t, std::int16_t*, int, int) = nullptr;
    void (*decoder_destroy)(void*) = nullptr;

    bool ok() const { return handle != nullptr; }
};

template <typename F>
bool bind(void* h, const char* name, F& fn) {
    fn = reinterpret_cast<F>(dlsym(h, name));
    return fn != nullptr;
}

const OpusApi& opus_api() {
    static const OpusApi api = [] {
        OpusApi a;
        void* h = dlopen("libopus.so.0", RTLD_NOW | RTLD_LOCAL);
        if (!h) return a;
        const bool all = bind(h, "opus_encoder_create", a.encoder_create) &&
                         bind(h, "opus_encoder_ctl", a.encoder_ctl) && bind(h, "opus_encode", a.encode) &&
                         bind(h, "opus_encoder_destroy", a.encoder_destroy) &&
                         bind(h, "opus_decoder_create", a.decoder_create) && bind(h, "opus_decode", a.decode) &&
                         bind(h, "opus_decoder_destroy", a.decoder_destroy);
        if (!all) {
            dlclose(h);
            return OpusApi{};
        }
        a.handle = h;
        return a;
    }();
    return api;
}

std::int16_t to_pcm16(float v) {
    return static_cast<std::int16_t>(std::clamp(std::lround(double(v) * 32768.0), -32768L, 32767L));
}

// Lag in [0, max_lag] maximising the correlation of y[lag:] with x.
std::int64_t best_lag(const std::vector<float>& x, const std::vector<float>& y, std::int64_t max_lag,
                      std::int64_t fallback) {
    const auto n = static_cast<std::int64_t>(x.size());
    double best = 0;
    std::int64_t lag = fallback;
    for (std::int64_t l = 0; l <= max_lag; ++l) {
        double c = 0;
        for (std::int64_t i = 0; i < n && i + l < static_cast<std::int64_t>(y.size()); ++i) c += double(x[i]) * y[i + l];
        if (c > best) {
            best = c;
            lag = l;
        }
    }
    return lag;
}

CodecResult opus_roundtrip(const Waveform& x, int bitrate, const CodecConfig& cfg) {
    const auto& api = opus_api();
    const int frame = static_cast<int>(std::lround(cfg.frame_ms * x.sample_rate / 1000.0));
    int err = 0;
    std::unique_ptr<void, void (*)(void*)> enc(api.encoder_create(x.sample_rate, 1, kOpusApplicationAudio, &err),
                                               api.encoder_destroy);
    if (err != 0 || !enc) throw SignalError("opus encoder rejected rate " + std::to_string(x.sample_rate));
    std::unique_ptr<void, void (*)(void*)> dec(api.decoder_create(x.sample_rate, 1, &err), api.decoder_destroy);
    if (err != 0 || !dec) throw SignalError("opus decoder rejected rate " + std::to_string(x.sample_rate));
    api.encoder_ctl(enc.get(), kOpusSetBitrate, static_cast<std::int32_t>(bitrate));
    api.encoder_ctl(enc.get(), kOpusSetComplexity, static_cast<std::int32_t>(cfg.complexity));
    std::int32_t lookahead = 0;
    api.encoder_ctl(enc.get(), kOpusGetLookahead, &lookahead);

    const auto n = static_cast<std::int64_t>(x.size());
    const std::int64_t padded = ((n + lookahead + frame) / frame + 1) * frame;
    std::vector<std::int16_t> pcm(static_cast<std::size_t>(padded), 0), out(static_cast<std::size_t>(padded), 0);
    for (std::int64_t i = 0; i < n; ++i) pcm[i] = to_pcm16(x.samples[i]);
    std::vector<unsigned char> packet(kMaxPacket);
    for (std::int64_t off = 0; off < padded; off += frame) {
        const auto bytes = api.encode(enc.get(), pcm.data() + off, frame, packet.data(), kMaxPacket);
        if (bytes < 0) throw SignalError("opus_encode failed with code " + std::to_string(bytes));
        const int got = api.decode(dec.get(), packet.data(), bytes, out.data() + off, frame, 0);
        if (got != frame) throw SignalError("opus_decode returned " + std::to_string(got) + " samples");
    }
    std::vector<float> y(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) y[i] = float(out[i]) / 32768.0f;
    CodecResult r;
    r.backend = "opus";
    r.delay = best_lag(x.samples, y, lookahead + frame, lookahead);
    r.wave.sample_rate = x.sample_rate;
    r.wave.samples.assign(y.begin() + r.delay, y.begin() + r.delay + n);
    return r;
}

// Per 20 ms frame: drop bins above 3.5 kHz (or 7/8 of Nyquist), then quantise
// the kept coefficients uniformly with the frame's bit budget.
CodecResult simulated_roundtrip(const Waveform& x, int bitrate, const CodecConfig& cfg) {
    const auto frame = static_cast<std::int64_t>(std::lround(cfg.frame_ms * x.sample_rate / 1000.0));
    const auto& fft = real_fft(frame);
    const double nyq = x.sample_rate / 2.0;
    const auto kept = static_cast<std::int64_t>(std::min(3500.0, 0.875 * nyq) / nyq * double(frame / 2)) + 1;
    const double bits = std::max(1.0, bitrate * cfg.frame_ms / 1000.0 / (2.0 * double(kept)));
    const double levels = std::pow(2.0, std::floor(bits));
    std::vector<double> buf(static_cast<std::size_t>(frame));
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(fft.bins()));
    CodecResult r;
    r.backend = "simulated";
    r.wave.sample_rate = x.sample_rate;
    r.wave.samples.assign(x.size(), 0.0f);
    for (std::size_t off = 0; off < x.size(); off += static_cast<std::size_t>(frame)) {
        std::fill(buf.begin(), buf.end(), 0.0);
        for (std::int64_t i = 0; i < frame && off + i < x.size(); ++i) buf[i] = x.samples[off + i];
        fft.forward(buf.data(), spec.data());
        double peak = 0;
        for (std::int64_t k = 0; k < kept; ++k) peak = std::max({peak, std::abs(spec[k].real()), std::abs(spec[k].imag())});
        const double step = peak > 0 ? 2.0 * peak / levels : 1.0;
        auto q = [&](double v) { return step * std::round(v / step); };
        for (std::int64_t k = 0; k < fft.bins(); ++k) {
            spec[k] = k < kept ? std::complex<double>(q(spec[k].real()), q(spec[k].imag())) : 0.0;
        }
        fft.inverse(spec.data(), buf.data());
        for (std::int64_t i = 0; i < frame && off + i < x.size(); ++i) {
            r.wave.samples[off + i] = static_cast<float>(buf[i] / double(frame));
        }
    }
    return r;
}

}  // namespace

bool opus_available() { return opus_api().ok(); }

int draw_codec_bitrate(Rng& rng) {
    return kMinCodecBitrate + static_cast<int>(rng.below(kMaxCodecBitrate - kMinCodecBitrate + 1));
}

CodecResult codec_roundtrip(const Waveform& x, int bitrate_bps, const CodecConfig& cfg) {
    if (bitrate_bps <= 0) throw SignalError("codec bitrate must be positive");
    if (x.size() == 0) return {x, opus_available() ? "opus" : "simulated", 0};
    const bool use_opus = cfg.fallback != CodecFallback::kForce && opus_available();
    if (use_opus) return opus_roundtrip(x, bitrate_bps, cfg);
    if (cfg.fallback == CodecFallback::kOff) {
        throw EnvironmentError("libopus.so.0 could not be loaded and the codec fallback is disabled");
    }
    return simulated_roundtrip(x, bitrate_bps, cfg);
}

}  // namespace latflow
