// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/distort/distort.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

#include "latflow/core/error.hpp"
#include "latflow/core/json_fields.hpp"
#include "latflow/signal/fft.hpp"

namespace latflow {

namespace {

double power(const std::vector<float>& x) {
    double p = 0;
    for (float v : x) p += double(v) * v;
    return x.empty() ? 0.0 : p / double(x.size());
}

std::int64_t next_pow2(std::int64_t n) {
    std::int64_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

constexpr std::int64_t kBandlimitPad = 400;

struct Biquad {
    double b0, b1, b2, a1, a2;  // a0 normalised to 1
};

// Butterworth low-pass as cascaded bilinear biquads (pre-warped at the cutoff).
std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double rate) {
    std::vector<Biquad> s;
    const double w0 = 2 * std::numbers::pi * cutoff_hz / rate, c = std::cos(w0);
    for (int k = 0; k < order / 2; ++k) {
        const double q = 1.0 / (2.0 * std::sin(std::numbers::pi * (2 * k + 1) / (2.0 * order)));
        const double alpha = std::sin(w0) / (2 * q), a0 = 1 + alpha;
        s.push_back({(1 - c) / 2 / a0, (1 - c) / a0, (1 - c) / 2 / a0, -2 * c / a0, (1 - alpha) / a0});
    }
    return s;
}

// Transposed direct form II with the steady-state state for a constant x[0].
void run_biquad(const Biquad& q, std::vector<double>& x) {
    if (x.empty()) return;
    double z1 = (1 - q.b0) * x[0], z2 = (q.b2 - q.a2) * x[0];
    for (auto& v : x) {
        const double y = q.b0 * v + z1;
        z1 = q.b1 * v - q.a1 * y + z2;
        z2 = q.b2 * v - q.a2 * y;
        v = y;
    }
}

}  // namespace

Waveform convolve_rir(const Waveform& x, const Waveform& rir) {
    if (x.sample_rate != rir.sample_rate) {
        throw SignalError("RIR rate " + std::to_string(rir.sample_rate) + " Hz differs from signal rate " +
                          std::to_string(x.sample_rate) + " Hz");
    }
    for (float v : rir.samples) {
        if (!std::isfinite(v)) throw SignalError("RIR contains non-finite samples");
    }
    Waveform y{std::vector<float>(x.size(), 0.0f), x.sample_rate};
    if (x.size() == 0 || rir.size() == 0) return y;
    const auto n = static_cast<std::int64_t>(x.size()), m = static_cast<std::int64_t>(rir.size());
    const auto len = next_pow2(n + std::min(n, m) - 1);
    const auto& fft = real_fft(len);
    std::vector<double> a(static_cast<std::size_t>(len), 0.0), b(static_cast<std::size_t>(len), 0.0);
    std::copy(x.samples.begin(), x.samples.end(), a.begin());
    // Taps beyond len(x) never reach the kept output.
    std::copy(rir.samples.begin(), rir.samples.begin() + std::min(n, m), b.begin());
    std::vector<std::complex<double>> fa(static_cast<std::size_t>(fft.bins())), fb(fa.size());
    fft.forward(a.data(), fa.data());
    fft.forward(b.data(), fb.data());
    for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
    fft.inverse(fa.data(), a.data());
    for (std::int64_t i = 0; i < n; ++i) y.samples[i] = static_cast<float>(a[i] / double(len));
    return y;
}

Waveform add_noise_at_snr(const Waveform& speech, const Waveform& noise, double snr_db, std::size_t offset) {
    if (std::isinf(snr_db) && snr_db > 0) return speech;
    if (std::isnan(snr_db)) throw SignalError("SNR is NaN");
    if (speech.sample_rate != noise.sample_rate) throw SignalError("noise and speech sample rates differ");
    const double ps = power(speech.samples);
    if (ps <= 0) throw SignalError("cannot set an SNR against silent speech");
    if (noise.size() == 0) throw SignalError("noise clip is empty");
    std::vector<float> n(speech.size());
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = noise.samples[(offset + i) % noise.size()];
    const double pn = power(n);
    if (pn <= 0) throw SignalError("noise segment is silent");
    const double g = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
    Waveform y = speech;
    for (std::size_t i = 0; i < n.size(); ++i) y.samples[i] = static_cast<float>(double(y.samples[i]) + g * n[i]);
    return y;
}

Waveform clip(const Waveform& x, double threshold) {
    if (!(threshold > 0 && threshold <= 1)) throw SignalError("clip threshold must lie in (0, 1]");
    float peak = 0;
    for (float v : x.samples) peak = std::max(peak, std::abs(v));
    const auto t = static_cast<float>(threshold * peak);
    Waveform y = x;
    for (auto& v : y.samples) v = std::clamp(v, -t, t);
    return y;
}

Waveform bandlimit(const Waveform& x, double cutoff_hz) {
    if (!(cutoff_hz > 0 && cutoff_hz < x.sample_rate / 2.0)) {
        throw SignalError("bandlimit cutoff must lie in (0, Nyquist)");
    }
    const auto sections = butterworth_lowpass(8, cutoff_hz, x.sample_rate);
    const auto n = static_cast<std::int64_t>(x.size());
    if (n == 0) return x;
    // Long enough for the high-Q sections to settle when the cutoff nears Nyquist.
    const std::int64_t pad = std::min<std::int64_t>(kBandlimitPad, n - 1);
    // Odd reflection about both ends keeps the edges on the signal's trend.
    std::vector<double> e;
    e.reserve(static_cast<std::size_t>(n + 2 * pad));
    for (std::int64_t i = pad; i >= 1; --i) e.push_back(2.0 * x.samples[0] - x.samples[i]);
    for (float v : x.samples) e.push_back(v);
    for (std::int64_t i = 1; i <= pad; ++i) e.push_back(2.0 * x.samples[n - 1] - x.samples[n - 1 - i]);
    for (const auto& s : sections) run_biquad(s, e);
    std::reverse(e.begin(), e.end());
    for (const auto& s : sections) run_biquad(s, e);
    std::reverse(e.begin(), e.end());
    Waveform y{std::vector<float>(x.size()), x.sample_rate};
    for (std::int64_t i = 0; i < n; ++i) y.samples[i] = static_cast<float>(e[pad + i]);
    return y;
}

Waveform packet_loss(const Waveform& x, double frame_ms, double loss_rate, std::uint64_t seed) {
    if (!(loss_rate >= 0 && loss_rate <= 1)) throw SignalError("loss_rate must lie in [0, 1]");
    const auto frame = static_cast<std::size_t>(std::lround(frame_ms * x.sample_rate / 1000.0));
    if (frame == 0) throw SignalError("packet-loss frame is shorter than one sample");
    Rng rng(seed, 0x706c6f73);  // "plos"
    Waveform y = x;
    for (std::size_t off = 0; off < y.size(); off += frame) {
        if (rng.bernoulli(loss_rate)) std::fill(y.samples.begin() + off, y.samples.begin() + std::min(off + frame, y.size()), 0.0f);
    }
    return y;
}

nlohmann::json to_json(const DistortionSpec& spec) {
    auto arr = nlohmann::json::array();
    for (const auto& s : spec.stages) arr.push_back({{"kind", s.kind}, {"params", s.params}, {"seed", s.seed}});
    return {{"stages", arr}};
}

DistortionSpec distortion_spec_from_json(const nlohmann::json& j) {
    DistortionSpec spec;
    JsonFields f(j, "distortion");
    nlohmann::json stages = nlohmann::json::array();
    f.get("stages", stages);
    f.finish();
    for (const auto& s : stages) {
        DistortionStage st;
        JsonFields g(s, "distortion.stage");
        g.get("kind", st.kind).get("params", st.params).get("seed", st.seed);
        g.finish();
        spec.stages.push_back(std::move(st));
    }
    return spec;
}

AudioResolver wav_resolver(const std::filesystem::path& base_dir) {
    return [base_dir](const std::string& rel) {
        const std::filesystem::path p(rel);
        return read_wav(p.is_absolute() ? p : base_dir / p).wave;
    };
}

namespace {

CodecFallback fallback_from_string(const std::string& s) {
    if (s == "auto") return CodecFallback::kAuto;
    if (s == "force") return CodecFallback::kForce;
    if (s == "off") return CodecFallback::kOff;
    throw ConfigError("codec fallback must be auto, force or off, got '" + s + "'");
}

Waveform apply_stage(const Waveform& x, const DistortionStage& s, const AudioResolver& resolve) {
    JsonFields f(s.params, "distortion." + s.kind);
    Waveform y;
    if (s.kind == "reverb") {
        std::string rir;
        f.get("rir", rir);
        f.finish();
        y = convolve_rir(x, resolve(rir));
    } else if (s.kind == "noise") {
        std::string path;
        double snr = std::numeric_limits<double>::infinity();
        std::int64_t offset = -1;
        f.get("noise", path).get("snr_db", snr).get("offset", offset);
        f.finish();
        auto noise = resolve(path);
        if (offset < 0) {
            Rng rng(s.seed, 0x6e6f6973);  // "nois"
            offset = noise.size() > x.size() ? static_cast<std::int64_t>(rng.below(noise.size() - x.size() + 1)) : 0;
        }
        y = add_noise_at_snr(x, noise, snr, static_cast<std::size_t>(offset));
    } else if (s.kind == "codec") {
        int bitrate = 0;
        std::string fallback = "auto";
        CodecConfig cfg;
        f.get("bitrate", bitrate).get("complexity", cfg.complexity).get("fallback", fallback);
        f.finish();
        cfg.fallback = fallback_from_string(fallback);
        if (bitrate == 0) {
            Rng rng(s.seed, 0x636f6463);  // "codc"
            bitrate = draw_codec_bitrate(rng);
        }
        y = codec_roundtrip(x, bitrate, cfg).wave;
    } else if (s.kind == "clip") {
        double t = 1.0;
        f.get("threshold", t);
        f.finish();
        y = clip(x, t);
    } else if (s.kind == "bandlimit") {
        double c = 0;
        f.get("cutoff_hz", c);
        f.finish();
        y = bandlimit(x, c);
    } else if (s.kind == "packet_loss") {
        double frame_ms = 20.0, rate = 0.0;
        f.get("frame_ms", frame_ms).get("loss_rate", rate);
        f.finish();
        y = packet_loss(x, frame_ms, rate, s.seed);
    } else {
        throw ConfigError("unknown distortion kind '" + s.kind + "'");
    }
    return y;
}

}  // namespace

Waveform apply_chain(const Waveform& x, const DistortionSpec& spec, const AudioResolver& resolve) {
    Waveform y = x;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        try {
            y = apply_stage(y, spec.stages[i], resolve);
        } catch (const Error& e) {
            throw Error(e.category(), "stage " + std::to_string(i) + " (" + spec.stages[i].kind + "): " + e.what());
        }
    }
    return y;
}

}  // namespace latflow
