// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/signal/stft.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "latflow/core/error.hpp"
#include "latflow/signal/fft.hpp"

namespace latflow {

namespace {

using cd = std::complex<double>;

template <typename T>
using NodeT = detail::Node<T>;

// Frame-major plumbing shared by the forward and adjoint passes.
struct Framing {
    SpectrogramConfig cfg;
    std::int64_t n;       // signal length
    std::int64_t frames;  // frame count
    std::vector<double> window;

    std::int64_t start(std::int64_t t) const { return t * cfg.hop - cfg.left_pad(); }

    // windowed frame t of x into buf (fft_size long, zero tail)
    template <typename S>
    void load(const S* x, std::int64_t t, std::vector<double>& buf) const {
        std::fill(buf.begin(), buf.end(), 0.0);
        const auto s0 = start(t);
        for (std::int64_t j = 0; j < cfg.window_len; ++j) {
            const auto i = s0 + j;
            if (i >= 0 && i < n) buf[j] = window[j] * double(x[i]);
        }
    }

    // Σ_t w²[i - start(t)] for every output sample.
    std::vector<double> window_energy() const {
        std::vector<double> den(static_cast<std::size_t>(n), 0.0);
        for (std::int64_t t = 0; t < frames; ++t) {
            const auto s0 = start(t);
            for (std::int64_t j = 0; j < cfg.window_len; ++j) {
                const auto i = s0 + j;
                if (i >= 0 && i < n) den[i] += window[j] * window[j];
            }
        }
        return den;
    }
};

// rfft of each windowed frame, written as [re | im] rows.
template <typename S, typename D>
void analyse(const Framing& fr, const S* x, D* out) {
    const auto& fft = real_fft(fr.cfg.fft_size);
    const auto bins = fr.cfg.bins();
    std::vector<double> buf(static_cast<std::size_t>(fr.cfg.fft_size));
    std::vector<cd> spec(static_cast<std::size_t>(bins));
    for (std::int64_t t = 0; t < fr.frames; ++t) {
        fr.load(x, t, buf);
        fft.forward(buf.data(), spec.data());
        D* row = out + t * 2 * bins;
        for (std::int64_t k = 0; k < bins; ++k) {
            row[k] += static_cast<D>(spec[k].real());
            row[bins + k] += static_cast<D>(spec[k].imag());
        }
    }
}

}  // namespace

void SpectrogramConfig::validate() const {
    if (hop <= 0 || window_len < hop || fft_size < window_len) {
        throw ConfigError("spectrogram config needs 0 < hop <= window_len <= fft_size (got window " +
                          std::to_string(window_len) + ", hop " + std::to_string(hop) + ", fft " +
                          std::to_string(fft_size) + ")");
    }
    if (fft_size % 2 != 0) throw ConfigError("fft_size must be even");
    // Constant overlap-add of the analysis window over one hop period.
    const auto w = hann_window(window_len);
    std::vector<double> ola(static_cast<std::size_t>(hop), 0.0);
    for (std::int64_t j = 0; j < window_len; ++j) ola[j % hop] += w[j];
    const auto [lo, hi] = std::minmax_element(ola.begin(), ola.end());
    if (*hi <= 0 || (*hi - *lo) > 1e-9 * *hi) {
        throw ConfigError("Hann window of length " + std::to_string(window_len) +
                          " is not constant-overlap-add at hop " + std::to_string(hop));
    }
}

std::vector<double> hann_window(std::int64_t n) {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double s = std::sin(std::numbers::pi * double(i) / double(n));
        w[i] = s * s;  // periodic: 0.5 - 0.5 cos(2πi/n)
    }
    return w;
}

template <typename T>
TensorT<T> stft(const TensorT<T>& x, const SpectrogramConfig& cfg) {
    if (x.shape().size() != 2 || x.rows() != 1) throw DimensionError("stft expects a [1, N] waveform");
    if (x.cols() < 1) throw SignalError("stft of an empty signal");
    cfg.validate();
    Framing fr{cfg, x.cols(), cfg.frames(x.cols()), hann_window(cfg.window_len)};
    const auto bins = cfg.bins();
    std::vector<T> out(static_cast<std::size_t>(fr.frames * 2 * bins), T(0));
    analyse(fr, x.data().data(), out.data());
    return make_op_result<T>({fr.frames, 2 * bins}, std::move(out), {x}, [fr](NodeT<T>& self) {
        if (!self.parents[0]->requires_grad) return;
        // Adjoint of rfft: interior bins appear twice in the Hermitian
        // inverse, so halve them before the unnormalised c2r.
        const auto& fft = real_fft(fr.cfg.fft_size);
        const auto bins = fr.cfg.bins();
        auto& gx = self.parents[0]->ensure_grad();
        std::vector<cd> g(static_cast<std::size_t>(bins));
        std::vector<double> frame(static_cast<std::size_t>(fr.cfg.fft_size));
        for (std::int64_t t = 0; t < fr.frames; ++t) {
            const T* row = self.grad.data() + t * 2 * bins;
            for (std::int64_t k = 0; k < bins; ++k) {
                const double c = (k == 0 || k == bins - 1) ? 1.0 : 0.5;
                g[k] = {c * double(row[k]), c * double(row[bins + k])};
            }
            fft.inverse(g.data(), frame.data());
            const auto s0 = fr.start(t);
            for (std::int64_t j = 0; j < fr.cfg.window_len; ++j) {
                const auto i = s0 + j;
                if (i >= 0 && i < fr.n) gx[i] += static_cast<T>(fr.window[j] * frame[j]);
            }
        }
    });
}

template <typename T>
TensorT<T> istft(const TensorT<T>& spec, const SpectrogramConfig& cfg, std::int64_t out_len) {
    cfg.validate();
    const auto bins = cfg.bins();
    if (spec.shape().size() != 2 || spec.cols() != 2 * bins) {
        throw DimensionError("istft expects [frames, " + std::to_string(2 * bins) + "], got " +
                             shape_str(spec.shape()));
    }
    if (out_len < 1 || cfg.frames(out_len) != spec.rows()) {
        throw DimensionError("istft: " + std::to_string(spec.rows()) + " frames cannot produce " +
                             std::to_string(out_len) + " samples at hop " + std::to_string(cfg.hop));
    }
    Framing fr{cfg, out_len, spec.rows(), hann_window(cfg.window_len)};
    auto den = fr.window_energy();
    for (auto& d : den) d = d > 0 ? 1.0 / d : 0.0;

    const auto& fft = real_fft(cfg.fft_size);
    const double inv_m = 1.0 / double(cfg.fft_size);
    std::vector<double> acc(static_cast<std::size_t>(out_len), 0.0);
    std::vector<cd> s(static_cast<std::size_t>(bins));
    std::vector<double> frame(static_cast<std::size_t>(cfg.fft_size));
    const T* in = spec.data().data();
    for (std::int64_t t = 0; t < fr.frames; ++t) {
        const T* row = in + t * 2 * bins;
        for (std::int64_t k = 0; k < bins; ++k) s[k] = {double(row[k]), double(row[bins + k])};
        fft.inverse(s.data(), frame.data());
        const auto s0 = fr.start(t);
        for (std::int64_t j = 0; j < cfg.window_len; ++j) {
            const auto i = s0 + j;
            if (i >= 0 && i < out_len) acc[i] += fr.window[j] * frame[j] * inv_m;
        }
    }
    std::vector<T> out(static_cast<std::size_t>(out_len));
    for (std::int64_t i = 0; i < out_len; ++i) out[i] = static_cast<T>(acc[i] * den[i]);

    return make_op_result<T>({1, out_len}, std::move(out), {spec}, [fr, den](NodeT<T>& self) {
        if (!self.parents[0]->requires_grad) return;
        // Adjoint of (1/M)·c2r: (c_k/M)·rfft(g) with c_k = 1 at DC/Nyquist, 2 elsewhere;
        // the imaginary parts at DC/Nyquist do not reach the output.
        std::vector<double> g(static_cast<std::size_t>(fr.n));
        for (std::int64_t i = 0; i < fr.n; ++i) g[i] = double(self.grad[i]) * den[i];
        const auto bins = fr.cfg.bins();
        const double inv_m = 1.0 / double(fr.cfg.fft_size);
        auto& gs = self.parents[0]->ensure_grad();
        std::vector<T> tmp(static_cast<std::size_t>(fr.frames * 2 * bins), T(0));
        analyse(fr, g.data(), tmp.data());
        for (std::int64_t t = 0; t < fr.frames; ++t) {
            T* grow = gs.data() + t * 2 * bins;
            const T* trow = tmp.data() + t * 2 * bins;
            for (std::int64_t k = 0; k < bins; ++k) {
                const bool edge = (k == 0 || k == bins - 1);
                const double c = (edge ? 1.0 : 2.0) * inv_m;
                grow[k] += static_cast<T>(c * double(trow[k]));
                if (!edge) grow[bins + k] += static_cast<T>(c * double(trow[bins + k]));
            }
        }
    });
}

template <typename T>
TensorT<T> spectral_magnitude(const TensorT<T>& spec) {
    if (spec.shape().size() != 2 || spec.cols() % 2 != 0) {
        throw DimensionError("spectral_magnitude expects [frames, 2*bins]");
    }
    const auto frames = spec.rows(), bins = spec.cols() / 2;
    constexpr double kFloor = 1e-14;
    std::vector<T> out(static_cast<std::size_t>(frames * bins));
    const T* in = spec.data().data();
    for (std::int64_t t = 0; t < frames; ++t) {
        for (std::int64_t k = 0; k < bins; ++k) {
            const double re = in[t * 2 * bins + k], im = in[t * 2 * bins + bins + k];
            out[t * bins + k] = static_cast<T>(std::sqrt(std::max(re * re + im * im, kFloor)));
        }
    }
    return make_op_result<T>({frames, bins}, std::move(out), {spec}, [frames, bins](NodeT<T>& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& g = self.parents[0]->ensure_grad();
        const auto& x = self.parents[0]->data;
        for (std::int64_t t = 0; t < frames; ++t) {
            for (std::int64_t k = 0; k < bins; ++k) {
                const auto ir = t * 2 * bins + k, ii = ir + bins;
                const double re = x[ir], im = x[ii];
                if (re * re + im * im <= kFloor) continue;
                const double s = double(self.grad[t * bins + k]) / double(self.data[t * bins + k]);
                g[ir] += static_cast<T>(s * re);
                g[ii] += static_cast<T>(s * im);
            }
        }
    });
}

std::vector<std::vector<double>> magnitude_spectrogram(const std::vector<double>& x, const SpectrogramConfig& cfg) {
    if (x.empty()) throw SignalError("magnitude spectrogram of an empty signal");
    cfg.validate();
    const auto n = static_cast<std::int64_t>(x.size());
    Framing fr{cfg, n, cfg.frames(n), hann_window(cfg.window_len)};
    const auto bins = cfg.bins();
    std::vector<double> flat(static_cast<std::size_t>(fr.frames * 2 * bins), 0.0);
    analyse(fr, x.data(), flat.data());
    std::vector<std::vector<double>> mag(static_cast<std::size_t>(fr.frames), std::vector<double>(bins));
    for (std::int64_t t = 0; t < fr.frames; ++t) {
        for (std::int64_t k = 0; k < bins; ++k) mag[t][k] = std::hypot(flat[t * 2 * bins + k], flat[t * 2 * bins + bins + k]);
    }
    return mag;
}

template TensorT<float> stft(const TensorT<float>&, const SpectrogramConfig&);
template TensorT<double> stft(const TensorT<double>&, const SpectrogramConfig&);
template TensorT<float> istft(const TensorT<float>&, const SpectrogramConfig&, std::int64_t);
template TensorT<double> istft(const TensorT<double>&, const SpectrogramConfig&, std::int64_t);
template TensorT<float> spectral_magnitude(const TensorT<float>&);
template TensorT<double> spectral_magnitude(const TensorT<double>&);

}  // namespace latflow
