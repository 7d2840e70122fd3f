// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/signal/loss.hpp"

#include <algorithm>
#include <cmath>

#include "latflow/core/error.hpp"
#include "latflow/core/ops.hpp"

namespace latflow {

std::vector<SpectrogramConfig> default_resolutions() {
    const std::int64_t windows[] = {1280, 640, 320, 160, 80, 40, 20};
    const std::int64_t hops[] = {320, 160, 80, 40, 20, 10, 5};
    std::vector<SpectrogramConfig> out;
    for (int i = 0; i < 7; ++i) out.push_back({windows[i], hops[i], windows[i]});
    return out;
}

template <typename T>
TensorT<T> multires_stft_loss(const TensorT<T>& reference, const TensorT<T>& estimate,
                              const std::vector<SpectrogramConfig>& resolutions) {
    if (reference.shape() != estimate.shape()) {
        throw SignalError("multi-resolution loss needs equal lengths, got " + shape_str(reference.shape()) +
                          " and " + shape_str(estimate.shape()));
    }
    if (resolutions.empty()) throw ConfigError("multi-resolution loss needs at least one resolution");
    TensorT<T> total;
    for (const auto& cfg : resolutions) {
        auto r = spectral_magnitude(stft(reference, cfg));
        auto e = spectral_magnitude(stft(estimate, cfg));
        auto sc = mul(l2_norm(sub(r, e)), reciprocal(l2_norm(r)));
        // log of a floored magnitude never sees zero
        auto mag = mean(abs(sub(log(r), log(e))));
        auto term = add(sc, mag);
        total = total.defined() ? add(total, term) : term;
    }
    return scale(total, T(1) / static_cast<T>(resolutions.size()));
}

SpectrogramConfig lsd_config() { return {320, 160, 512}; }

namespace {

std::vector<std::vector<double>> floored_db(const std::vector<float>& x, std::size_t n, const SpectrogramConfig& cfg) {
    std::vector<double> d(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n));
    auto mag = magnitude_spectrogram(d, cfg);
    double peak = 0;
    for (const auto& row : mag)
        for (double m : row) peak = std::max(peak, m);
    const double floor = std::max(peak * 1e-4, 1e-12);  // −80 dB re peak
    for (auto& row : mag)
        for (double& m : row) m = 20.0 * std::log10(std::max(m, floor));
    return mag;
}

}  // namespace

double lsd(const std::vector<float>& reference, const std::vector<float>& estimate, const SpectrogramConfig& cfg) {
    const auto n = std::min(reference.size(), estimate.size());
    if (n == 0) throw SignalError("lsd on empty signals");
    auto r = floored_db(reference, n, cfg);
    auto e = floored_db(estimate, n, cfg);
    double acc = 0;
    for (std::size_t t = 0; t < r.size(); ++t) {
        double frame = 0;
        for (std::size_t k = 0; k < r[t].size(); ++k) frame += (r[t][k] - e[t][k]) * (r[t][k] - e[t][k]);
        acc += frame / double(r[t].size());
    }
    return std::sqrt(acc / double(r.size()));
}

template TensorT<float> multires_stft_loss(const TensorT<float>&, const TensorT<float>&,
                                           const std::vector<SpectrogramConfig>&);
template TensorT<double> multires_stft_loss(const TensorT<double>&, const TensorT<double>&,
                                            const std::vector<SpectrogramConfig>&);

}  // namespace latflow
