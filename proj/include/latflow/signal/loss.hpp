// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "latflow/core/tensor.hpp"
#include "latflow/signal/stft.hpp"

namespace latflow {

// Window lengths 1280…20 paired index-wise with hops 320…5; fft = window.
std::vector<SpectrogramConfig> default_resolutions();

// Mean over resolutions of spectral convergence ‖|R|−|E|‖/‖|R|‖ plus the mean
// absolute log-magnitude difference. The log term is the perceptual weighting.
// reference and estimate are [1, N].
template <typename T>
TensorT<T> multires_stft_loss(const TensorT<T>& reference, const TensorT<T>& estimate,
                              const std::vector<SpectrogramConfig>& resolutions = default_resolutions());

// fft 512, window 320, hop 160.
SpectrogramConfig lsd_config();

// Log-spectral distance in dB: sqrt(mean over frames and bins of (20·log10 |R| − 20·log10 |E|)²).
// Each signal's magnitudes are floored 80 dB below its own spectrogram peak
// (and at a tiny absolute level for digital silence). Inputs are trimmed to
// the shorter length.
double lsd(const std::vector<float>& reference, const std::vector<float>& estimate,
           const SpectrogramConfig& cfg = lsd_config());

}  // namespace latflow
