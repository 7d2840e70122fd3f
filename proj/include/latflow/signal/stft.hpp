// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable STFT / iSTFT with a periodic Hann window.
//
// Framing: a signal of N samples yields ceil(N/hop) frames. Frame t starts at
// t*hop - (window_len - hop)/2, so each window is centred on its hop segment;
// samples outside [0, N) read as zero. The window sits at the start of an
// fft_size buffer (zero-padded when fft_size > window_len).
//
// Spectrograms are [frames, 2*bins] tensors: real parts in the first `bins`
// columns, imaginary parts in the rest.

#pragma once

#include <cstdint>
#include <vector>

#include "latflow/core/tensor.hpp"

namespace latflow {

struct SpectrogramConfig {
    std::int64_t window_len = 320;
    std::int64_t hop = 160;
    std::int64_t fft_size = 320;

    std::int64_t bins() const { return fft_size / 2 + 1; }
    std::int64_t frames(std::int64_t n) const { return (n + hop - 1) / hop; }
    std::int64_t left_pad() const { return (window_len - hop) / 2; }

    // Throws ConfigError unless hop ≤ window_len ≤ fft_size, fft_size is even
    // and the Hann window overlap-adds to a constant at this hop.
    void validate() const;
};

std::vector<double> hann_window(std::int64_t n);

// x: [1, N] → [frames, 2*bins].
template <typename T>
TensorT<T> stft(const TensorT<T>& x, const SpectrogramConfig& cfg);

// spec: [frames, 2*bins] → [1, out_len]. Weighted overlap-add, normalised by
// the summed squared window at every sample, so istft(stft(x)) == x.
template <typename T>
TensorT<T> istft(const TensorT<T>& spec, const SpectrogramConfig& cfg, std::int64_t out_len);

// [frames, 2*bins] → [frames, bins], sqrt(max(re² + im², 1e-14)).
template <typename T>
TensorT<T> spectral_magnitude(const TensorT<T>& spec);

// Non-differentiable magnitude spectrogram in double precision, [frames][bins].
std::vector<std::vector<double>> magnitude_spectrogram(const std::vector<double>& x, const SpectrogramConfig& cfg);

}  // namespace latflow
