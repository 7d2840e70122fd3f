// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Thin FFTW wrapper for real transforms of one fixed even length.

#pragma once

#include <complex>
#include <cstdint>
#include <memory>

namespace latflow {

class RealFft {
   public:
    explicit RealFft(std::int64_t n);
    ~RealFft();
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    std::int64_t size() const { return n_; }
    std::int64_t bins() const { return n_ / 2 + 1; }

    // out[k] = Σ_n in[n]·e^{-2πikn/N}, k ≤ N/2.
    void forward(const double* in, std::complex<double>* out) const;
    // Unnormalised Hermitian inverse: out[n] = Σ_{k<N} X[k]·e^{2πikn/N}.
    // Imaginary parts at DC and Nyquist are ignored.
    void inverse(const std::complex<double>* in, double* out) const;

   private:
    struct Plans;
    std::int64_t n_;
    std::unique_ptr<Plans> plans_;
};

// Process-wide cache; plans are created once per size under a lock and then
// executed with the thread-safe new-array interface.
const RealFft& real_fft(std::int64_t n);

}  // namespace latflow
