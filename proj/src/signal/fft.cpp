// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/signal/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <vector>

#include "latflow/core/error.hpp"

namespace latflow {

namespace {
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace

struct RealFft::Plans {
    fftw_plan r2c = nullptr;
    fftw_plan c2r = nullptr;
};

RealFft::RealFft(std::int64_t n) : n_(n), plans_(std::make_unique<Plans>()) {
    if (n < 2 || n % 2 != 0) throw SignalError("fft size must be even and >= 2, got " + std::to_string(n));
    std::vector<double> re(static_cast<std::size_t>(n));
    std::vector<fftw_complex> spec(static_cast<std::size_t>(bins()));
    std::lock_guard lock(planner_mutex());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    plans_->r2c = fftw_plan_dft_r2c_1d(static_cast<int>(n), re.data(), spec.data(), flags);
    plans_->c2r = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec.data(), re.data(), flags | FFTW_DESTROY_INPUT);
    if (!plans_->r2c || !plans_->c2r) throw EnvironmentError("FFTW failed to create a plan");
}

RealFft::~RealFft() {
    std::lock_guard lock(planner_mutex());
    if (plans_->r2c) fftw_destroy_plan(plans_->r2c);
    if (plans_->c2r) fftw_destroy_plan(plans_->c2r);
}

void RealFft::forward(const double* in, std::complex<double>* out) const {
    // r2c does not modify its input, but FFTW's signature is non-const.
    fftw_execute_dft_r2c(plans_->r2c, const_cast<double*>(in), reinterpret_cast<fftw_complex*>(out));
}

void RealFft::inverse(const std::complex<double>* in, double* out) const {
    std::vector<std::complex<double>> scratch(in, in + bins());
    scratch.front().imag(0.0);
    scratch.back().imag(0.0);
    fftw_execute_dft_c2r(plans_->c2r, reinterpret_cast<fftw_complex*>(scratch.data()), out);
}

const RealFft& real_fft(std::int64_t n) {
    static std::mutex m;
    static std::map<std::int64_t, std::unique_ptr<RealFft>> cache;
    std::lock_guard lock(m);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<RealFft>(n);
    return *slot;
}

}  // namespace latflow
