// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "latflow/core/ops.hpp"
#include "latflow/core/rng.hpp"
#include "latflow/signal/loss.hpp"

using namespace latflow;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed, float gain = 1.0f) {
    Rng rng(seed, 0);
    std::vector<float> v(n);
    for (auto& e : v) e = gain * static_cast<float>(rng.normal());
    return v;
}

Tensor64 as_tensor(const std::vector<float>& v) {
    return Tensor64::from_data({1, static_cast<std::int64_t>(v.size())}, std::vector<double>(v.begin(), v.end()));
}

// Independent LSD: framing and DFT written out directly.
double lsd_oracle(const std::vector<float>& a, const std::vector<float>& b) {
    const int win = 320, hop = 160, nfft = 512, bins = nfft / 2 + 1;
    const int n = static_cast<int>(std::min(a.size(), b.size()));
    const int frames = (n + hop - 1) / hop;
    auto spec = [&](const std::vector<float>& x) {
        std::vector<std::vector<double>> m(frames, std::vector<double>(bins));
        double peak = 0;
        for (int t = 0; t < frames; ++t) {
            for (int k = 0; k < bins; ++k) {
                double re = 0, im = 0;
                for (int j = 0; j < win; ++j) {
                    const int i = t * hop - (win - hop) / 2 + j;
                    if (i < 0 || i >= n) continue;
                    const double w = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * j / win);
                    re += w * x[i] * std::cos(2 * std::numbers::pi * k * j / nfft);
                    im -= w * x[i] * std::sin(2 * std::numbers::pi * k * j / nfft);
                }
                m[t][k] = std::sqrt(re * re + im * im);
                peak = std::max(peak, m[t][k]);
            }
        }
        for (auto& row : m)
            for (auto& v : row) v = 20 * std::log10(std::max(v, std::max(peak * 1e-4, 1e-12)));
        return m;
    };
    auto ma = spec(a), mb = spec(b);
    double acc = 0;
    for (int t = 0; t < frames; ++t) {
        double f = 0;
        for (int k = 0; k < bins; ++k) f += std::pow(ma[t][k] - mb[t][k], 2);
        acc += f / bins;
    }
    return std::sqrt(acc / frames);
}

}  // namespace

TEST(MultiresLoss, IdenticalIsZero) {
    auto x = as_tensor(noise(4000, 1));
    EXPECT_EQ(multires_stft_loss(x, x).item(), 0.0);
}

TEST(MultiresLoss, SignFlipIsZero) {
    auto x = as_tensor(noise(4000, 2));
    EXPECT_NEAR(multires_stft_loss(x, scale(x, -1.0)).item(), 0.0, 1e-12);
}

TEST(MultiresLoss, HalfScaleMatchesHandEvaluation) {
    // |E| = |R|/2 everywhere: SC = 0.5 and mean|log|R| − log|E|| = ln 2.
    auto x = as_tensor(noise(4000, 3));
    std::vector<SpectrogramConfig> one{{320, 80, 320}};
    EXPECT_NEAR(multires_stft_loss(x, scale(x, 0.5), one).item(), 0.5 + std::log(2.0), 1e-6);
    // The full set averages identical per-resolution values.
    EXPECT_NEAR(multires_stft_loss(x, scale(x, 0.5)).item(), 0.5 + std::log(2.0), 1e-6);
}

TEST(MultiresLoss, NonNegativeAndLengthChecked) {
    auto a = as_tensor(noise(2000, 4)), b = as_tensor(noise(2000, 5));
    EXPECT_GT(multires_stft_loss(a, b).item(), 0.0);
    EXPECT_THROW(multires_stft_loss(a, as_tensor(noise(1999, 6))), SignalError);
}

TEST(MultiresLoss, DefaultResolutionTable) {
    auto r = default_resolutions();
    ASSERT_EQ(r.size(), 7u);
    EXPECT_EQ(r.front().window_len, 1280);
    EXPECT_EQ(r.front().hop, 320);
    EXPECT_EQ(r.back().window_len, 20);
    EXPECT_EQ(r.back().hop, 5);
}

TEST(Lsd, IdenticalIsZero) {
    auto x = noise(8000, 7);
    EXPECT_EQ(lsd(x, x), 0.0);
}

TEST(Lsd, TenfoldEstimateIsTwentyDb) {
    // Samples on the 16-bit grid so that ×10 is exact in single precision.
    auto x = noise(8000, 8, 0.1f);
    for (auto& v : x) v = std::round(v * 32768.0f) / 32768.0f;
    auto y = x;
    for (auto& v : y) v *= 10.0f;
    EXPECT_NEAR(lsd(x, y), 20.0, 1e-9);
}

TEST(Lsd, MatchesNaiveLoopOracle) {
    auto a = noise(2000, 9), b = noise(2100, 10, 0.3f);
    EXPECT_NEAR(lsd(a, b), lsd_oracle(a, b), 1e-9);
}

TEST(Lsd, SymmetricAndScaleInvariant) {
    auto a = noise(3000, 11), b = noise(3000, 12, 2.0f);
    EXPECT_NEAR(lsd(a, b), lsd(b, a), 1e-12);
    auto a3 = a, b3 = b;
    for (auto& v : a3) v *= 0.25f;
    for (auto& v : b3) v *= 0.25f;
    EXPECT_NEAR(lsd(a3, b3), lsd(a, b), 1e-9);
}

TEST(Lsd, SilentPairIsZero) {
    std::vector<float> z(1600, 0.0f);
    EXPECT_EQ(lsd(z, z), 0.0);
}
