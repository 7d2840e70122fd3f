// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "latflow/core/optim.hpp"
#include "latflow/flow/flow.hpp"

using namespace latflow;

namespace {

double max_abs_diff(const Tensor64& a, const Tensor64& b) {
    double m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// First D channels of the [x ; z_d] input.
template <typename T>
TensorT<T> state_of(const TensorT<T>& input) {
    return slice_cols(input, 0, input.cols() / 2);
}

// Global error of the v = x flow against e·x0 at each step count.
double convergence_slope(OdeScheme scheme) {
    Rng rng(1, 0);
    auto x0 = seeded_normal<double>(rng, {3, 2});
    VelocityFn<double> v = [](const Tensor64& in, double) { return state_of(in); };
    std::vector<double> lx, ly;
    for (std::int64_t n : {10, 20, 40, 80}) {
        auto x1 = ode_integrate(v, x0, Tensor64::zeros({3, 2}), SolverConfig{n, scheme});
        lx.push_back(std::log(double(n)));
        ly.push_back(std::log(max_abs_diff(x1, scale(x0, std::exp(1.0)))));
    }
    // Least-squares slope of log error against log steps, negated.
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i] / lx.size(), my += ly[i] / ly.size();
    double num = 0, den = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) num += (lx[i] - mx) * (ly[i] - my), den += (lx[i] - mx) * (lx[i] - mx);
    return -num / den;
}

}  // namespace

TEST(Path, Endpoints) {
    Rng rng(2, 0);
    auto x0 = seeded_normal<double>(rng, {4, 3}), x1 = seeded_normal<double>(rng, {4, 3});
    EXPECT_EQ(path_at(x0, x1, 0.0, {0.0}).xt.to_vector(), x0.to_vector());
    auto p1 = path_at(x0, x1, 1.0, {1e-4});
    EXPECT_LT(max_abs_diff(p1.xt, add(x1, scale(x0, 1e-4))), 1e-15);
}

TEST(Path, TimeDerivativeIsTarget) {
    Rng rng(3, 0);
    auto x0 = seeded_normal<double>(rng, {4, 3}), x1 = seeded_normal<double>(rng, {4, 3});
    const double h = 1e-4;
    for (double t : {0.1, 0.5, 0.9}) {
        auto up = path_at(x0, x1, t + h, {}).xt, down = path_at(x0, x1, t - h, {}).xt;
        auto fd = scale(sub(up, down), 1.0 / (2 * h));
        EXPECT_LT(max_abs_diff(fd, path_at(x0, x1, t, {}).target), 1e-3);
    }
}

TEST(Path, SampleDrawsStandardNormalBase) {
    Rng rng(4, 0);
    auto p = sample_path(Tensor64::zeros({20000, 1}), 0.0, rng, {0.0});
    double m = 0, v = 0;
    for (double e : p.xt.to_vector()) m += e, v += e * e;
    EXPECT_NEAR(m / 20000, 0.0, 0.03);
    EXPECT_NEAR(v / 20000, 1.0, 0.03);
}

TEST(CfmLoss, OracleStubGivesZeroAndOffsetGivesSquare) {
    Rng rng(5, 0);
    std::vector<Tensor64> clean, dist;
    for (int i = 0; i < 4; ++i) {
        clean.push_back(seeded_normal<double>(rng, {6, 3}));
        dist.push_back(seeded_normal<double>(rng, {6, 3}));
    }
    const FlowPathConfig cfg;
    const double s = 1 - cfg.sigma_min;
    std::size_t call = 0;
    // Recovers x0 from x_t given the known x1, then returns the exact target.
    auto oracle = [&](double c) {
        return VelocityFn<double>([&, c](const Tensor64& in, double t) {
            const auto& x1 = clean[call++ % clean.size()];
            auto x0 = scale(sub(state_of(in), scale(x1, t)), 1.0 / (1 - s * t));
            return add_scalar(sub(x1, scale(x0, s)), c);
        });
    };
    Rng r1(6, 0);
    EXPECT_LT(std::abs(cfm_loss(oracle(0.0), clean, dist, r1, cfg).item()), 1e-6);
    call = 0;
    Rng r2(6, 0);
    EXPECT_NEAR(cfm_loss(oracle(0.7), clean, dist, r2, cfg).item(), 0.49, 1e-6);
}

TEST(CfmLoss, ShapeMismatchIsContractError) {
    VelocityFn<double> v = [](const Tensor64& in, double) { return state_of(in); };
    Rng rng(7, 0);
    EXPECT_THROW(cfm_loss(v, {Tensor64::zeros({3, 2})}, {Tensor64::zeros({4, 2})}, rng, {}), ContractError);
}

TEST(CfmLoss, SmokeTrainingHalvesLoss) {
    UditConfig c;
    c.latent_dim = 4;
    c.layers = 2;
    c.embed_dim = 32;
    c.heads = 2;
    c.max_len = 16;
    c.time_freq_dim = 16;
    Udit model(c, 1);
    Rng data(8, 0);
    std::vector<Tensor> clean, dist;
    for (int i = 0; i < 4; ++i) {
        clean.push_back(seeded_normal<float>(data, {8, 4}));
        dist.push_back(add(clean.back(), scale(seeded_normal<float>(data, {8, 4}), 0.1f)));
    }
    auto v = velocity_of(model);
    auto eval = [&] {
        NoGradGuard guard;
        Rng fixed(99, 0);
        double total = 0;
        for (int r = 0; r < 8; ++r) total += cfm_loss(v, clean, dist, fixed, {}).item();
        return total / 8;
    };
    const double initial = eval();
    AdamW<float> opt({.lr = 2e-3});
    Rng rng(9, 0);
    for (int step = 0; step < 300; ++step) {
        model.params().zero_grad();
        cfm_loss(v, clean, dist, rng, {}).backward();
        opt.step(model.params());
    }
    EXPECT_LT(eval(), 0.5 * initial);
}

TEST(Ode, ZeroFieldReturnsInitialNoise) {
    VelocityFn<double> v = [](const Tensor64& in, double) { return scale(state_of(in), 0.0); };
    Rng a(10, 0), b(10, 0);
    auto z = Tensor64::zeros({5, 3});
    auto x = ode_solve(v, z, a, SolverConfig{});
    EXPECT_EQ(x.to_vector(), seeded_normal<double>(b, {5, 3}).to_vector());
}

TEST(Ode, ConstantFieldIsExactForAnyStepCount) {
    VelocityFn<double> v = [](const Tensor64& in, double) { return Tensor64::full({in.rows(), in.cols() / 2}, 0.3); };
    Rng rng(11, 0);
    auto x0 = seeded_normal<double>(rng, {4, 2});
    for (auto scheme : {OdeScheme::kEuler, OdeScheme::kMidpoint}) {
        for (std::int64_t n : {1, 7, 50}) {
            auto x = ode_integrate(v, x0, Tensor64::zeros({4, 2}), SolverConfig{n, scheme});
            EXPECT_LT(max_abs_diff(x, add_scalar(x0, 0.3)), 1e-12);
        }
    }
}

TEST(Ode, ConvergenceOrders) {
    EXPECT_NEAR(convergence_slope(OdeScheme::kEuler), 1.0, 0.1);
    EXPECT_NEAR(convergence_slope(OdeScheme::kMidpoint), 2.0, 0.1);
}

TEST(Ode, NonFiniteStateNamesStep) {
    VelocityFn<double> v = [](const Tensor64& in, double t) {
        return t > 0.25 ? Tensor64::full({in.rows(), in.cols() / 2}, NAN) : state_of(in);
    };
    Rng rng(12, 0);
    try {
        ode_solve(v, Tensor64::zeros({2, 2}), rng, SolverConfig{10, OdeScheme::kEuler});
        FAIL() << "expected SolverError";
    } catch (const SolverError& e) {
        EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
    }
}

TEST(Ode, StepsMustBePositive) {
    VelocityFn<double> v = [](const Tensor64& in, double) { return state_of(in); };
    EXPECT_THROW(ode_integrate(v, Tensor64::zeros({1, 1}), Tensor64::zeros({1, 1}), SolverConfig{0}), ConfigError);
}

namespace {

CompressorConfig tiny_compressor() {
    CompressorConfig c;
    c.latent_dim = 4;
    c.blocks = 1;
    c.embed_dim = 4;
    c.lstm_hidden = 4;
    c.attn_heads = 1;
    c.attn_qk_dim = 2;
    return c;
}

UditConfig tiny_udit() {
    UditConfig c;
    c.latent_dim = 4;
    c.layers = 2;
    c.embed_dim = 16;
    c.heads = 2;
    c.max_len = 32;
    c.time_freq_dim = 8;
    return c;
}

}  // namespace

TEST(Enhance, LengthPreservedAndDeterministic) {
    Compressor comp(tiny_compressor(), 1);
    Udit model(tiny_udit(), 2);
    Rng rng(13, 0);
    for (std::int64_t n : {1000, 1601, 2400}) {
        auto x = scale(seeded_normal<float>(rng, {1, n}), 0.1f);
        Rng a(14, 0), b(14, 0);
        auto y1 = enhance(x, comp, model, SolverConfig{4}, a);
        auto y2 = enhance(x, comp, model, SolverConfig{4}, b);
        EXPECT_EQ(y1.shape(), (Shape{1, n}));
        EXPECT_EQ(y1.to_vector(), y2.to_vector());
    }
}

TEST(Enhance, LatentWidthMismatchIsContractError) {
    Compressor comp(tiny_compressor(), 1);
    auto uc = tiny_udit();
    uc.latent_dim = 8;
    Udit model(uc, 2);
    Rng rng(15, 0);
    EXPECT_THROW(enhance(Tensor::zeros({1, 800}), comp, model, SolverConfig{2}, rng), ContractError);
}
