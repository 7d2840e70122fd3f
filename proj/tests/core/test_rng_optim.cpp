// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "latflow/core/checkpoint.hpp"
#include "latflow/core/ops.hpp"
#include "latflow/core/optim.hpp"
#include "latflow/core/rng.hpp"

using namespace latflow;

TEST(Philox, KnownAnswerVectors) {
    // Random123 reference vectors for philox4x32-10.
    auto zero = philox4x32_10({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(zero, (std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
    auto ones = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    EXPECT_EQ(ones, (std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(SeededNormal, SameSeedIsBitwiseIdentical) {
    auto a = seeded_normal<float>(RngState{42, 7}, {16, 8});
    auto b = seeded_normal<float>(RngState{42, 7}, {16, 8});
    EXPECT_EQ(a.to_vector(), b.to_vector());
}

TEST(SeededNormal, StreamsDiffer) {
    auto a = seeded_normal<float>(RngState{42, 0}, {4, 4});
    auto b = seeded_normal<float>(RngState{42, 1}, {4, 4});
    EXPECT_NE(a.to_vector(), b.to_vector());
}

TEST(SeededNormal, MomentsOfOneHundredThousandDraws) {
    auto x = seeded_normal<double>(RngState{2026, 3}, {100000, 1});
    double m = 0, v = 0;
    for (double e : x.data()) m += e;
    m /= 1e5;
    for (double e : x.data()) v += (e - m) * (e - m);
    v /= 1e5;
    EXPECT_LT(std::abs(m), 0.02);
    EXPECT_LT(std::abs(v - 1.0), 0.02);
}

TEST(Rng, ForkIsIndependentOfParentPosition) {
    Rng a(5, 1);
    auto f1 = a.fork(3).uniform();
    a.uniform();
    a.uniform();
    EXPECT_EQ(a.fork(3).uniform(), f1);
    EXPECT_NE(a.fork(4).uniform(), f1);
}

TEST(Rng, BelowStaysInRange) {
    Rng r(9, 9);
    for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
    EXPECT_THROW(r.below(0), ContractError);
}

namespace {

ParamSet<double> scalar_param(double value, double grad) {
    ParamSet<double> ps;
    auto p = ps.add("w", Tensor64::scalar(value));
    p.mutable_grad()[0] = grad;
    return ps;
}

}  // namespace

TEST(AdamW, ZeroGradZeroDecayLeavesParameter) {
    auto ps = scalar_param(1.5, 0.0);
    AdamW<double> opt({.lr = 0.1, .weight_decay = 0.0});
    opt.step(ps);
    EXPECT_EQ(ps.get("w").item(), 1.5);
}

TEST(AdamW, OneStepMatchesHandEvaluation) {
    // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1 → p = 1 − 0.1·1/(1 + 1e-8)
    auto ps = scalar_param(1.0, 1.0);
    AdamW<double> opt({.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.0});
    opt.step(ps);
    const double m = 0.1, v = 0.001;
    const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
    const double expected = 1.0 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    EXPECT_NEAR(ps.get("w").item(), expected, 1e-12);
    EXPECT_EQ(opt.state().step, 1);
}

TEST(AdamW, DecayOnlyShrinksByLrTimesWd) {
    auto ps = scalar_param(2.0, 0.0);
    AdamW<double> opt({.lr = 0.1, .weight_decay = 0.01});
    opt.step(ps);
    EXPECT_NEAR(ps.get("w").item(), 2.0 - 0.1 * 0.01 * 2.0, 1e-15);
    // Decay never leaks into the moments.
    EXPECT_EQ(opt.state().first_moment.at("w")[0], 0.0f);
    EXPECT_EQ(opt.state().second_moment.at("w")[0], 0.0f);
}

TEST(AdamW, NanGradientNamesParameter) {
    auto ps = scalar_param(1.0, std::nan(""));
    AdamW<double> opt;
    try {
        opt.step(ps);
        FAIL() << "expected OptimizerError";
    } catch (const OptimizerError& e) {
        EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
    }
    EXPECT_EQ(ps.get("w").item(), 1.0);
}

TEST(AdamW, FrozenParameterNeverWritten) {
    ParamSet<float> ps;
    auto w = ps.add("w", Tensor::full({2, 2}, 1.0f), false);
    w.mutable_grad()[0] = 5.0f;
    AdamW<float> opt({.lr = 1.0, .weight_decay = 0.1});
    opt.step(ps);
    EXPECT_EQ(ps.get("w").to_vector(), std::vector<float>(4, 1.0f));
}

TEST(Checkpoint, RoundTripPreservesTensorsAndMeta) {
    ParamSet<float> ps;
    Rng rng(1, 1);
    ps.add("a/weight", seeded_normal<float>(rng, {3, 2}));
    ps.add("b", seeded_normal<float>(rng, {1, 5}));
    Checkpoint ckpt;
    ckpt.model_type = "udit";
    ckpt.meta["config"] = {{"layers", 2}};
    add_params(ckpt, ps);
    const auto path = std::filesystem::temp_directory_path() / "latflow_ckpt_test.bin";
    save_checkpoint(path, ckpt);
    auto loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.model_type, "udit");
    EXPECT_EQ(loaded.meta["config"]["layers"], 2);
    ParamSet<float> other;
    other.add("a/weight", Tensor::zeros({3, 2}));
    other.add("b", Tensor::zeros({1, 5}));
    other.load_values(loaded.tensors_with_prefix(""), true);
    EXPECT_EQ(other.get("a/weight").to_vector(), ps.get("a/weight").to_vector());
    EXPECT_EQ(other.get("b").to_vector(), ps.get("b").to_vector());
    std::filesystem::remove(path);
}

TEST(Checkpoint, ShapeMismatchRejected) {
    Checkpoint ckpt;
    ckpt.add("w", {2, 2}, {1, 2, 3, 4});
    ParamSet<float> ps;
    ps.add("w", Tensor::zeros({4, 1}));
    EXPECT_THROW(ps.load_values(ckpt.tensors_with_prefix(""), true), IoError);
}
