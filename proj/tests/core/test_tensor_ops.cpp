// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "latflow/core/ops.hpp"
#include "latflow/core/rng.hpp"

using namespace latflow;

namespace {

Tensor64 mat(std::int64_t r, std::int64_t c, std::vector<double> v) {
    return Tensor64::from_data({r, c}, std::move(v));
}

}  // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
    auto eye = mat(2, 2, {1, 0, 0, 1});
    auto b = mat(2, 2, {1, 2, 3, 4});
    EXPECT_EQ(matmul(eye, b).to_vector(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, HandArithmetic) {
    auto a = mat(2, 2, {1, 0, 0, 0});
    auto b = mat(2, 1, {5, 7});
    EXPECT_EQ(matmul(a, b).to_vector(), (std::vector<double>{5, 0}));
}

TEST(Matmul, MatchesTripleLoop) {
    Rng rng(11, 0);
    auto a = seeded_normal<float>(rng, {4, 3});
    auto b = seeded_normal<float>(rng, {3, 2});
    auto c = matmul(a, b);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) {
            double ref = 0;
            for (int k = 0; k < 3; ++k) ref += double(a.at(i, k)) * double(b.at(k, j));
            EXPECT_LT(std::abs(c.at(i, j) - ref), 1e-6);
        }
}

TEST(Matmul, TransposeFlagsMatchExplicitTranspose) {
    Rng rng(12, 0);
    auto a = seeded_normal<double>(rng, {3, 4});
    auto b = seeded_normal<double>(rng, {5, 4});
    auto c1 = matmul(a, b, false, true);
    auto c2 = matmul(a, transpose(b));
    for (std::int64_t i = 0; i < c1.numel(); ++i) EXPECT_NEAR(c1.data()[i], c2.data()[i], 1e-12);
    auto d1 = matmul(a, a, true, false);
    auto d2 = matmul(transpose(a), a);
    for (std::int64_t i = 0; i < d1.numel(); ++i) EXPECT_NEAR(d1.data()[i], d2.data()[i], 1e-12);
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
    auto a = mat(2, 3, {1, 2, 3, 4, 5, 6});
    auto b = mat(2, 2, {1, 2, 3, 4});
    EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Softmax, UniformOnEqualInputs) {
    auto y = softmax(mat(1, 3, {0, 0, 0}));
    for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
    auto y = softmax(mat(1, 2, {1000, 0}));
    EXPECT_NEAR(y.data()[0], 1.0, 1e-12);
    EXPECT_NEAR(y.data()[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    Rng rng(3, 1);
    auto x = seeded_normal<float>(rng, {1, 5});
    auto y = softmax(x);
    double s = 0;
    for (float v : y.data()) {
        EXPECT_GE(v, 0.0f);
        s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-7);
    auto shifted = softmax(add_scalar(x, 7.5f));
    for (std::int64_t i = 0; i < 5; ++i) EXPECT_NEAR(shifted.data()[i], y.data()[i], 1e-6);
}

TEST(Softmax, ColumnAxis) {
    auto y = softmax(mat(2, 2, {0, 1, 0, 1}), 0);
    EXPECT_NEAR(y.at(0, 0) + y.at(1, 0), 1.0, 1e-15);
    EXPECT_NEAR(y.at(0, 0), 0.5, 1e-15);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
    auto y = layer_norm(mat(1, 4, {3, 3, 3, 3}), Tensor64(), Tensor64(), 1e-5);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, AlreadyNormalisedRowUnchanged) {
    auto y = layer_norm(mat(1, 2, {1, -1}), Tensor64::full({1, 2}, 1.0), Tensor64::zeros({1, 2}), 1e-12);
    EXPECT_NEAR(y.data()[0], 1.0, 1e-9);
    EXPECT_NEAR(y.data()[1], -1.0, 1e-9);
}

TEST(LayerNorm, RandomRowMoments) {
    Rng rng(5, 0);
    auto x = scale(seeded_normal<float>(rng, {1, 64}), 3.0f);
    auto y = layer_norm(x, Tensor(), Tensor(), 1e-5f);
    double m = 0, v = 0;
    for (float e : y.data()) m += e;
    m /= 64;
    for (float e : y.data()) v += (e - m) * (e - m);
    v /= 64;
    EXPECT_LT(std::abs(m), 1e-6);
    EXPECT_LT(std::abs(v - 1.0), 1e-3);
}

TEST(Backward, SumGivesOnes) {
    auto x = Tensor64::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    x.set_requires_grad(true);
    sum(x).backward();
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareAtThree) {
    auto x = Tensor64::scalar(3.0);
    x.set_requires_grad(true);
    mul(x, x).backward();
    EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossIsContractError) {
    auto x = Tensor64::zeros({2, 2});
    x.set_requires_grad(true);
    EXPECT_THROW(scale(x, 2.0).backward(), ContractError);
}

TEST(Backward, GraphIsSingleUse) {
    auto x = Tensor64::scalar(2.0);
    x.set_requires_grad(true);
    auto loss = square(x);
    loss.backward();
    EXPECT_THROW(loss.backward(), ContractError);
    // A fresh forward differentiates again and accumulates into the leaf.
    square(x).backward();
    EXPECT_EQ(x.grad()[0], 8.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    auto x = Tensor64::scalar(2.0);
    x.set_requires_grad(true);
    NoGradGuard guard;
    auto y = square(x);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Ops, BroadcastRowAndColumnVectors) {
    auto a = mat(2, 3, {1, 2, 3, 4, 5, 6});
    auto row = mat(1, 3, {10, 20, 30});
    auto col = mat(2, 1, {2, 3});
    EXPECT_EQ(add(a, row).to_vector(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
    EXPECT_EQ(mul(a, col).to_vector(), (std::vector<double>{2, 4, 6, 12, 15, 18}));
    EXPECT_THROW(add(a, mat(3, 1, {1, 2, 3})), DimensionError);
}

TEST(Ops, GatherRowsZeroFillsMissing) {
    auto a = mat(2, 2, {1, 2, 3, 4});
    auto g = gather_rows(a, {1, -1, 0, 1}, 2);
    EXPECT_EQ(g.shape(), (Shape{2, 4}));
    EXPECT_EQ(g.to_vector(), (std::vector<double>{3, 4, 0, 0, 1, 2, 3, 4}));
}

TEST(Ops, ReshapeRejectsDifferentCount) {
    EXPECT_THROW(reshape(Tensor64::zeros({2, 3}), {4, 2}), DimensionError);
}

TEST(Ops, AttentionSingleKeyReturnsValue) {
    // With one token per segment, attention returns v exactly.
    auto q = mat(2, 2, {1, 2, 3, 4});
    auto v = mat(2, 2, {5, 6, 7, 8});
    auto o = attention(q, q, v, 1, 1);
    EXPECT_EQ(o.to_vector(), v.to_vector());
}

TEST(Ops, LstmBidirectionalLayoutsAgree) {
    // Same sequences fed step-major and batch-major give the same outputs.
    Rng rng(8, 0);
    const std::int64_t steps = 4, batch = 3, in = 2, hid = 3;
    auto x_sm = seeded_normal<double>(rng, {steps * batch, in});
    std::vector<double> bm(static_cast<std::size_t>(steps * batch * in));
    for (std::int64_t s = 0; s < steps; ++s)
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t j = 0; j < in; ++j) bm[(b * steps + s) * in + j] = x_sm.at(s * batch + b, j);
    auto x_bm = Tensor64::from_data({steps * batch, in}, bm);
    auto wih = seeded_normal<double>(rng, {4 * hid, in});
    auto whh = seeded_normal<double>(rng, {4 * hid, hid});
    auto bias = seeded_normal<double>(rng, {1, 4 * hid});
    for (bool rev : {false, true}) {
        auto h1 = lstm(x_sm, wih, whh, bias, steps, batch, SequenceLayout::kStepMajor, rev);
        auto h2 = lstm(x_bm, wih, whh, bias, steps, batch, SequenceLayout::kBatchMajor, rev);
        for (std::int64_t s = 0; s < steps; ++s)
            for (std::int64_t b = 0; b < batch; ++b)
                for (std::int64_t j = 0; j < hid; ++j) EXPECT_NEAR(h1.at(s * batch + b, j), h2.at(b * steps + s, j), 1e-12);
    }
}
