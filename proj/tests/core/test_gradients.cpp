// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Every differentiable op against central finite differences, 5 random points.

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "latflow/core/ops.hpp"
#include "latflow/core/rng.hpp"

using namespace latflow;
using latflow::testing::gradcheck;

namespace {

constexpr double kTol = 1e-4;
constexpr int kPoints = 5;

Tensor64 leaf(Rng& rng, const Shape& s, double scale_by = 1.0) {
    auto t = scale(seeded_normal<double>(rng, s), scale_by).detach();
    t.set_requires_grad(true);
    return t;
}

// Contract an arbitrary-shaped output with a fixed random weight so every
// output element contributes to the scalar.
Tensor64 contract(const Tensor64& y, std::uint64_t seed) {
    Rng rng(seed, 99);
    auto w = seeded_normal<double>(rng, y.shape());
    return sum(mul(y, w));
}

using UnaryFn = Tensor64 (*)(const Tensor64&);

void check_unary(UnaryFn fn, double shift = 0.0, double spread = 1.0) {
    for (int p = 0; p < kPoints; ++p) {
        Rng rng(100 + p, 1);
        auto x = leaf(rng, {3, 4}, spread);
        if (shift != 0.0) {
            auto d = x.mutable_data();
            for (auto& v : d) v = std::abs(v) + shift;
        }
        auto r = gradcheck({x}, [&] { return contract(fn(x), p); });
        EXPECT_LT(r.max_rel_error, kTol) << "point " << p;
    }
}

}  // namespace

TEST(GradCheck, Matmul) {
    for (int p = 0; p < kPoints; ++p) {
        Rng rng(p, 2);
        auto a = leaf(rng, {3, 4}), b = leaf(rng, {4, 2}), c = leaf(rng, {5, 4});
        for (bool ta : {false, true}) {
            for (bool tb : {false, true}) {
                auto A = ta ? leaf(rng, {4, 3}) : a;
                auto B = tb ? leaf(rng, {2, 4}) : b;
                auto r = gradcheck({A, B}, [&] { return contract(matmul(A, B, ta, tb), p); });
                EXPECT_LT(r.max_rel_error, kTol);
            }
        }
        auto r = gradcheck({c, b}, [&] { return contract(matmul(c, b), p); });
        EXPECT_LT(r.max_rel_error, kTol);
    }
}

TEST(GradCheck, BroadcastBinaryOps) {
    for (int p = 0; p < kPoints; ++p) {
        Rng rng(p, 3);
        auto a = leaf(rng, {3, 4}), row = leaf(rng, {1, 4}), col = leaf(rng, {3, 1}), s = leaf(rng, {1, 1});
        EXPECT_LT(gradcheck({a, row}, [&] { return contract(add(a, row), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({a, col}, [&] { return contract(sub(col, a), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({a, row}, [&] { return contract(mul(a, row), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({a, s}, [&] { return contract(mul(s, a), p); }).max_rel_error, kTol);
    }
}

TEST(GradCheck, ElementwiseUnary) {
    check_unary([](const Tensor64& x) { return exp(x); });
    check_unary([](const Tensor64& x) { return log(x, 0.0); }, 0.5);
    check_unary([](const Tensor64& x) { return sqrt(x); }, 0.5);
    check_unary([](const Tensor64& x) { return square(x); });
    check_unary([](const Tensor64& x) { return abs(x); }, 0.1);
    check_unary([](const Tensor64& x) { return reciprocal(x); }, 0.5);
    check_unary([](const Tensor64& x) { return tanh(x); });
    check_unary([](const Tensor64& x) { return sigmoid(x); });
    check_unary([](const Tensor64& x) { return silu(x); });
    check_unary([](const Tensor64& x) { return gelu(x); });
    check_unary([](const Tensor64& x) { return softplus(x); });
    check_unary([](const Tensor64& x) { return scale(x, -2.5); });
    check_unary([](const Tensor64& x) { return add_scalar(x, 0.3); });
}

TEST(GradCheck, Prelu) {
    for (int p = 0; p < kPoints; ++p) {
        Rng rng(p, 4);
        auto x = leaf(rng, {4, 3});
        auto slope = leaf(rng, {1, 1}, 0.3);
        EXPECT_LT(gradcheck({x, slope}, [&] { return contract(prelu(x, slope), p); }).max_rel_error, kTol);
    }
}

TEST(GradCheck, Reductions) {
    for (int p = 0; p < kPoints; ++p) {
        Rng rng(p, 5);
        auto x = leaf(rng, {3, 5});
        EXPECT_LT(gradcheck({x}, [&] { return contract(sum_rows(x), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({x}, [&] { return contract(sum_cols(x), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({x}, [&] { return square(mean(x)); }).max_rel_error, kTol);
    }
}

TEST(GradCheck, SoftmaxBothAxes) {
    for (int p = 0; p < kPoints; ++p) {
        Rng rng(p, 6);
        auto x = leaf(rng, {3, 5}, 2.0);
        EXPECT_LT(gradcheck({x}, [&] { return contract(softmax(x, 1), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({x}, [&] { return contract(softmax(x, 0), p); }).max_rel_error, kTol);
    }
}

TEST(GradCheck, LayerNormWithAffine) {
    for (int p = 0; p < kPoints; ++p) {
        Rng rng(p, 7);
        auto x = leaf(rng, {4, 6}, 2.0), g = leaf(rng, {1, 6}), b = leaf(rng, {1, 6});
        EXPECT_LT(gradcheck({x, g, b}, [&] { return contract(layer_norm(x, g, b, 1e-5), p); }).max_rel_error,
                  kTol);
        EXPECT_LT(gradcheck({x}, [&] { return contract(layer_norm(x, Tensor64(), Tensor64(), 1e-5), p); })
                      .max_rel_error,
                  kTol);
    }
}

TEST(GradCheck, ShapeOps) {
    for (int p = 0; p < kPoints; ++p) {
        Rng rng(p, 8);
        auto a = leaf(rng, {3, 4}), b = leaf(rng, {3, 2}), c = leaf(rng, {2, 4});
        EXPECT_LT(gradcheck({a}, [&] { return contract(reshape(a, {6, 2}), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({a}, [&] { return contract(transpose(a), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({a, b}, [&] { return contract(concat_cols<double>({a, b}), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({a, c}, [&] { return contract(concat_rows<double>({a, c}), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({a}, [&] { return contract(slice_cols(a, 1, 2), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({a}, [&] { return contract(slice_rows(a, 1, 2), p); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({a}, [&] { return contract(gather_rows(a, {2, -1, 0, 2, 1, 1}, 3), p); }).max_rel_error,
                  kTol);
        EXPECT_LT(gradcheck({a, c}, [&] { return mse(slice_rows(a, 0, 2), c); }).max_rel_error, kTol);
        EXPECT_LT(gradcheck({a}, [&] { return l2_norm(a); }).max_rel_error, kTol);
    }
}

TEST(GradCheck, Attention) {
    for (int p = 0; p < kPoints; ++p) {
        Rng rng(p, 9);
        auto q = leaf(rng, {6, 4}), k = leaf(rng, {6, 4}), v = leaf(rng, {6, 6});
        auto r = gradcheck({q, k, v}, [&] { return contract(attention(q, k, v, 2, 3), p); });
        EXPECT_LT(r.max_rel_error, kTol);
    }
}

TEST(GradCheck, Lstm) {
    for (int p = 0; p < kPoints; ++p) {
        Rng rng(p, 10);
        const std::int64_t steps = 4, batch = 2, in = 3, hid = 2;
        auto x = leaf(rng, {steps * batch, in});
        auto wih = leaf(rng, {4 * hid, in}, 0.7), whh = leaf(rng, {4 * hid, hid}, 0.7), b = leaf(rng, {1, 4 * hid});
        for (auto layout : {SequenceLayout::kStepMajor, SequenceLayout::kBatchMajor}) {
            for (bool rev : {false, true}) {
                auto r = gradcheck({x, wih, whh, b},
                                   [&] { return contract(lstm(x, wih, whh, b, steps, batch, layout, rev), p); });
                EXPECT_LT(r.max_rel_error, kTol) << "leaf " << r.worst_leaf;
            }
        }
    }
}

TEST(GradCheck, ComposedChain) {
    // A small MLP-with-attention chain exercising reuse of intermediate nodes.
    for (int p = 0; p < kPoints; ++p) {
        Rng rng(p, 11);
        auto x = leaf(rng, {4, 3}), w1 = leaf(rng, {5, 3}), b1 = leaf(rng, {1, 5}), w2 = leaf(rng, {2, 5});
        auto r = gradcheck({x, w1, b1, w2}, [&] {
            auto h = gelu(linear(x, w1, b1));
            auto a = attention(h, h, h, 1, 2);
            auto y = linear(add(a, h), w2, Tensor64());
            return mean(square(softmax(y)));
        });
        EXPECT_LT(r.max_rel_error, kTol);
    }
}
