// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "gradcheck.hpp"
#include "latflow/models/udit.hpp"

using namespace latflow;
using latflow::testing::gradcheck;

namespace {

UditConfig tiny() {
    UditConfig c;
    c.latent_dim = 4;
    c.layers = 2;
    c.embed_dim = 16;
    c.heads = 2;
    c.max_len = 8;
    c.time_freq_dim = 8;
    return c;
}

// Overwrites every parameter (zero-initialised ones included) with N(0, s²).
template <typename T>
void randomize(ParamSet<T>& ps, std::uint64_t seed, double s = 0.3) {
    Rng rng(seed, 5);
    for (auto& p : ps.entries()) {
        for (auto& v : p.value.mutable_data()) v = static_cast<T>(s * rng.normal());
    }
}

std::vector<Tensor64> all_leaves(ParamSet<double>& ps) {
    std::vector<Tensor64> out;
    for (auto& p : ps.entries()) out.push_back(p.value);
    return out;
}

Tensor64 contract(const Tensor64& y, std::uint64_t seed) {
    Rng rng(seed, 77);
    return sum(mul(y, seeded_normal<double>(rng, y.shape())));
}

}  // namespace

TEST(TimeEmbed, DeterministicAndTimeDependent) {
    Udit m(tiny(), 1);
    EXPECT_EQ(m.time_embed(0.0f).to_vector(), m.time_embed(0.0f).to_vector());
    EXPECT_NE(m.time_embed(0.0f).to_vector(), m.time_embed(1.0f).to_vector());
    EXPECT_EQ(m.time_embed(0.0f).shape(), (Shape{1, 16}));
}

TEST(TimeEmbed, OutOfRangeIsContractError) {
    Udit m(tiny(), 1);
    EXPECT_THROW(m.time_embed(-0.01f), ContractError);
    EXPECT_THROW(m.time_embed(1.01f), ContractError);
}

TEST(TimeEmbed, ProjectionGradients) {
    UditT<double> m(tiny(), 2);
    std::vector<Tensor64> leaves;
    for (auto& p : m.params().entries()) {
        if (p.name.rfind("time.", 0) == 0) leaves.push_back(p.value);
    }
    ASSERT_EQ(leaves.size(), 4u);
    for (double t : {0.0, 0.37, 1.0}) {
        auto r = gradcheck(leaves, [&] { return contract(m.time_embed(t), 3); });
        EXPECT_LT(r.max_rel_error, 1e-4) << "t = " << t;
    }
}

TEST(DitBlock, ZeroGatesGiveIdentity) {
    Udit m(tiny(), 3);
    Rng rng(4, 0);
    auto x = seeded_normal<float>(rng, {5, 16});
    auto cond = silu(m.time_embed(0.5f));
    EXPECT_EQ(m.blocks()[0](x, cond, nullptr).to_vector(), x.to_vector());
}

TEST(DitBlock, ShapePreservedForAnyLength) {
    Udit m(tiny(), 3);
    randomize(m.params(), 1);
    auto cond = silu(m.time_embed(0.2f));
    Rng rng(5, 0);
    for (std::int64_t len : {1, 3, 8, 13}) {
        auto y = m.blocks()[1](seeded_normal<float>(rng, {len, 16}), cond, nullptr);
        EXPECT_EQ(y.shape(), (Shape{len, 16}));
    }
}

TEST(DitBlock, FullBlockGradient) {
    for (int p = 0; p < 3; ++p) {
        UditT<double> m(tiny(), 10 + p);
        randomize(m.params(), 20 + p);
        Rng rng(p, 6);
        auto x = seeded_normal<double>(rng, {5, 16});
        x.set_requires_grad(true);
        std::vector<Tensor64> leaves{x};
        for (auto& e : m.params().entries()) {
            if (e.name.rfind("block0.", 0) == 0) leaves.push_back(e.value);
        }
        auto cond = silu(m.time_embed(0.4)).detach();
        auto r = gradcheck(leaves, [&] { return contract(m.blocks()[0](x, cond, nullptr), p); });
        EXPECT_LT(r.max_rel_error, 1e-4) << "leaf " << r.worst_leaf;
    }
}

TEST(Udit, EndToEndGradientTinyConfig) {
    for (int p = 0; p < 3; ++p) {
        UditT<double> m(tiny(), 30 + p);
        randomize(m.params(), 40 + p);
        Rng rng(p, 7);
        auto in = seeded_normal<double>(rng, {6, 8});
        in.set_requires_grad(true);
        auto leaves = all_leaves(m.params());
        leaves.push_back(in);
        auto r = gradcheck(leaves, [&] { return contract(m.forward(in, 0.3 + 0.2 * p), p); });
        EXPECT_LT(r.max_rel_error, 1e-4) << "leaf " << r.worst_leaf;
    }
}

TEST(Udit, OutputShapeAndZeroInitialField) {
    Udit m(tiny(), 5);
    Rng rng(8, 0);
    for (std::int64_t len : {1, 7, 8, 20}) {
        auto v = m.forward(seeded_normal<float>(rng, {len, 8}), 0.5f);
        EXPECT_EQ(v.shape(), (Shape{len, 4}));
        for (float e : v.to_vector()) EXPECT_EQ(e, 0.0f);
    }
}

TEST(Udit, DeterministicForward) {
    Udit m(tiny(), 6);
    randomize(m.params(), 2);
    Rng rng(9, 0);
    auto in = seeded_normal<float>(rng, {7, 8});
    EXPECT_EQ(m.forward(in, 0.25f).to_vector(), m.forward(in, 0.25f).to_vector());
}

TEST(Udit, SkipsAreLive) {
    Udit m(tiny(), 7);
    randomize(m.params(), 3);
    Rng rng(10, 0);
    auto in = seeded_normal<float>(rng, {6, 8});
    auto with = m.forward(in, 0.5f).to_vector();
    m.set_skip_fusion(false);
    auto without = m.forward(in, 0.5f).to_vector();
    double diff = 0;
    for (std::size_t i = 0; i < with.size(); ++i) diff = std::max(diff, double(std::abs(with[i] - without[i])));
    EXPECT_GT(diff, 1e-3);
}

TEST(Udit, SkipPairsMirrorDepth) {
    UditConfig c;
    auto pairs = c.skip_pairs();
    ASSERT_EQ(pairs.size(), 6u);
    for (auto [s, d] : pairs) EXPECT_EQ(s + d, 11);
    c.layers = 5;
    EXPECT_EQ(c.skip_pairs().size(), 2u);  // middle block has no partner
}

TEST(Udit, WrongChannelCountIsDimensionError) {
    Udit m(tiny(), 8);
    EXPECT_THROW(m.forward(Tensor::zeros({3, 4}), 0.5f), DimensionError);
}

TEST(Udit, ConfigValidation) {
    auto c = tiny();
    c.heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(udit_config_from_json({{"layerz", 3}}), ConfigError);
    EXPECT_EQ(udit_config_from_json(to_json(tiny())).embed_dim, 16);
}

TEST(Udit, CheckpointRoundTrip) {
    Udit m(tiny(), 9);
    randomize(m.params(), 4);
    const auto path = std::filesystem::temp_directory_path() / "latflow_udit_test.ckpt";
    save_udit(path, m);
    auto loaded = load_udit(path);
    Rng rng(11, 0);
    auto in = seeded_normal<float>(rng, {5, 8});
    EXPECT_EQ(loaded.forward(in, 0.7f).to_vector(), m.forward(in, 0.7f).to_vector());
    std::filesystem::remove(path);
}
