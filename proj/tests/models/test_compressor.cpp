// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "latflow/models/compressor.hpp"
#include "latflow/signal/loss.hpp"

using namespace latflow;
using latflow::testing::gradcheck;

namespace {

CompressorConfig tiny() {
    CompressorConfig c;
    c.window_len = 32;
    c.hop = 16;
    c.fft_size = 32;
    c.latent_dim = 6;
    c.blocks = 1;
    c.embed_dim = 4;
    c.lstm_hidden = 3;
    c.attn_heads = 2;
    c.attn_qk_dim = 2;
    return c;
}

CompressorConfig desk_like() {
    CompressorConfig c;
    c.latent_dim = 16;
    c.blocks = 1;
    c.embed_dim = 8;
    c.lstm_hidden = 8;
    c.attn_heads = 2;
    c.attn_qk_dim = 2;
    return c;
}

}  // namespace

TEST(Compressor, OneSecondGivesFiftyFrames) {
    Compressor m(desk_like(), 1);
    auto g = m.encode(seeded_normal<float>(RngState{1, 1}, {1, 8000}));
    EXPECT_EQ(g.mu.shape(), (Shape{50, 16}));
    EXPECT_EQ(g.sigma.shape(), (Shape{50, 16}));
    EXPECT_DOUBLE_EQ(m.config().latent_rate(), 50.0);
}

TEST(Compressor, DoublingLengthDoublesFrames) {
    Compressor m(tiny(), 2);
    for (std::int64_t n : {16, 80, 96}) {
        auto a = m.encode(Tensor::zeros({1, n}));
        auto b = m.encode(Tensor::zeros({1, 2 * n}));
        EXPECT_EQ(b.mu.rows(), 2 * a.mu.rows());
    }
    EXPECT_EQ(m.encode(Tensor::zeros({1, 17})).mu.rows(), 2);  // padded to a hop multiple
}

TEST(Compressor, ZeroHeadsGiveZeroMeanAndZeroWave) {
    auto cfg = tiny();
    cfg.zero_init_heads = true;
    Compressor m(cfg, 3);
    auto g = m.encode(Tensor::zeros({1, 64}));
    for (float v : g.mu.data()) EXPECT_EQ(v, 0.0f);
    for (float s : g.sigma.data()) EXPECT_GT(s, 0.0f);
    auto y = m.decode(Tensor::zeros({4, cfg.latent_dim}), 64);
    for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Compressor, DecodeHonoursRequestedLength) {
    Compressor m(tiny(), 4);
    auto z = seeded_normal<float>(RngState{4, 0}, {5, 6});
    for (std::int64_t n : {65, 70, 80}) EXPECT_EQ(m.decode(z, n).cols(), n);
    EXPECT_THROW(m.decode(z, 64), ContractError);
}

TEST(Compressor, EncoderIsDeterministic) {
    Compressor a(tiny(), 5), b(tiny(), 5);
    auto x = seeded_normal<float>(RngState{5, 5}, {1, 100});
    EXPECT_EQ(a.encode(x).mu.to_vector(), b.encode(x).mu.to_vector());
}

TEST(Reparameterize, ZeroSigmaReturnsMean) {
    LatentGaussianT<double> g{seeded_normal<double>(RngState{6, 0}, {3, 4}), Tensor64::zeros({3, 4})};
    Rng rng(1, 2);
    EXPECT_EQ(reparameterize(g, rng).to_vector(), g.mu.to_vector());
}

TEST(Reparameterize, FixedSeedIsReproducible) {
    LatentGaussianT<float> g{Tensor::zeros({2, 3}), Tensor::full({2, 3}, 1.0f)};
    Rng a(9, 9), b(9, 9);
    EXPECT_EQ(reparameterize(g, a).to_vector(), reparameterize(g, b).to_vector());
}

TEST(Reparameterize, MonteCarloMoments) {
    const double mu = 0.7, sigma = 1.3;
    const int n = 10000;
    LatentGaussianT<double> g{Tensor64::full({n, 1}, mu), Tensor64::full({n, 1}, sigma)};
    Rng rng(11, 0);
    auto z = reparameterize(g, rng);
    double m = 0, v = 0;
    for (double e : z.data()) m += e;
    m /= n;
    for (double e : z.data()) v += (e - m) * (e - m);
    v /= (n - 1);
    const double s2 = sigma * sigma;
    EXPECT_LT(std::abs(m - mu), 3 * sigma / std::sqrt(n));
    EXPECT_LT(std::abs(v - s2), 3 * s2 * std::sqrt(2.0 / (n - 1)));
}

TEST(Reparameterize, GradientReachesMeanAndScale) {
    auto mu = Tensor64::zeros({2, 2}), sigma = Tensor64::full({2, 2}, 0.5);
    mu.set_requires_grad(true);
    sigma.set_requires_grad(true);
    Rng rng(3, 3);
    sum(reparameterize(LatentGaussianT<double>{mu, sigma}, rng)).backward();
    for (double g : mu.grad()) EXPECT_EQ(g, 1.0);
    EXPECT_TRUE(sigma.has_grad());
}

TEST(Kl, StandardNormalIsZero) {
    LatentGaussianT<double> g{Tensor64::zeros({4, 3}), Tensor64::full({4, 3}, 1.0)};
    EXPECT_NEAR(kl_divergence(g).item(), 0.0, 1e-15);
}

TEST(Kl, UnitShiftIsHalf) {
    LatentGaussianT<double> g{Tensor64::full({1, 1}, 1.0), Tensor64::full({1, 1}, 1.0)};
    EXPECT_NEAR(kl_divergence(g).item(), 0.5, 1e-15);
}

TEST(Kl, ClosedFormMatchesMonteCarlo) {
    // E_q[log q(z) − log p(z)] from 10⁵ draws, for 10 random 8-dim gaussians.
    Rng rng(21, 0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> mu(8), sd(8);
        for (int i = 0; i < 8; ++i) {
            mu[i] = rng.normal();
            sd[i] = rng.uniform(0.3, 2.0);
        }
        LatentGaussianT<double> g{Tensor64::from_data({1, 8}, mu), Tensor64::from_data({1, 8}, sd)};
        const double closed = kl_divergence(g).item();
        double acc = 0;
        const int n = 100000;
        for (int s = 0; s < n; ++s) {
            for (int i = 0; i < 8; ++i) {
                const double e = rng.normal();
                const double z = mu[i] + sd[i] * e;
                acc += -0.5 * e * e - std::log(sd[i]) + 0.5 * z * z;
            }
        }
        EXPECT_NEAR(acc / n, closed, 0.02 * closed) << "trial " << trial;
    }
}

TEST(TfBlock, ShapePreservedAndZeroOutputIsIdentity) {
    auto cfg = tiny();
    ParamSet<float> ps;
    Rng rng(7, 7);
    auto block = TfBlock<float>::make(ps, rng, "b", cfg, nn::Init::kZero);
    auto h = seeded_normal<float>(RngState{7, 1}, {5 * 17, cfg.embed_dim});
    auto y = block(h, 5, 17);
    EXPECT_EQ(y.shape(), h.shape());
    EXPECT_EQ(y.to_vector(), h.to_vector());
    auto live = TfBlock<float>::make(ps, rng, "c", cfg);
    auto y2 = live(h, 5, 17);
    EXPECT_EQ(y2.shape(), h.shape());
    EXPECT_NE(y2.to_vector(), h.to_vector());
}

// Smallest |x| fed to any PReLU of the attention sub-module. Central
// differences straddling the kink are meaningless, so such points are redrawn.
double prelu_margin(const TfBlock<double>& b, const Tensor64& h_in, std::int64_t frames, std::int64_t bins) {
    NoGradGuard guard;
    auto h = add(h_in, b.freq.proj(b.freq.rnn(b.freq.norm(h_in), bins, frames, SequenceLayout::kBatchMajor)));
    h = add(h, b.time.proj(b.time.rnn(b.time.norm(h), frames, bins, SequenceLayout::kStepMajor)));
    auto a = b.attn_norm(h);
    double m = 1e9;
    for (const auto& t : {b.q(a), b.k(a), b.v(a)})
        for (double v : t.data()) m = std::min(m, std::abs(v));
    return m;
}

TEST(TfBlock, GradientCheck) {
    auto cfg = tiny();
    int accepted = 0;
    for (int p = 0; accepted < 5 && p < 50; ++p) {
        ParamSet<double> ps;
        Rng rng(30 + p, 1);
        auto block = TfBlock<double>::make(ps, rng, "b", cfg);
        // Give the zero-initialised biases some value so every path is exercised.
        for (auto& e : ps.entries()) {
            auto d = e.value.mutable_data();
            for (auto& v : d) v += 0.1 * rng.normal();
        }
        auto h = seeded_normal<double>(rng, {3 * 4, cfg.embed_dim}).detach();
        if (prelu_margin(block, h, 3, 4) < 1e-3) continue;
        ++accepted;
        h.set_requires_grad(true);
        std::vector<Tensor64> leaves{h};
        for (auto& e : ps.entries()) leaves.push_back(e.value);
        auto w = seeded_normal<double>(rng, {3 * 4, cfg.embed_dim});
        auto r = gradcheck(leaves, [&] { return sum(mul(block(h, 3, 4), w)); });
        EXPECT_LT(r.max_rel_error, 1e-4) << "leaf " << r.worst_leaf;
    }
    EXPECT_EQ(accepted, 5);
}

TEST(GradCheck, CompressorEndToEnd) {
    auto cfg = tiny();
    CompressorT<double> m(cfg, 8);
    auto x = seeded_normal<double>(RngState{8, 8}, {1, 48}).detach();
    x.set_requires_grad(true);
    std::vector<Tensor64> leaves{x, m.params().get("enc.conv.weight"), m.params().get("enc.proj.weight"),
                                 m.params().get("dec.proj.weight"), m.params().get("dec.conv.weight")};
    auto w = seeded_normal<double>(RngState{8, 9}, {1, 48});
    auto r = gradcheck(leaves, [&] { return sum(mul(m.decode(m.encode(x).mu, 48), w)); });
    EXPECT_LT(r.max_rel_error, 1e-4) << "leaf " << r.worst_leaf;
}

TEST(VaeLoss, PartsAddUp) {
    Compressor m(tiny(), 10);
    std::vector<Tensor> clips{seeded_normal<float>(RngState{1, 0}, {1, 64}), seeded_normal<float>(RngState{2, 0}, {1, 64})};
    Rng rng(1, 1);
    auto l = vae_loss(m, clips, rng);
    EXPECT_NEAR(l.total.item(), l.recon + 1e-4 * l.kl, 1e-6 * std::max(1.0, l.recon));
}

TEST(VaeLoss, ZeroKlWeightIsReconstructionOnly) {
    // With zero-noise scales the decoder sees exactly the mean, so the total
    // equals the multi-resolution loss of decode(mu).
    auto cfg = tiny();
    cfg.kl_weight = 0.0;
    Compressor m(cfg, 11);
    auto x = seeded_normal<float>(RngState{3, 0}, {1, 64});
    Rng rng(2, 2);
    auto l = vae_loss(m, {x}, rng);
    EXPECT_FLOAT_EQ(l.total.item(), static_cast<float>(l.recon));
}

TEST(Compressor, CheckpointRoundTrip) {
    Compressor m(tiny(), 12);
    const auto path = std::filesystem::temp_directory_path() / "latflow_vae.ckpt";
    save_compressor(path, m);
    auto m2 = load_compressor(path);
    auto x = seeded_normal<float>(RngState{4, 0}, {1, 64});
    EXPECT_EQ(m.encode(x).mu.to_vector(), m2.encode(x).mu.to_vector());
    EXPECT_THROW(compressor_config_from_json({{"latent_dims", 3}}), ConfigError);
}
