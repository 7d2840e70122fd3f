// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "latflow/adapters/moelora.hpp"

using namespace latflow;

namespace {

Tensor64 mat(std::int64_t r, std::int64_t c, std::vector<double> v) { return Tensor64::from_data({r, c}, std::move(v)); }

double max_abs_diff(const Tensor64& a, const Tensor64& b) {
    double m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// Randomises every B so the bank produces a non-trivial delta.
void randomize_b(AdapterBankT<double>& bank, Rng& rng) {
    for (auto& e : bank.experts) {
        auto d = e.b.mutable_data();
        for (auto& v : d) v = rng.normal();
    }
}

}  // namespace

TEST(Lora, ZeroBLeavesHostOutput) {
    Rng rng(1, 0);
    auto w0 = seeded_normal<double>(rng, {3, 4});
    LoraExpertT<double> e{seeded_normal<double>(rng, {2, 4}), Tensor64::zeros({3, 2})};
    auto x = seeded_normal<double>(rng, {5, 4});
    EXPECT_EQ(lora_forward(w0, e, x, 2.0).to_vector(), matmul(x, w0, false, true).to_vector());
}

TEST(Lora, HandArithmetic) {
    LoraExpertT<double> e{mat(1, 2, {1, 0}), mat(2, 1, {1, 0})};
    auto h = lora_forward(Tensor64::zeros({2, 2}), e, mat(1, 2, {2, 3}), 1.0);
    EXPECT_EQ(h.to_vector(), (std::vector<double>{2, 0}));
}

TEST(Lora, MergedWeightMatchesUnmergedForward) {
    for (int p = 0; p < 100; ++p) {
        Rng rng(p, 1);
        const std::int64_t d = 2 + p % 5, l = 3 + p % 4, r = 1 + p % 3;
        auto w0 = seeded_normal<double>(rng, {d, l});
        LoraExpertT<double> e{seeded_normal<double>(rng, {r, l}), seeded_normal<double>(rng, {d, r})};
        auto x = seeded_normal<double>(rng, {4, l});
        const double alpha = 0.5 + p % 7;
        auto merged = matmul(x, lora_merge(w0, e, alpha), false, true);
        EXPECT_LT(max_abs_diff(merged, lora_forward(w0, e, x, alpha)), 1e-5);
    }
}

TEST(Lora, DeltaIsLinearInAlpha) {
    Rng rng(3, 0);
    auto w0 = Tensor64::zeros({3, 4});
    LoraExpertT<double> e{seeded_normal<double>(rng, {2, 4}), seeded_normal<double>(rng, {3, 2})};
    auto x = seeded_normal<double>(rng, {2, 4});
    auto one = lora_forward(w0, e, x, 1.0), three = lora_forward(w0, e, x, 3.0);
    EXPECT_LT(max_abs_diff(scale(one, 3.0), three), 1e-12);
}

TEST(Lora, MismatchedFactorsRejected) {
    LoraExpertT<double> e{Tensor64::zeros({2, 5}), Tensor64::zeros({3, 2})};
    EXPECT_THROW(lora_forward(Tensor64::zeros({3, 4}), e, Tensor64::zeros({1, 4}), 1.0), ContractError);
}

TEST(Gate, ZeroRouterIsUniform) {
    RouterT<double> r;
    for (int i = 0; i < 4; ++i) r.rows.push_back(Tensor64::zeros({1, 3}));
    r.noise_mu = Tensor64::zeros({1, 1});
    r.noise_log_sigma = Tensor64::zeros({1, 1});
    Rng rng(4, 0);
    auto g = gate(seeded_normal<double>(rng, {5, 3}), r, static_cast<const RoutingContext<double>*>(nullptr));
    for (double v : g.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Gate, RowsSumToOneAndNoiseIsSeeded) {
    ParamSet<double> ps;
    Rng init(5, 0);
    AdapterConfig cfg;
    auto bank = AdapterBankT<double>::make(ps, init, "b", 6, 4, cfg);
    auto x = seeded_normal<double>(init, {8, 6});
    Rng r1(9, 1), r2(9, 1);
    RoutingContext<double> c1{true, &r1, nullptr}, c2{true, &r2, nullptr};
    auto g1 = gate(x, *bank->router, &c1), g2 = gate(x, *bank->router, &c2);
    EXPECT_EQ(g1.to_vector(), g2.to_vector());
    for (std::int64_t i = 0; i < 8; ++i) {
        double s = 0;
        for (std::int64_t j = 0; j < cfg.num_experts; ++j) s += g1.at(i, j);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    // Variance across draws is positive when σ² > 0.
    double m = 0, m2 = 0;
    Rng r3(10, 0);
    RoutingContext<double> c3{true, &r3, nullptr};
    for (int d = 0; d < 200; ++d) {
        const double v = gate(x, *bank->router, &c3).at(0, 0);
        m += v;
        m2 += v * v;
    }
    m /= 200;
    EXPECT_GT(m2 / 200 - m * m, 1e-6);
}

TEST(TopK, FullKSelectsAllAndK1IsArgmax) {
    std::vector<double> w{0.1, 0.4, 0.2, 0.3};
    auto all = topk_select(w, 4);
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, (std::vector<std::int64_t>{0, 1, 2, 3}));
    EXPECT_EQ(topk_select(w, 1), (std::vector<std::int64_t>{1}));
    EXPECT_EQ(topk_select(w, 2), (std::vector<std::int64_t>{1, 3}));
}

TEST(TopK, TiesGoToLowerIndex) {
    EXPECT_EQ(topk_select({0.25, 0.25, 0.25, 0.25}, 2), (std::vector<std::int64_t>{0, 1}));
}

TEST(TopK, OutOfRangeKRejected) {
    EXPECT_THROW(topk_select({0.5, 0.5}, 0), ContractError);
    EXPECT_THROW(topk_select({0.5, 0.5}, 3), ContractError);
}

TEST(TopK, PermutationConsistent) {
    Rng rng(6, 0);
    std::vector<double> w(7);
    for (auto& v : w) v = rng.uniform();
    std::vector<std::int64_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::vector<double> pw(7);
    for (int i = 0; i < 7; ++i) pw[i] = w[perm[i]];
    auto a = topk_select(w, 3), b = topk_select(pw, 3);
    for (auto& i : b) i = perm[i];
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
}

TEST(MoeLora, SingleExpertTopOneEqualsLora) {
    ParamSet<double> ps;
    Rng rng(7, 0);
    AdapterConfig cfg{.rank = 2, .alpha = 4.0, .num_experts = 1, .top_k = 1};
    auto bank = AdapterBankT<double>::make(ps, rng, "b", 5, 3, cfg);
    randomize_b(*bank, rng);
    auto x = seeded_normal<double>(rng, {4, 5});
    auto lora = lora_delta(x, bank->experts[0], cfg.scaling());
    EXPECT_LT(max_abs_diff(bank->delta(x, nullptr), lora), 1e-12);
}

TEST(MoeLora, AllZeroBGivesZeroDelta) {
    ParamSet<double> ps;
    Rng rng(8, 0);
    auto bank = AdapterBankT<double>::make(ps, rng, "b", 6, 4, AdapterConfig{});
    auto x = seeded_normal<double>(rng, {3, 6});
    const auto d = bank->delta(x, nullptr);
    for (double v : d.data()) EXPECT_EQ(v, 0.0);
}

TEST(MoeLora, DenseRoutingMatchesFullLoop) {
    ParamSet<double> ps;
    Rng rng(9, 0);
    AdapterConfig cfg{.rank = 3, .alpha = 6.0, .num_experts = 4, .top_k = 4};
    auto bank = AdapterBankT<double>::make(ps, rng, "b", 5, 3, cfg);
    randomize_b(*bank, rng);
    auto x = seeded_normal<double>(rng, {6, 5});
    auto got = bank->delta(x, nullptr);
    // Per-row, per-expert loop with explicit gate arithmetic.
    for (std::int64_t n = 0; n < 6; ++n) {
        std::vector<double> logit(4);
        for (int i = 0; i < 4; ++i) {
            double z = 0;
            for (int j = 0; j < 5; ++j) z += bank->router->rows[i].data()[j] * x.at(n, j);
            logit[i] = z + bank->router->noise_mu.item();
        }
        const double mx = *std::max_element(logit.begin(), logit.end());
        double den = 0;
        for (double z : logit) den += std::exp(z - mx);
        for (std::int64_t o = 0; o < 3; ++o) {
            double ref = 0;
            for (int i = 0; i < 4; ++i) {
                const auto& e = bank->experts[i];
                double y = 0;
                for (int q = 0; q < 3; ++q) {
                    double ax = 0;
                    for (int j = 0; j < 5; ++j) ax += e.a.at(q, j) * x.at(n, j);
                    y += e.b.at(o, q) * ax;
                }
                ref += std::exp(logit[i] - mx) / den * 2.0 * y;
            }
            EXPECT_NEAR(got.at(n, o), ref, 1e-6);
        }
    }
}

TEST(MoeLora, TopKDropsUnselectedExperts) {
    ParamSet<double> ps;
    Rng rng(10, 0);
    AdapterConfig cfg{.rank = 2, .alpha = 2.0, .num_experts = 5, .top_k = 2};
    auto bank = AdapterBankT<double>::make(ps, rng, "b", 4, 3, cfg);
    randomize_b(*bank, rng);
    auto x = seeded_normal<double>(rng, {1, 4});
    auto g = gate(x, *bank->router, static_cast<const RoutingContext<double>*>(nullptr));
    auto sel = topk_select(std::vector<double>(g.data().begin(), g.data().end()), 2);
    auto ref = Tensor64::zeros({1, 3});
    for (auto i : sel) ref = add(ref, scale(lora_delta(x, bank->experts[i], 1.0), g.data()[i]));
    EXPECT_LT(max_abs_diff(bank->delta(x, nullptr), ref), 1e-12);
}

TEST(MoeLora, EmptyBankRejected) {
    AdapterBankT<double> bank;
    bank.name = "empty";
    bank.in = 2;
    EXPECT_THROW(bank.delta(Tensor64::zeros({1, 2}), nullptr), ContractError);
}

TEST(MoeLora, GradientsReachFactorsAndRouter) {
    ParamSet<double> ps;
    Rng rng(11, 0);
    AdapterConfig cfg{.rank = 2, .alpha = 2.0, .num_experts = 3, .top_k = 2};
    auto bank = AdapterBankT<double>::make(ps, rng, "b", 4, 3, cfg);
    randomize_b(*bank, rng);
    auto x = seeded_normal<double>(rng, {5, 4});
    std::vector<Tensor64> leaves;
    for (auto& p : ps.entries()) leaves.push_back(p.value);
    // Top-k selection is piecewise constant; a small step keeps the mask fixed.
    auto r = latflow::testing::gradcheck(leaves, [&] { return sum(square(bank->delta(x, nullptr))); }, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-4) << ps.entries()[r.worst_leaf].name;
}

TEST(MoeLora, AddExpertKeepsOutputsAtInference) {
    ParamSet<double> ps;
    Rng rng(12, 0);
    auto bank = AdapterBankT<double>::make(ps, rng, "b", 4, 3, AdapterConfig{.num_experts = 3, .top_k = 3});
    randomize_b(*bank, rng);
    auto x = seeded_normal<double>(rng, {4, 4});
    const auto before = ps.entries().size();
    EXPECT_EQ(bank->add_expert(ps, rng), 3);
    EXPECT_EQ(ps.entries().size(), before + 3);
    EXPECT_EQ(bank->router->experts(), 4);
    EXPECT_TRUE(ps.contains("b.expert3.B"));
    EXPECT_TRUE(ps.contains("b.router.w3"));
    const auto b3 = ps.get("b.expert3.B");
    for (double v : b3.data()) EXPECT_EQ(v, 0.0);
}

TEST(LoadBalance, UniformIsOneAndCollapsedIsN) {
    const std::int64_t n = 10, ne = 4;
    GateRecord<double> uniform{Tensor64::full({n, ne}, 0.25), {5, 5, 5, 5}, n, 2};
    EXPECT_NEAR(load_balance_loss<double>({uniform}).item(), 1.0, 1e-12);
    std::vector<double> w(n * ne, 0.0);
    for (std::int64_t i = 0; i < n; ++i) w[i * ne] = 1.0;
    GateRecord<double> collapsed{Tensor64::from_data({n, ne}, w), {n, 0, 0, 0}, n, 1};
    EXPECT_NEAR(load_balance_loss<double>({collapsed}).item(), double(ne), 1e-12);
}

TEST(LoadBalance, MatchesDoubleLoop) {
    Rng rng(13, 0);
    std::vector<GateRecord<double>> recs;
    double ref = 0;
    for (int r = 0; r < 3; ++r) {
        auto g = softmax(seeded_normal<double>(rng, {6, 5}));
        std::vector<std::int64_t> counts(5, 0);
        for (std::int64_t i = 0; i < 6; ++i) {
            std::vector<double> row(5);
            for (int j = 0; j < 5; ++j) row[j] = g.at(i, j);
            for (auto j : topk_select(row, 2)) ++counts[j];
        }
        double term = 0;
        for (int j = 0; j < 5; ++j) {
            double p = 0;
            for (int i = 0; i < 6; ++i) p += g.at(i, j);
            term += (counts[j] / 12.0) * (p / 6.0);
        }
        ref += 5 * term / 3;
        recs.push_back({g, counts, 6, 2});
    }
    EXPECT_NEAR(load_balance_loss(recs).item(), ref, 1e-12);
}

TEST(AdapterConfig, Validation) {
    EXPECT_THROW((AdapterConfig{.rank = 0}.validate()), ConfigError);
    EXPECT_THROW((AdapterConfig{.num_experts = 3, .top_k = 4}.validate()), ConfigError);
    EXPECT_THROW((AdapterConfig{.num_experts = 2, .use_router = false}.validate()), ConfigError);
    EXPECT_NO_THROW((AdapterConfig{.num_experts = 1, .top_k = 1, .use_router = false}.validate()));
}
