// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

#include "latflow/core/tensor.hpp"

namespace latflow {

struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
};

// Philox4x32-10 counter-based generator. Draw number n of (seed, stream) is a
// pure function of (seed, stream, n), so sequences are identical on every
// platform and substreams never overlap.
class Rng {
   public:
    explicit Rng(RngState state = {}) : state_(state) {}
    Rng(std::uint64_t seed, std::uint64_t stream) : state_{seed, stream} {}

    const RngState& state() const { return state_; }
    std::uint64_t position() const { return counter_; }

    std::array<std::uint32_t, 4> next_block();
    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Standard normal via Box-Muller (both outputs are used).
    double normal();
    bool bernoulli(double p) { return uniform() < p; }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    // Independent generator for a named sub-purpose; does not advance *this.
    Rng fork(std::uint64_t tag) const;

   private:
    RngState state_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

template <typename T>
TensorT<T> seeded_normal(Rng& rng, const Shape& shape);

template <typename T>
TensorT<T> seeded_normal(const RngState& state, const Shape& shape) {
    Rng rng(state);
    return seeded_normal<T>(rng, shape);
}

}  // namespace latflow
