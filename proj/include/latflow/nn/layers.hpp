// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Parameter-owning building blocks. Each registers its tensors in a ParamSet
// under a dotted prefix and keeps handles for the forward pass.

#pragma once

#include <string>

#include "latflow/core/ops.hpp"
#include "latflow/core/params.hpp"

namespace latflow::nn {

enum class Init { kDefault, kZero };

template <typename T>
struct Linear {
    TensorT<T> weight;  // [out, in]
    TensorT<T> bias;    // [1, out] or undefined

    static Linear make(ParamSet<T>& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out,
                       bool with_bias = true, Init init = Init::kDefault);
    TensorT<T> operator()(const TensorT<T>& x) const { return linear(x, weight, bias); }
    std::int64_t in() const { return weight.cols(); }
    std::int64_t out() const { return weight.rows(); }
};

template <typename T>
struct LayerNorm {
    TensorT<T> gain, bias;  // [1, c]; both undefined when affine is off
    T eps = T(1e-5);

    static LayerNorm make(ParamSet<T>& ps, const std::string& name, std::int64_t width, bool affine = true);
    TensorT<T> operator()(const TensorT<T>& x) const { return layer_norm(x, gain, bias, eps); }
};

// Bidirectional single-layer LSTM; output is [fwd | bwd], width 2*hidden.
template <typename T>
struct BiLstm {
    TensorT<T> w_ih[2], w_hh[2], b[2];

    static BiLstm make(ParamSet<T>& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t hidden);
    TensorT<T> operator()(const TensorT<T>& x, std::int64_t steps, std::int64_t batch, SequenceLayout layout) const;
    std::int64_t hidden() const { return w_hh[0].cols(); }
};

extern template struct Linear<float>;
extern template struct Linear<double>;
extern template struct LayerNorm<float>;
extern template struct LayerNorm<double>;
extern template struct BiLstm<float>;
extern template struct BiLstm<double>;

}  // namespace latflow::nn
