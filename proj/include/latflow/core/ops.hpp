// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable ops over 2-D row-major tensors.
//
// Binary elementwise ops broadcast when one operand is [1,c], [r,1] or [1,1].

#pragma once

#include <cstdint>
#include <vector>

#include "latflow/core/tensor.hpp"

namespace latflow {

template <typename T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b,
                                        bool trans_a = false, bool trans_b = false);
// x·Wᵀ + bias, with W stored [out, in] and bias [1, out] (bias may be undefined).
template <typename T> TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& weight,
                                        const TensorT<T>& bias);

template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> scale(const TensorT<T>& a, T s);
template <typename T> TensorT<T> add_scalar(const TensorT<T>& a, T s);

template <typename T> TensorT<T> exp(const TensorT<T>& a);
// Natural log; inputs are clamped to `floor` (gradient is zero where clamped).
template <typename T> TensorT<T> log(const TensorT<T>& a, T floor = T(0));
template <typename T> TensorT<T> square(const TensorT<T>& a);
template <typename T> TensorT<T> abs(const TensorT<T>& a);
template <typename T> TensorT<T> sqrt(const TensorT<T>& a);
template <typename T> TensorT<T> reciprocal(const TensorT<T>& a);
template <typename T> TensorT<T> tanh(const TensorT<T>& a);
template <typename T> TensorT<T> sigmoid(const TensorT<T>& a);
template <typename T> TensorT<T> silu(const TensorT<T>& a);
template <typename T> TensorT<T> gelu(const TensorT<T>& a);
template <typename T> TensorT<T> softplus(const TensorT<T>& a);
// Parametric ReLU with a single learnable slope ([1,1]).
template <typename T> TensorT<T> prelu(const TensorT<T>& a, const TensorT<T>& slope);

template <typename T> TensorT<T> sum(const TensorT<T>& a);
template <typename T> TensorT<T> mean(const TensorT<T>& a);
// Reduce over rows → [1, c].
template <typename T> TensorT<T> sum_rows(const TensorT<T>& a);
// Reduce over columns → [r, 1].
template <typename T> TensorT<T> sum_cols(const TensorT<T>& a);

// axis 1 normalises each row, axis 0 each column. Log-sum-exp stabilised.
template <typename T> TensorT<T> softmax(const TensorT<T>& a, int axis = 1);
// Normalises each row over the last axis; gain/bias ([1,c]) may be undefined.
template <typename T> TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain,
                                            const TensorT<T>& bias, T eps);

template <typename T> TensorT<T> reshape(const TensorT<T>& a, const Shape& shape);
template <typename T> TensorT<T> transpose(const TensorT<T>& a);
template <typename T> TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts);
template <typename T> TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts);
template <typename T> TensorT<T> slice_cols(const TensorT<T>& a, std::int64_t start, std::int64_t len);
template <typename T> TensorT<T> slice_rows(const TensorT<T>& a, std::int64_t start, std::int64_t len);

// Output row i is the concatenation of input rows index[i*group + j] for
// j < group; an index of -1 contributes zeros. Output shape [n/group, group*c].
template <typename T> TensorT<T> gather_rows(const TensorT<T>& a, const std::vector<std::int64_t>& index,
                                             std::int64_t group);

// Frobenius norm as [1,1]; the gradient at the origin is taken as zero.
template <typename T> TensorT<T> l2_norm(const TensorT<T>& a);

template <typename T> TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b);

// Scaled dot-product self-attention. q, k, v are [segments*seq_len, heads*dh]
// (v may use a different per-head width); attention runs independently within
// each contiguous block of seq_len rows and each head.
template <typename T> TensorT<T> attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                                           std::int64_t heads, std::int64_t seq_len);

enum class SequenceLayout {
    kStepMajor,   // row = step * batch + item
    kBatchMajor,  // row = item * steps + step
};

// Single-layer LSTM over `steps` time steps for `batch` independent sequences.
// x: [steps*batch, in]; w_ih: [4h, in]; w_hh: [4h, h]; bias: [1, 4h].
// Gate order i, f, g, o. Output [steps*batch, h] in the input layout.
template <typename T> TensorT<T> lstm(const TensorT<T>& x, const TensorT<T>& w_ih, const TensorT<T>& w_hh,
                                      const TensorT<T>& bias, std::int64_t steps, std::int64_t batch,
                                      SequenceLayout layout, bool reverse);

}  // namespace latflow
