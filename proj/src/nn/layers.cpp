// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/nn/layers.hpp"

#include <cmath>

namespace latflow::nn {

template <typename T>
Linear<T> Linear<T>::make(ParamSet<T>& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out,
                          bool with_bias, Init init) {
    Linear l;
    l.weight = ps.add(name + ".weight",
                      init == Init::kZero ? TensorT<T>::zeros({out, in}) : init::fan_in_uniform<T>(rng, {out, in}));
    if (with_bias) l.bias = ps.add(name + ".bias", TensorT<T>::zeros({1, out}));
    return l;
}

template <typename T>
LayerNorm<T> LayerNorm<T>::make(ParamSet<T>& ps, const std::string& name, std::int64_t width, bool affine) {
    LayerNorm l;
    if (affine) {
        l.gain = ps.add(name + ".gain", TensorT<T>::full({1, width}, T(1)));
        l.bias = ps.add(name + ".bias", TensorT<T>::zeros({1, width}));
    }
    return l;
}

template <typename T>
BiLstm<T> BiLstm<T>::make(ParamSet<T>& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t hidden) {
    BiLstm l;
    const double bound = 1.0 / std::sqrt(double(hidden));
    const char* dirs[2] = {"fwd", "bwd"};
    for (int d = 0; d < 2; ++d) {
        const std::string p = name + "." + dirs[d];
        l.w_ih[d] = ps.add(p + ".w_ih", init::uniform<T>(rng, {4 * hidden, in}, bound));
        l.w_hh[d] = ps.add(p + ".w_hh", init::uniform<T>(rng, {4 * hidden, hidden}, bound));
        l.b[d] = ps.add(p + ".bias", TensorT<T>::zeros({1, 4 * hidden}));
    }
    return l;
}

template <typename T>
TensorT<T> BiLstm<T>::operator()(const TensorT<T>& x, std::int64_t steps, std::int64_t batch,
                                 SequenceLayout layout) const {
    auto f = lstm(x, w_ih[0], w_hh[0], b[0], steps, batch, layout, false);
    auto r = lstm(x, w_ih[1], w_hh[1], b[1], steps, batch, layout, true);
    return concat_cols<T>({f, r});
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct BiLstm<float>;
template struct BiLstm<double>;

}  // namespace latflow::nn
