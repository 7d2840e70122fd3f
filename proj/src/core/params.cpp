// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/core/params.hpp"

#include <cmath>

namespace latflow {

template <typename T>
TensorT<T> ParamSet<T>::add(const std::string& name, TensorT<T> value, bool trainable) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    value.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back({name, value, trainable});
    return value;
}

template <typename T>
const TensorT<T>& ParamSet<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return params_[it->second].value;
}

template <typename T>
Param<T>& ParamSet<T>::entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return params_[it->second];
}

template <typename T>
void ParamSet<T>::set_trainable(const std::string& name, bool trainable) {
    entry(name).trainable = trainable;
}

template <typename T>
void ParamSet<T>::freeze_all() {
    for (auto& p : params_) p.trainable = false;
}

template <typename T>
void ParamSet<T>::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
std::int64_t ParamSet<T>::total_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

template <typename T>
std::int64_t ParamSet<T>::trainable_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += p.value.numel();
    return n;
}

template <typename T>
void ParamSet<T>::load_values(const std::map<std::string, std::pair<Shape, std::vector<float>>>& values,
                              bool require_all) {
    for (auto& p : params_) {
        auto it = values.find(p.name);
        if (it == values.end()) {
            if (require_all) throw IoError("checkpoint is missing parameter " + p.name);
            continue;
        }
        if (it->second.first != p.value.shape()) {
            throw IoError("checkpoint shape " + shape_str(it->second.first) + " for " + p.name +
                          " does not match model shape " + shape_str(p.value.shape()));
        }
        auto dst = p.value.mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second.second[i]);
    }
}

namespace init {

template <typename T>
TensorT<T> uniform(Rng& rng, const Shape& shape, double bound) {
    std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return TensorT<T>::from_data(shape, std::move(v));
}

template <typename T>
TensorT<T> normal(Rng& rng, const Shape& shape, double stddev) {
    std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(stddev * rng.normal());
    return TensorT<T>::from_data(shape, std::move(v));
}

template <typename T>
TensorT<T> fan_in_uniform(Rng& rng, const Shape& shape) {
    const double fan_in = shape.size() > 1 ? static_cast<double>(shape[1]) : static_cast<double>(shape[0]);
    return uniform<T>(rng, shape, 1.0 / std::sqrt(fan_in));
}

template <typename T>
TensorT<T> xavier_uniform(Rng& rng, const Shape& shape) {
    const double fan_out = static_cast<double>(shape[0]);
    const double fan_in = shape.size() > 1 ? static_cast<double>(shape[1]) : 1.0;
    return uniform<T>(rng, shape, std::sqrt(6.0 / (fan_in + fan_out)));
}

template TensorT<float> uniform<float>(Rng&, const Shape&, double);
template TensorT<double> uniform<double>(Rng&, const Shape&, double);
template TensorT<float> normal<float>(Rng&, const Shape&, double);
template TensorT<double> normal<double>(Rng&, const Shape&, double);
template TensorT<float> fan_in_uniform<float>(Rng&, const Shape&);
template TensorT<double> fan_in_uniform<double>(Rng&, const Shape&);
template TensorT<float> xavier_uniform<float>(Rng&, const Shape&);
template TensorT<double> xavier_uniform<double>(Rng&, const Shape&);

}  // namespace init

template class ParamSet<float>;
template class ParamSet<double>;

}  // namespace latflow
