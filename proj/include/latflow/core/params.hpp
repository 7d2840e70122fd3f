// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latflow/core/rng.hpp"
#include "latflow/core/tensor.hpp"

namespace latflow {

template <typename T>
struct Param {
    std::string name;
    TensorT<T> value;
    bool trainable = true;
};

// Ordered, name-addressed parameter registry. Models hold TensorT handles
// into it, so loading values in place is visible to the model.
template <typename T>
class ParamSet {
   public:
    // Registers a leaf with requires_grad set. Duplicate names throw.
    TensorT<T> add(const std::string& name, TensorT<T> value, bool trainable = true);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const TensorT<T>& get(const std::string& name) const;
    Param<T>& entry(const std::string& name);

    std::vector<Param<T>>& entries() { return params_; }
    const std::vector<Param<T>>& entries() const { return params_; }

    void set_trainable(const std::string& name, bool trainable);
    void freeze_all();
    void zero_grad();

    std::int64_t total_count() const;
    std::int64_t trainable_count() const;

    // Overwrites values of matching names; shape mismatches throw.
    void load_values(const std::map<std::string, std::pair<Shape, std::vector<float>>>& values,
                     bool require_all);

   private:
    std::vector<Param<T>> params_;
    std::map<std::string, std::size_t> index_;
};

namespace init {

template <typename T>
TensorT<T> uniform(Rng& rng, const Shape& shape, double bound);
template <typename T>
TensorT<T> normal(Rng& rng, const Shape& shape, double stddev);
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = shape[1].
template <typename T>
TensorT<T> fan_in_uniform(Rng& rng, const Shape& shape);
// Xavier/Glorot uniform for a [out, in] matrix.
template <typename T>
TensorT<T> xavier_uniform(Rng& rng, const Shape& shape);

}  // namespace init

extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace latflow
