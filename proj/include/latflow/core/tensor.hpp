// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op result keeps shared ownership of its inputs' nodes plus a closure
// that pushes the result gradient back into them. backward() walks the graph
// once in reverse topological order and then releases it; a graph can be
// differentiated only once.
//
// Models run on TensorT<float>. TensorT<double> exists for gradient checks.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "latflow/core/error.hpp"

namespace latflow {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    bool consumed = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<T>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

// While a NoGradGuard is alive on this thread, ops do not record history.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool grad_enabled();

   private:
    bool previous_;
};

template <typename T>
class TensorT {
   public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    TensorT() = default;

    static TensorT zeros(const Shape& shape);
    static TensorT full(const Shape& shape, T value);
    static TensorT from_data(const Shape& shape, std::vector<T> data);
    static TensorT scalar(T value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::int64_t dim(std::size_t axis) const;
    std::int64_t rows() const;
    std::int64_t cols() const;
    std::int64_t numel() const;

    std::span<const T> data() const;
    // Direct write access. Only meant for parameter initialisation and the
    // optimizer; op results must be treated as immutable.
    std::span<T> mutable_data();
    T item() const;
    T at(std::int64_t row, std::int64_t col) const;
    std::vector<T> to_vector() const;

    bool requires_grad() const;
    TensorT& set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    void zero_grad();

    // Reverse-mode pass from a scalar. Throws ContractError for non-scalar
    // tensors or when the graph was already differentiated.
    void backward() const;

    // Same values, no history, fresh leaf.
    TensorT detach() const;

    const NodePtr& node() const { return node_; }
    explicit TensorT(NodePtr node) : node_(std::move(node)) {}

   private:
    void require_defined() const;

    NodePtr node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// Builds an op result. `inputs` are recorded as parents only when history is
// being tracked and at least one input requires a gradient.
template <typename T>
TensorT<T> make_op_result(Shape shape, std::vector<T> data,
                          std::vector<TensorT<T>> inputs,
                          std::function<void(detail::Node<T>&)> backward_fn);

template <typename T, typename U>
TensorT<U> cast(const TensorT<T>& x) {
    std::vector<U> out(x.data().begin(), x.data().end());
    auto r = TensorT<U>::from_data(x.shape(), std::move(out));
    r.set_requires_grad(x.requires_grad());
    return r;
}

extern template class TensorT<float>;
extern template class TensorT<double>;

}  // namespace latflow
