// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/core/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace latflow {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

template <typename T>
TensorT<T> TensorT<T>::zeros(const Shape& shape) {
    return full(shape, T(0));
}

template <typename T>
TensorT<T> TensorT<T>::full(const Shape& shape, T value) {
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = shape;
    node->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    return TensorT(std::move(node));
}

template <typename T>
TensorT<T> TensorT<T>::from_data(const Shape& shape, std::vector<T> data) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = shape;
    node->data = std::move(data);
    return TensorT(std::move(node));
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T value) {
    return full({1, 1}, value);
}

template <typename T>
void TensorT<T>::require_defined() const {
    if (!node_) throw ContractError("use of an undefined tensor");
}

template <typename T>
const Shape& TensorT<T>::shape() const {
    require_defined();
    return node_->shape;
}

template <typename T>
std::int64_t TensorT<T>::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw DimensionError("axis out of range for shape " + shape_str(s));
    return s[axis];
}

template <typename T>
std::int64_t TensorT<T>::rows() const {
    const auto& s = shape();
    if (s.size() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_str(s));
    return s[0];
}

template <typename T>
std::int64_t TensorT<T>::cols() const {
    const auto& s = shape();
    if (s.size() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_str(s));
    return s[1];
}

template <typename T>
std::int64_t TensorT<T>::numel() const {
    require_defined();
    return static_cast<std::int64_t>(node_->data.size());
}

template <typename T>
std::span<const T> TensorT<T>::data() const {
    require_defined();
    return node_->data;
}

template <typename T>
std::span<T> TensorT<T>::mutable_data() {
    require_defined();
    return node_->data;
}

template <typename T>
T TensorT<T>::item() const {
    require_defined();
    if (node_->data.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(node_->shape));
    return node_->data[0];
}

template <typename T>
T TensorT<T>::at(std::int64_t row, std::int64_t col) const {
    return data()[static_cast<std::size_t>(row * cols() + col)];
}

template <typename T>
std::vector<T> TensorT<T>::to_vector() const {
    auto d = data();
    return {d.begin(), d.end()};
}

template <typename T>
bool TensorT<T>::requires_grad() const {
    return node_ && node_->requires_grad;
}

template <typename T>
TensorT<T>& TensorT<T>::set_requires_grad(bool flag) {
    require_defined();
    if (!node_->is_leaf) throw ContractError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = flag;
    return *this;
}

template <typename T>
bool TensorT<T>::has_grad() const {
    return node_ && node_->grad.size() == node_->data.size() && !node_->data.empty();
}

template <typename T>
std::span<const T> TensorT<T>::grad() const {
    require_defined();
    return node_->grad;
}

template <typename T>
std::span<T> TensorT<T>::mutable_grad() {
    require_defined();
    return node_->ensure_grad();
}

template <typename T>
void TensorT<T>::zero_grad() {
    require_defined();
    node_->grad.clear();
}

template <typename T>
TensorT<T> TensorT<T>::detach() const {
    return from_data(shape(), to_vector());
}

template <typename T>
void TensorT<T>::backward() const {
    require_defined();
    if (node_->data.size() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + shape_str(node_->shape));
    }
    if (node_->consumed) {
        throw ContractError("graph was already differentiated; run a fresh forward pass");
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    using NodeT = detail::Node<T>;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> visited;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            NodeT* p = n->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // Release the graph. Intermediate gradients are dropped; leaves keep theirs.
    for (NodeT* n : order) {
        if (n->is_leaf) continue;
        n->backward_fn = nullptr;
        n->parents.clear();
        n->grad.clear();
        n->grad.shrink_to_fit();
        n->consumed = true;
    }
    node_->consumed = true;
}

template <typename T>
TensorT<T> make_op_result(Shape shape, std::vector<T> data, std::vector<TensorT<T>> inputs,
                          std::function<void(detail::Node<T>&)> backward_fn) {
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->is_leaf = false;
    bool track = false;
    if (NoGradGuard::grad_enabled()) {
        for (const auto& in : inputs) {
            if (in.requires_grad()) {
                if (in.node()->consumed) {
                    throw ContractError("input belongs to a graph that was already differentiated");
                }
                track = true;
            }
        }
    }
    if (track) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (auto& in : inputs) node->parents.push_back(in.node());
        node->backward_fn = std::move(backward_fn);
    }
    return TensorT<T>(std::move(node));
}

template class TensorT<float>;
template class TensorT<double>;

template TensorT<float> make_op_result<float>(Shape, std::vector<float>, std::vector<TensorT<float>>,
                                              std::function<void(detail::Node<float>&)>);
template TensorT<double> make_op_result<double>(Shape, std::vector<double>, std::vector<TensorT<double>>,
                                                std::function<void(detail::Node<double>&)>);

}  // namespace latflow
