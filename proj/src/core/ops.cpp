// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/core/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace latflow {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const Mat<T>>;
template <typename T>
using MMap = Eigen::Map<Mat<T>>;

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
bool wants_grad(const NodeT<T>& self, std::size_t i) {
    return self.parents[i]->requires_grad;
}

template <typename T>
std::vector<T>& parent_grad(NodeT<T>& self, std::size_t i) {
    return self.parents[i]->ensure_grad();
}

template <typename T>
void require_2d(const TensorT<T>& a, const char* op) {
    if (a.shape().size() != 2) {
        throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(a.shape()));
    }
}

struct Broadcast {
    std::int64_t rows, cols;
    std::int64_t ar, ac, br, bc;
};

template <typename T>
Broadcast broadcast_shapes(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    require_2d(a, op);
    require_2d(b, op);
    Broadcast s{std::max(a.rows(), b.rows()), std::max(a.cols(), b.cols()), a.rows(), a.cols(), b.rows(),
                b.cols()};
    auto ok = [](std::int64_t d, std::int64_t out) { return d == out || d == 1; };
    if (!ok(s.ar, s.rows) || !ok(s.ac, s.cols) || !ok(s.br, s.rows) || !ok(s.bc, s.cols)) {
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                             shape_str(b.shape()));
    }
    return s;
}

inline std::int64_t bidx(std::int64_t i, std::int64_t j, std::int64_t r, std::int64_t c) {
    return (r == 1 ? 0 : i) * c + (c == 1 ? 0 : j);
}

// Generic broadcast binary op. da/db receive (a, b, upstream) and return the
// local gradient contribution.
template <typename T, typename F, typename DA, typename DB>
TensorT<T> binary_op(const TensorT<T>& a, const TensorT<T>& b, const char* name, F f, DA da, DB db) {
    const Broadcast s = broadcast_shapes(a, b, name);
    std::vector<T> out(static_cast<std::size_t>(s.rows * s.cols));
    auto ad = a.data();
    auto bd = b.data();
    for (std::int64_t i = 0; i < s.rows; ++i) {
        for (std::int64_t j = 0; j < s.cols; ++j) {
            out[i * s.cols + j] = f(ad[bidx(i, j, s.ar, s.ac)], bd[bidx(i, j, s.br, s.bc)]);
        }
    }
    return make_op_result<T>({s.rows, s.cols}, std::move(out), {a, b}, [s, da, db](NodeT<T>& self) {
        const auto& A = self.parents[0]->data;
        const auto& B = self.parents[1]->data;
        const auto& g = self.grad;
        const bool ga = wants_grad(self, 0), gb = wants_grad(self, 1);
        std::vector<T>* gA = ga ? &parent_grad(self, 0) : nullptr;
        std::vector<T>* gB = gb ? &parent_grad(self, 1) : nullptr;
        for (std::int64_t i = 0; i < s.rows; ++i) {
            for (std::int64_t j = 0; j < s.cols; ++j) {
                const auto ia = bidx(i, j, s.ar, s.ac);
                const auto ib = bidx(i, j, s.br, s.bc);
                const T up = g[i * s.cols + j];
                if (gA) (*gA)[ia] += da(A[ia], B[ib], up);
                if (gB) (*gB)[ib] += db(A[ia], B[ib], up);
            }
        }
    });
}

// Elementwise unary op; `d` receives (x, y, upstream).
template <typename T, typename F, typename D>
TensorT<T> unary_op(const TensorT<T>& a, F f, D d) {
    auto in = a.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_op_result<T>(a.shape(), std::move(out), {a}, [d](NodeT<T>& self) {
        const auto& x = self.parents[0]->data;
        auto& gx = parent_grad(self, 0);
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += d(x[i], self.data[i], self.grad[i]);
    });
}

}  // namespace

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b, bool trans_a, bool trans_b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::int64_t m = trans_a ? a.cols() : a.rows();
    const std::int64_t ka = trans_a ? a.rows() : a.cols();
    const std::int64_t kb = trans_b ? b.cols() : b.rows();
    const std::int64_t n = trans_b ? b.rows() : b.cols();
    if (ka != kb) {
        throw DimensionError("matmul: inner dimensions disagree (" + shape_str(a.shape()) +
                             (trans_a ? "ᵀ" : "") + " · " + shape_str(b.shape()) + (trans_b ? "ᵀ" : "") + ")");
    }
    std::vector<T> out(static_cast<std::size_t>(m * n));
    CMap<T> A(a.data().data(), a.rows(), a.cols());
    CMap<T> B(b.data().data(), b.rows(), b.cols());
    MMap<T> C(out.data(), m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();

    const Shape sa = a.shape(), sb = b.shape();
    return make_op_result<T>({m, n}, std::move(out), {a, b}, [=](NodeT<T>& self) {
        CMap<T> G(self.grad.data(), m, n);
        CMap<T> Av(self.parents[0]->data.data(), sa[0], sa[1]);
        CMap<T> Bv(self.parents[1]->data.data(), sb[0], sb[1]);
        if (wants_grad(self, 0)) {
            MMap<T> gA(parent_grad(self, 0).data(), sa[0], sa[1]);
            // C = op(A)·op(B)
            if (!trans_a) {
                if (!trans_b) gA.noalias() += G * Bv.transpose();
                else gA.noalias() += G * Bv;
            } else {
                if (!trans_b) gA.noalias() += Bv * G.transpose();
                else gA.noalias() += Bv.transpose() * G.transpose();
            }
        }
        if (wants_grad(self, 1)) {
            MMap<T> gB(parent_grad(self, 1).data(), sb[0], sb[1]);
            if (!trans_b) {
                if (!trans_a) gB.noalias() += Av.transpose() * G;
                else gB.noalias() += Av * G;
            } else {
                if (!trans_a) gB.noalias() += G.transpose() * Av;
                else gB.noalias() += G.transpose() * Av.transpose();
            }
        }
    });
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& bias) {
    auto y = matmul(x, weight, false, true);
    if (bias.defined()) y = add(y, bias);
    return y;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return g; });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
        [](T x, T, T g) { return g * x; });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    return unary_op(a, [s](T x) { return x * s; }, [s](T, T, T g) { return g * s; });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    return unary_op(a, [s](T x) { return x + s; }, [](T, T, T g) { return g; });
}

template <typename T>
TensorT<T> exp(const TensorT<T>& a) {
    return unary_op(a, [](T x) { return std::exp(x); }, [](T, T y, T g) { return g * y; });
}

template <typename T>
TensorT<T> log(const TensorT<T>& a, T floor) {
    return unary_op(
        a, [floor](T x) { return std::log(std::max(x, floor)); },
        [floor](T x, T, T g) { return x > floor ? g / x : T(0); });
}

template <typename T>
TensorT<T> square(const TensorT<T>& a) {
    return unary_op(a, [](T x) { return x * x; }, [](T x, T, T g) { return T(2) * x * g; });
}

template <typename T>
TensorT<T> abs(const TensorT<T>& a) {
    return unary_op(
        a, [](T x) { return std::abs(x); },
        [](T x, T, T g) { return x > 0 ? g : (x < 0 ? -g : T(0)); });
}

template <typename T>
TensorT<T> sqrt(const TensorT<T>& a) {
    return unary_op(
        a, [](T x) { return std::sqrt(x); }, [](T, T y, T g) { return y > 0 ? g / (T(2) * y) : T(0); });
}

template <typename T>
TensorT<T> reciprocal(const TensorT<T>& a) {
    return unary_op(a, [](T x) { return T(1) / x; }, [](T, T y, T g) { return -g * y * y; });
}

template <typename T>
TensorT<T> tanh(const TensorT<T>& a) {
    return unary_op(a, [](T x) { return std::tanh(x); }, [](T, T y, T g) { return g * (T(1) - y * y); });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    return unary_op(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y, T g) { return g * y * (T(1) - y); });
}

template <typename T>
TensorT<T> silu(const TensorT<T>& a) {
    return unary_op(
        a, [](T x) { return x / (T(1) + std::exp(-x)); },
        [](T x, T, T g) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return g * (s + x * s * (T(1) - s));
        });
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& a) {
    // tanh approximation
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k = T(0.044715);
    return unary_op(
        a,
        [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
        [](T x, T, T g) {
            const T u = c * (x + k * x * x * x);
            const T th = std::tanh(u);
            const T du = c * (T(1) + T(3) * k * x * x);
            return g * (T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du);
        });
}

template <typename T>
TensorT<T> softplus(const TensorT<T>& a) {
    return unary_op(
        a, [](T x) { return x > T(20) ? x : std::log1p(std::exp(x)); },
        [](T x, T, T g) { return g / (T(1) + std::exp(-x)); });
}

template <typename T>
TensorT<T> prelu(const TensorT<T>& a, const TensorT<T>& slope) {
    if (slope.numel() != 1) throw DimensionError("prelu: slope must hold a single value");
    const T s = slope.data()[0];
    auto in = a.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= 0 ? in[i] : s * in[i];
    return make_op_result<T>(a.shape(), std::move(out), {a, slope}, [s](NodeT<T>& self) {
        const auto& x = self.parents[0]->data;
        if (wants_grad(self, 0)) {
            auto& gx = parent_grad(self, 0);
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += x[i] >= 0 ? self.grad[i] : s * self.grad[i];
        }
        if (wants_grad(self, 1)) {
            T acc = 0;
            for (std::size_t i = 0; i < x.size(); ++i)
                if (x[i] < 0) acc += x[i] * self.grad[i];
            parent_grad(self, 1)[0] += acc;
        }
    });
}

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    auto d = a.data();
    T total = std::accumulate(d.begin(), d.end(), T(0));
    return make_op_result<T>({1, 1}, {total}, {a}, [](NodeT<T>& self) {
        auto& g = parent_grad(self, 0);
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    const auto n = a.numel();
    if (n == 0) throw DimensionError("mean of an empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
TensorT<T> sum_rows(const TensorT<T>& a) {
    require_2d(a, "sum_rows");
    const auto r = a.rows(), c = a.cols();
    std::vector<T> out(static_cast<std::size_t>(c), T(0));
    auto d = a.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[j] += d[i * c + j];
    return make_op_result<T>({1, c}, std::move(out), {a}, [r, c](NodeT<T>& self) {
        auto& g = parent_grad(self, 0);
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j];
    });
}

template <typename T>
TensorT<T> sum_cols(const TensorT<T>& a) {
    require_2d(a, "sum_cols");
    const auto r = a.rows(), c = a.cols();
    std::vector<T> out(static_cast<std::size_t>(r), T(0));
    auto d = a.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[i] += d[i * c + j];
    return make_op_result<T>({r, 1}, std::move(out), {a}, [r, c](NodeT<T>& self) {
        auto& g = parent_grad(self, 0);
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
    });
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
    require_2d(a, "softmax");
    if (axis != 0 && axis != 1) throw DimensionError("softmax: axis must be 0 or 1");
    const auto r = a.rows(), c = a.cols();
    // Iterate over `lines` vectors of length `len` with the given strides.
    const std::int64_t lines = axis == 1 ? r : c;
    const std::int64_t len = axis == 1 ? c : r;
    const std::int64_t line_stride = axis == 1 ? c : 1;
    const std::int64_t elem_stride = axis == 1 ? 1 : c;
    auto d = a.data();
    std::vector<T> out(d.size());
    for (std::int64_t l = 0; l < lines; ++l) {
        const std::int64_t base = l * line_stride;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t e = 0; e < len; ++e) mx = std::max(mx, d[base + e * elem_stride]);
        T z = 0;
        for (std::int64_t e = 0; e < len; ++e) {
            const T v = std::exp(d[base + e * elem_stride] - mx);
            out[base + e * elem_stride] = v;
            z += v;
        }
        for (std::int64_t e = 0; e < len; ++e) out[base + e * elem_stride] /= z;
    }
    return make_op_result<T>(a.shape(), std::move(out), {a}, [=](NodeT<T>& self) {
        auto& g = parent_grad(self, 0);
        const auto& y = self.data;
        for (std::int64_t l = 0; l < lines; ++l) {
            const std::int64_t base = l * line_stride;
            T dot = 0;
            for (std::int64_t e = 0; e < len; ++e) {
                const auto idx = base + e * elem_stride;
                dot += self.grad[idx] * y[idx];
            }
            for (std::int64_t e = 0; e < len; ++e) {
                const auto idx = base + e * elem_stride;
                g[idx] += y[idx] * (self.grad[idx] - dot);
            }
        }
    });
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias, T eps) {
    require_2d(x, "layer_norm");
    if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
    const auto r = x.rows(), c = x.cols();
    if (gain.defined() && gain.numel() != c) throw DimensionError("layer_norm: gain width mismatch");
    if (bias.defined() && bias.numel() != c) throw DimensionError("layer_norm: bias width mismatch");
    auto d = x.data();
    std::vector<T> xhat(d.size());
    std::vector<T> inv_sd(static_cast<std::size_t>(r));
    for (std::int64_t i = 0; i < r; ++i) {
        T mu = 0;
        for (std::int64_t j = 0; j < c; ++j) mu += d[i * c + j];
        mu /= static_cast<T>(c);
        T var = 0;
        for (std::int64_t j = 0; j < c; ++j) var += (d[i * c + j] - mu) * (d[i * c + j] - mu);
        var /= static_cast<T>(c);
        inv_sd[i] = T(1) / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < c; ++j) xhat[i * c + j] = (d[i * c + j] - mu) * inv_sd[i];
    }
    std::vector<T> out(xhat);
    if (gain.defined() || bias.defined()) {
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) {
                T v = xhat[i * c + j];
                if (gain.defined()) v *= gain.data()[j];
                if (bias.defined()) v += bias.data()[j];
                out[i * c + j] = v;
            }
    }
    std::vector<TensorT<T>> inputs{x};
    const bool has_gain = gain.defined(), has_bias = bias.defined();
    if (has_gain) inputs.push_back(gain);
    if (has_bias) inputs.push_back(bias);
    return make_op_result<T>(x.shape(), std::move(out), inputs,
                             [=, xhat = std::move(xhat), inv_sd = std::move(inv_sd)](NodeT<T>& self) {
                                 const T* gv = has_gain ? self.parents[1]->data.data() : nullptr;
                                 std::vector<T> dxhat(static_cast<std::size_t>(c));
                                 const bool gx = wants_grad(self, 0);
                                 for (std::int64_t i = 0; i < r; ++i) {
                                     T m1 = 0, m2 = 0;
                                     for (std::int64_t j = 0; j < c; ++j) {
                                         const T up = self.grad[i * c + j];
                                         dxhat[j] = gv ? up * gv[j] : up;
                                         m1 += dxhat[j];
                                         m2 += dxhat[j] * xhat[i * c + j];
                                     }
                                     m1 /= static_cast<T>(c);
                                     m2 /= static_cast<T>(c);
                                     if (gx) {
                                         auto& g = parent_grad(self, 0);
                                         for (std::int64_t j = 0; j < c; ++j)
                                             g[i * c + j] += inv_sd[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
                                     }
                                 }
                                 std::size_t next = 1;
                                 if (has_gain) {
                                     if (wants_grad(self, next)) {
                                         auto& g = parent_grad(self, next);
                                         for (std::int64_t i = 0; i < r; ++i)
                                             for (std::int64_t j = 0; j < c; ++j)
                                                 g[j] += self.grad[i * c + j] * xhat[i * c + j];
                                     }
                                     ++next;
                                 }
                                 if (has_bias && wants_grad(self, next)) {
                                     auto& g = parent_grad(self, next);
                                     for (std::int64_t i = 0; i < r; ++i)
                                         for (std::int64_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
                                 }
                             });
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " → " + shape_str(shape));
    }
    return make_op_result<T>(shape, a.to_vector(), {a}, [](NodeT<T>& self) {
        auto& g = parent_grad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& a) {
    require_2d(a, "transpose");
    const auto r = a.rows(), c = a.cols();
    std::vector<T> out(static_cast<std::size_t>(r * c));
    auto d = a.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
    return make_op_result<T>({c, r}, std::move(out), {a}, [r, c](NodeT<T>& self) {
        auto& g = parent_grad(self, 0);
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const auto r = parts[0].rows();
    std::vector<std::int64_t> widths;
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<T> out(static_cast<std::size_t>(r * total));
    std::int64_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto d = parts[k].data();
        for (std::int64_t i = 0; i < r; ++i)
            std::copy_n(d.begin() + i * widths[k], widths[k], out.begin() + i * total + off);
        off += widths[k];
    }
    return make_op_result<T>({r, total}, std::move(out), parts, [r, total, widths](NodeT<T>& self) {
        std::int64_t o = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (wants_grad(self, k)) {
                auto& g = parent_grad(self, k);
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + o + j];
            }
            o += widths[k];
        }
    });
}

template <typename T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const auto c = parts[0].cols();
    std::int64_t total = 0;
    std::vector<std::int64_t> sizes;
    std::vector<T> out;
    for (const auto& p : parts) {
        if (p.cols() != c) throw DimensionError("concat_rows: column counts differ");
        total += p.rows();
        sizes.push_back(p.numel());
        auto d = p.data();
        out.insert(out.end(), d.begin(), d.end());
    }
    return make_op_result<T>({total, c}, std::move(out), parts, [sizes](NodeT<T>& self) {
        std::int64_t o = 0;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            if (wants_grad(self, k)) {
                auto& g = parent_grad(self, k);
                for (std::int64_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[o + i];
            }
            o += sizes[k];
        }
    });
}

template <typename T>
TensorT<T> slice_cols(const TensorT<T>& a, std::int64_t start, std::int64_t len) {
    require_2d(a, "slice_cols");
    const auto r = a.rows(), c = a.cols();
    if (start < 0 || len < 0 || start + len > c) throw DimensionError("slice_cols: range out of bounds");
    std::vector<T> out(static_cast<std::size_t>(r * len));
    auto d = a.data();
    for (std::int64_t i = 0; i < r; ++i) std::copy_n(d.begin() + i * c + start, len, out.begin() + i * len);
    return make_op_result<T>({r, len}, std::move(out), {a}, [r, c, start, len](NodeT<T>& self) {
        auto& g = parent_grad(self, 0);
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < len; ++j) g[i * c + start + j] += self.grad[i * len + j];
    });
}

template <typename T>
TensorT<T> slice_rows(const TensorT<T>& a, std::int64_t start, std::int64_t len) {
    require_2d(a, "slice_rows");
    const auto r = a.rows(), c = a.cols();
    if (start < 0 || len < 0 || start + len > r) throw DimensionError("slice_rows: range out of bounds");
    auto d = a.data();
    std::vector<T> out(d.begin() + start * c, d.begin() + (start + len) * c);
    return make_op_result<T>({len, c}, std::move(out), {a}, [c, start, len](NodeT<T>& self) {
        auto& g = parent_grad(self, 0);
        for (std::int64_t i = 0; i < len * c; ++i) g[start * c + i] += self.grad[i];
    });
}

template <typename T>
TensorT<T> gather_rows(const TensorT<T>& a, const std::vector<std::int64_t>& index, std::int64_t group) {
    require_2d(a, "gather_rows");
    if (group <= 0 || index.size() % static_cast<std::size_t>(group) != 0) {
        throw DimensionError("gather_rows: index count must be a multiple of group");
    }
    const auto r = a.rows(), c = a.cols();
    const auto out_rows = static_cast<std::int64_t>(index.size()) / group;
    std::vector<T> out(static_cast<std::size_t>(out_rows * group * c), T(0));
    auto d = a.data();
    for (std::size_t k = 0; k < index.size(); ++k) {
        const auto src = index[k];
        if (src < -1 || src >= r) throw DimensionError("gather_rows: index out of range");
        if (src >= 0) std::copy_n(d.begin() + src * c, c, out.begin() + static_cast<std::int64_t>(k) * c);
    }
    return make_op_result<T>({out_rows, group * c}, std::move(out), {a}, [index, c](NodeT<T>& self) {
        auto& g = parent_grad(self, 0);
        for (std::size_t k = 0; k < index.size(); ++k) {
            const auto src = index[k];
            if (src < 0) continue;
            for (std::int64_t j = 0; j < c; ++j) g[src * c + j] += self.grad[static_cast<std::int64_t>(k) * c + j];
        }
    });
}

template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    return mean(square(sub(a, b)));
}

template <typename T>
TensorT<T> l2_norm(const TensorT<T>& a) {
    double acc = 0;
    for (T v : a.data()) acc += double(v) * double(v);
    const T n = static_cast<T>(std::sqrt(acc));
    return make_op_result<T>({1, 1}, {n}, {a}, [n](NodeT<T>& self) {
        if (!wants_grad(self, 0) || n == T(0)) return;  // subgradient 0 at the origin
        auto& g = parent_grad(self, 0);
        const auto& x = self.parents[0]->data;
        const T s = self.grad[0] / n;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * x[i];
    });
}

template <typename T>
TensorT<T> attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v, std::int64_t heads,
                     std::int64_t seq_len) {
    require_2d(q, "attention");
    require_2d(k, "attention");
    require_2d(v, "attention");
    const auto rows = q.rows();
    if (k.rows() != rows || v.rows() != rows || q.cols() != k.cols()) {
        throw DimensionError("attention: q/k/v shapes disagree");
    }
    if (heads <= 0 || q.cols() % heads != 0 || v.cols() % heads != 0) {
        throw DimensionError("attention: widths must be divisible by the head count");
    }
    if (seq_len <= 0 || rows % seq_len != 0) throw DimensionError("attention: rows must be a multiple of seq_len");
    const auto segments = rows / seq_len;
    const auto dq = q.cols() / heads, dv = v.cols() / heads;
    const auto qc = q.cols(), vc = v.cols();
    const T scl = T(1) / std::sqrt(static_cast<T>(dq));

    using Stride = Eigen::OuterStride<>;
    using CBlock = Eigen::Map<const Mat<T>, 0, Stride>;
    using MBlock = Eigen::Map<Mat<T>, 0, Stride>;

    std::vector<T> out(static_cast<std::size_t>(rows * vc));
    // Softmax probabilities, [segments][heads][L×L].
    std::vector<T> probs(static_cast<std::size_t>(segments * heads * seq_len * seq_len));
    for (std::int64_t s = 0; s < segments; ++s) {
        for (std::int64_t h = 0; h < heads; ++h) {
            CBlock Q(q.data().data() + s * seq_len * qc + h * dq, seq_len, dq, Stride(qc));
            CBlock K(k.data().data() + s * seq_len * qc + h * dq, seq_len, dq, Stride(qc));
            CBlock V(v.data().data() + s * seq_len * vc + h * dv, seq_len, dv, Stride(vc));
            MMap<T> P(probs.data() + (s * heads + h) * seq_len * seq_len, seq_len, seq_len);
            P.noalias() = (Q * K.transpose()) * scl;
            for (std::int64_t i = 0; i < seq_len; ++i) {
                const T mx = P.row(i).maxCoeff();
                P.row(i) = (P.row(i).array() - mx).exp();
                P.row(i) /= P.row(i).sum();
            }
            MBlock O(out.data() + s * seq_len * vc + h * dv, seq_len, dv, Stride(vc));
            O.noalias() = P * V;
        }
    }
    return make_op_result<T>(
        {rows, vc}, std::move(out), {q, k, v}, [=, probs = std::move(probs)](NodeT<T>& self) {
            const bool gq = wants_grad(self, 0), gk = wants_grad(self, 1), gv = wants_grad(self, 2);
            T* dQp = gq ? parent_grad(self, 0).data() : nullptr;
            T* dKp = gk ? parent_grad(self, 1).data() : nullptr;
            T* dVp = gv ? parent_grad(self, 2).data() : nullptr;
            Mat<T> dP(seq_len, seq_len);
            for (std::int64_t s = 0; s < segments; ++s) {
                for (std::int64_t h = 0; h < heads; ++h) {
                    CBlock Q(self.parents[0]->data.data() + s * seq_len * qc + h * dq, seq_len, dq, Stride(qc));
                    CBlock K(self.parents[1]->data.data() + s * seq_len * qc + h * dq, seq_len, dq, Stride(qc));
                    CBlock V(self.parents[2]->data.data() + s * seq_len * vc + h * dv, seq_len, dv, Stride(vc));
                    CBlock dO(self.grad.data() + s * seq_len * vc + h * dv, seq_len, dv, Stride(vc));
                    CMap<T> P(probs.data() + (s * heads + h) * seq_len * seq_len, seq_len, seq_len);
                    if (dVp) {
                        MBlock dV(dVp + s * seq_len * vc + h * dv, seq_len, dv, Stride(vc));
                        dV.noalias() += P.transpose() * dO;
                    }
                    if (!dQp && !dKp) continue;
                    dP.noalias() = dO * V.transpose();
                    for (std::int64_t i = 0; i < seq_len; ++i) {
                        const T dot = (dP.row(i).array() * P.row(i).array()).sum();
                        dP.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix();
                    }
                    if (dQp) {
                        MBlock dQ(dQp + s * seq_len * qc + h * dq, seq_len, dq, Stride(qc));
                        dQ.noalias() += (dP * K) * scl;
                    }
                    if (dKp) {
                        MBlock dK(dKp + s * seq_len * qc + h * dq, seq_len, dq, Stride(qc));
                        dK.noalias() += (dP.transpose() * Q) * scl;
                    }
                }
            }
        });
}

template <typename T>
TensorT<T> lstm(const TensorT<T>& x, const TensorT<T>& w_ih, const TensorT<T>& w_hh, const TensorT<T>& bias,
                std::int64_t steps, std::int64_t batch, SequenceLayout layout, bool reverse) {
    require_2d(x, "lstm");
    const auto in = x.cols();
    const auto hid = w_hh.cols();
    if (x.rows() != steps * batch) throw DimensionError("lstm: rows must equal steps*batch");
    if (w_ih.rows() != 4 * hid || w_ih.cols() != in || w_hh.rows() != 4 * hid || bias.numel() != 4 * hid) {
        throw DimensionError("lstm: weight shapes inconsistent with input/hidden widths");
    }
    auto row_of = [=](std::int64_t step, std::int64_t item) {
        return layout == SequenceLayout::kStepMajor ? step * batch + item : item * steps + step;
    };

    // Input contributions for every row at once: [rows, 4h].
    Mat<T> xg = CMap<T>(x.data().data(), x.rows(), in) * CMap<T>(w_ih.data().data(), 4 * hid, in).transpose();
    xg.rowwise() += CMap<T>(bias.data().data(), 1, 4 * hid).row(0);
    CMap<T> Whh(w_hh.data().data(), 4 * hid, hid);

    // Per processed step: gate activations [B,4h], cell state, tanh(cell).
    std::vector<Mat<T>> gates(static_cast<std::size_t>(steps)), cells(static_cast<std::size_t>(steps)),
        tcells(static_cast<std::size_t>(steps));
    std::vector<T> out(static_cast<std::size_t>(steps * batch * hid));
    Mat<T> h = Mat<T>::Zero(batch, hid), c = Mat<T>::Zero(batch, hid);
    Mat<T> pre(batch, 4 * hid);
    auto sig = [](T v) { return T(1) / (T(1) + std::exp(-v)); };
    for (std::int64_t n = 0; n < steps; ++n) {
        const std::int64_t s = reverse ? steps - 1 - n : n;
        for (std::int64_t b = 0; b < batch; ++b) pre.row(b) = xg.row(row_of(s, b));
        pre.noalias() += h * Whh.transpose();
        Mat<T>& G = gates[n];
        G.resize(batch, 4 * hid);
        for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t j = 0; j < hid; ++j) {
                G(b, j) = sig(pre(b, j));
                G(b, hid + j) = sig(pre(b, hid + j));
                G(b, 2 * hid + j) = std::tanh(pre(b, 2 * hid + j));
                G(b, 3 * hid + j) = sig(pre(b, 3 * hid + j));
            }
        }
        c = G.middleCols(hid, hid).cwiseProduct(c) + G.leftCols(hid).cwiseProduct(G.middleCols(2 * hid, hid));
        cells[n] = c;
        tcells[n] = c.array().tanh().matrix();
        h = G.rightCols(hid).cwiseProduct(tcells[n]);
        for (std::int64_t b = 0; b < batch; ++b)
            std::copy_n(h.row(b).data(), hid, out.begin() + row_of(s, b) * hid);
    }

    return make_op_result<T>(
        {steps * batch, hid}, std::move(out), {x, w_ih, w_hh, bias},
        [=, gates = std::move(gates), cells = std::move(cells), tcells = std::move(tcells)](NodeT<T>& self) {
            CMap<T> Wih(self.parents[1]->data.data(), 4 * hid, in);
            CMap<T> Whh2(self.parents[2]->data.data(), 4 * hid, hid);
            const auto& hout = self.data;
            Mat<T> dxg(steps * batch, 4 * hid);
            Mat<T> dh_next = Mat<T>::Zero(batch, hid), dc_next = Mat<T>::Zero(batch, hid);
            Mat<T> dG(batch, 4 * hid), hprev(batch, hid);
            Mat<T> dWhh = Mat<T>::Zero(4 * hid, hid);
            for (std::int64_t n = steps - 1; n >= 0; --n) {
                const std::int64_t s = reverse ? steps - 1 - n : n;
                const Mat<T>& G = gates[n];
                for (std::int64_t b = 0; b < batch; ++b) {
                    if (n > 0) {
                        const std::int64_t sp = reverse ? steps - n : n - 1;
                        for (std::int64_t j = 0; j < hid; ++j) hprev(b, j) = hout[row_of(sp, b) * hid + j];
                    } else {
                        hprev.row(b).setZero();
                    }
                    for (std::int64_t j = 0; j < hid; ++j) {
                        const T dh = self.grad[row_of(s, b) * hid + j] + dh_next(b, j);
                        const T ig = G(b, j), fg = G(b, hid + j), gg = G(b, 2 * hid + j), og = G(b, 3 * hid + j);
                        const T tc = tcells[n](b, j);
                        const T cprev = n > 0 ? cells[n - 1](b, j) : T(0);
                        const T dc = dh * og * (T(1) - tc * tc) + dc_next(b, j);
                        dG(b, j) = dc * gg * ig * (T(1) - ig);
                        dG(b, hid + j) = dc * cprev * fg * (T(1) - fg);
                        dG(b, 2 * hid + j) = dc * ig * (T(1) - gg * gg);
                        dG(b, 3 * hid + j) = dh * tc * og * (T(1) - og);
                        dc_next(b, j) = dc * fg;
                    }
                }
                dWhh.noalias() += dG.transpose() * hprev;
                dh_next.noalias() = dG * Whh2;
                for (std::int64_t b = 0; b < batch; ++b) dxg.row(row_of(s, b)) = dG.row(b);
            }
            if (wants_grad(self, 0)) {
                MMap<T> gx(parent_grad(self, 0).data(), steps * batch, in);
                gx.noalias() += dxg * Wih;
            }
            if (wants_grad(self, 1)) {
                MMap<T> gw(parent_grad(self, 1).data(), 4 * hid, in);
                gw.noalias() += dxg.transpose() * CMap<T>(self.parents[0]->data.data(), steps * batch, in);
            }
            if (wants_grad(self, 2)) {
                MMap<T> gw(parent_grad(self, 2).data(), 4 * hid, hid);
                gw += dWhh;
            }
            if (wants_grad(self, 3)) {
                MMap<T> gb(parent_grad(self, 3).data(), 1, 4 * hid);
                gb += dxg.colwise().sum();
            }
        });
}

#define LATFLOW_INSTANTIATE_OPS(T)                                                                         \
    template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&, bool, bool);                          \
    template TensorT<T> linear(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);                    \
    template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                                         \
    template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                                         \
    template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);                                         \
    template TensorT<T> scale(const TensorT<T>&, T);                                                       \
    template TensorT<T> add_scalar(const TensorT<T>&, T);                                                  \
    template TensorT<T> exp(const TensorT<T>&);                                                            \
    template TensorT<T> log(const TensorT<T>&, T);                                                         \
    template TensorT<T> square(const TensorT<T>&);                                                         \
    template TensorT<T> abs(const TensorT<T>&);                                                            \
    template TensorT<T> sqrt(const TensorT<T>&);                                                           \
    template TensorT<T> tanh(const TensorT<T>&);                                                           \
    template TensorT<T> reciprocal(const TensorT<T>&);                                                     \
    template TensorT<T> sigmoid(const TensorT<T>&);                                                        \
    template TensorT<T> silu(const TensorT<T>&);                                                           \
    template TensorT<T> gelu(const TensorT<T>&);                                                           \
    template TensorT<T> softplus(const TensorT<T>&);                                                       \
    template TensorT<T> prelu(const TensorT<T>&, const TensorT<T>&);                                       \
    template TensorT<T> sum(const TensorT<T>&);                                                            \
    template TensorT<T> mean(const TensorT<T>&);                                                           \
    template TensorT<T> sum_rows(const TensorT<T>&);                                                       \
    template TensorT<T> sum_cols(const TensorT<T>&);                                                       \
    template TensorT<T> softmax(const TensorT<T>&, int);                                                   \
    template TensorT<T> layer_norm(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, T);            \
    template TensorT<T> reshape(const TensorT<T>&, const Shape&);                                          \
    template TensorT<T> transpose(const TensorT<T>&);                                                      \
    template TensorT<T> concat_cols(const std::vector<TensorT<T>>&);                                       \
    template TensorT<T> concat_rows(const std::vector<TensorT<T>>&);                                       \
    template TensorT<T> slice_cols(const TensorT<T>&, std::int64_t, std::int64_t);                         \
    template TensorT<T> slice_rows(const TensorT<T>&, std::int64_t, std::int64_t);                         \
    template TensorT<T> gather_rows(const TensorT<T>&, const std::vector<std::int64_t>&, std::int64_t);    \
    template TensorT<T> mse(const TensorT<T>&, const TensorT<T>&);                                         \
    template TensorT<T> l2_norm(const TensorT<T>&);                                                        \
    template TensorT<T> attention(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, std::int64_t,   \
                                  std::int64_t);                                                           \
    template TensorT<T> lstm(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,   \
                             std::int64_t, std::int64_t, SequenceLayout, bool);

LATFLOW_INSTANTIATE_OPS(float)
LATFLOW_INSTANTIATE_OPS(double)

}  // namespace latflow
