#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numeric>
#include <vector>

#include "maefuse/tensor.hpp"

namespace maefuse {

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

template <typename T>
inline void require_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape()) {
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    }
}

// Splits a shape into [outer, axis extent, inner] around one axis.
inline void axis_split(const Shape& s, int axis, long& outer, long& k, long& inner) {
    outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    k = s[static_cast<size_t>(axis)];
    inner = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

template <typename T>
inline void accumulate(TensorNode<T>& dst, const std::vector<T>& g) {
    dst.ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (identical shapes).
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape("add", a, b);
    std::vector<T> v(a.data().size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    auto out = TensorT<T>::from(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node();
    detail::wire<T>(out, "add", {a, b}, [an, bn](TensorNode<T>& self) {
        if (an->requires_grad) detail::accumulate(*an, self.grad);
        if (bn->requires_grad) detail::accumulate(*bn, self.grad);
    });
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape("sub", a, b);
    std::vector<T> v(a.data().size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    auto out = TensorT<T>::from(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node();
    detail::wire<T>(out, "sub", {a, b}, [an, bn](TensorNode<T>& self) {
        if (an->requires_grad) detail::accumulate(*an, self.grad);
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape("mul", a, b);
    std::vector<T> v(a.data().size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    auto out = TensorT<T>::from(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node();
    detail::wire<T>(out, "mul", {a, b}, [an, bn](TensorNode<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
        }
    });
    return out;
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape("div", a, b);
    std::vector<T> v(a.data().size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] / b.data()[i];
    auto out = TensorT<T>::from(a.shape(), std::move(v));
    auto an = a.node(), bn = b.node();
    detail::wire<T>(out, "div", {a, b}, [an, bn](TensorNode<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] / bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                bn->grad[i] -= self.grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise unary / scalar ops.
// ---------------------------------------------------------------------------

namespace detail {

// Shared scaffolding for unary ops: fwd maps value, dfn maps (x, y) to dy/dx.
template <typename T, class F, class D>
TensorT<T> unary_op(const char* name, const TensorT<T>& a, F fwd, D dfn) {
    std::vector<T> v(a.data().size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = fwd(a.data()[i]);
    auto out = TensorT<T>::from(a.shape(), std::move(v));
    auto an = a.node();
    // self.value is the op output; capturing the output node here would cycle
    detail::wire<T>(out, name, {a}, [an, dfn](TensorNode<T>& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            an->grad[i] += self.grad[i] * dfn(an->value[i], self.value[i]);
        }
    });
    return out;
}

} // namespace detail

template <typename T>
TensorT<T> neg(const TensorT<T>& a) {
    return detail::unary_op<T>(
        "neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    return detail::unary_op<T>(
        "add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T c) {
    return detail::unary_op<T>(
        "mul_scalar", a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
TensorT<T> pow_scalar(const TensorT<T>& a, T p) {
    return detail::unary_op<T>(
        "pow_scalar", a, [p](T x) { return std::pow(x, p); },
        [p](T x, T) { return p * std::pow(x, p - T(1)); });
}

template <typename T>
TensorT<T> log_op(const TensorT<T>& a) {
    return detail::unary_op<T>(
        "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
TensorT<T> clamp_min(const TensorT<T>& a, T lo) {
    return detail::unary_op<T>(
        "clamp_min", a, [lo](T x) { return x < lo ? lo : x; },
        [lo](T x, T) { return x > lo ? T(1) : T(0); });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    return detail::unary_op<T>(
        "relu", a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

namespace detail {
inline constexpr double inv_sqrt2 = 0.70710678118654752440;
inline constexpr double inv_sqrt2pi = 0.39894228040143267794;
} // namespace detail

// Exact GELU: 0.5 x (1 + erf(x / sqrt 2)).
template <typename T>
TensorT<T> gelu(const TensorT<T>& a) {
    using detail::inv_sqrt2;
    using detail::inv_sqrt2pi;
    return detail::unary_op<T>(
        "gelu", a,
        [](T x) {
            return static_cast<T>(0.5 * static_cast<double>(x) *
                                  (1.0 + std::erf(static_cast<double>(x) * inv_sqrt2)));
        },
        [](T x, T) {
            const double xd = static_cast<double>(x);
            const double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
            return static_cast<T>(cdf + xd * pdf);
        });
}

// ---------------------------------------------------------------------------
// Shape ops.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ContractError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    auto out = TensorT<T>::from(std::move(shape), a.data());
    auto an = a.node();
    detail::wire<T>(out, "reshape", {a}, [an](TensorNode<T>& self) { detail::accumulate(*an, self.grad); });
    return out;
}

// Replicates a leading size-1 axis n times: [1, ...] -> [n, ...].
template <typename T>
TensorT<T> broadcast0(const TensorT<T>& a, long n) {
    if (a.shape().empty() || a.shape()[0] != 1) {
        throw ContractError("broadcast0: leading axis must be 1, got " + shape_str(a.shape()));
    }
    const long block = a.numel();
    std::vector<T> v(static_cast<size_t>(n * block));
    for (long r = 0; r < n; ++r) {
        std::copy(a.data().begin(), a.data().end(), v.begin() + r * block);
    }
    Shape s = a.shape();
    s[0] = n;
    auto out = TensorT<T>::from(std::move(s), std::move(v));
    auto an = a.node();
    detail::wire<T>(out, "broadcast0", {a}, [an, n, block](TensorNode<T>& self) {
        an->ensure_grad();
        for (long r = 0; r < n; ++r) {
            const T* g = self.grad.data() + r * block;
            for (long i = 0; i < block; ++i) an->grad[static_cast<size_t>(i)] += g[i];
        }
    });
    return out;
}

template <typename T>
TensorT<T> permute(const TensorT<T>& a, const std::vector<int>& axes) {
    const Shape& in = a.shape();
    if (axes.size() != in.size()) throw ContractError("permute: axes rank mismatch");
    Shape out_shape(in.size());
    for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = in[static_cast<size_t>(axes[i])];
    const auto in_st = row_major_strides(in);
    const auto out_st = row_major_strides(out_shape);
    const long n = a.numel();
    // src index of every destination element; reused by the backward scatter
    auto src_of = std::make_shared<std::vector<long>>(static_cast<size_t>(n));
    std::vector<T> v(static_cast<size_t>(n));
    std::vector<long> idx(in.size(), 0);
    for (long dst = 0; dst < n; ++dst) {
        long rem = dst, src = 0;
        for (size_t i = 0; i < out_shape.size(); ++i) {
            const long c = rem / out_st[i];
            rem %= out_st[i];
            src += c * in_st[static_cast<size_t>(axes[i])];
        }
        (*src_of)[static_cast<size_t>(dst)] = src;
        v[static_cast<size_t>(dst)] = a.data()[static_cast<size_t>(src)];
    }
    auto out = TensorT<T>::from(std::move(out_shape), std::move(v));
    auto an = a.node();
    detail::wire<T>(out, "permute", {a}, [an, src_of](TensorNode<T>& self) {
        an->ensure_grad();
        for (size_t dst = 0; dst < self.grad.size(); ++dst) {
            an->grad[static_cast<size_t>((*src_of)[dst])] += self.grad[dst];
        }
    });
    return out;
}

template <typename T>
TensorT<T> index_select(const TensorT<T>& a, int axis, std::vector<long> indices) {
    long outer, k, inner;
    detail::axis_split(a.shape(), axis, outer, k, inner);
    for (long ix : indices) {
        if (ix < 0 || ix >= k) {
            throw ContractError("index_select: index " + std::to_string(ix) + " out of range [0," +
                                std::to_string(k) + ")");
        }
    }
    const long m = static_cast<long>(indices.size());
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] = m;
    std::vector<T> v(static_cast<size_t>(outer * m * inner));
    for (long o = 0; o < outer; ++o) {
        for (long j = 0; j < m; ++j) {
            const T* src = a.data().data() + (o * k + indices[static_cast<size_t>(j)]) * inner;
            std::copy(src, src + inner, v.begin() + (o * m + j) * inner);
        }
    }
    auto out = TensorT<T>::from(std::move(out_shape), std::move(v));
    auto an = a.node();
    auto idx = std::make_shared<std::vector<long>>(std::move(indices));
    detail::wire<T>(out, "index_select", {a}, [an, idx, outer, k, inner, m](TensorNode<T>& self) {
        an->ensure_grad();
        for (long o = 0; o < outer; ++o) {
            for (long j = 0; j < m; ++j) {
                const T* g = self.grad.data() + (o * m + j) * inner;
                T* dst = an->grad.data() + (o * k + (*idx)[static_cast<size_t>(j)]) * inner;
                for (long i = 0; i < inner; ++i) dst[i] += g[i];
            }
        }
    });
    return out;
}

template <typename T>
TensorT<T> concat(int axis, const std::vector<TensorT<T>>& parts);

template <typename T>
TensorT<T> concat(int axis, std::initializer_list<TensorT<T>> parts) {
    return concat(axis, std::vector<TensorT<T>>(parts));
}

template <typename T>
TensorT<T> concat(int axis, const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    Shape out_shape = parts[0].shape();
    long total_k = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != out_shape.size()) throw ContractError("concat: rank mismatch");
        for (size_t i = 0; i < s.size(); ++i) {
            if (static_cast<int>(i) != axis && s[i] != out_shape[i]) {
                throw ContractError("concat: shape mismatch on axis " + std::to_string(i));
            }
        }
        total_k += s[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = total_k;
    long outer, k_all, inner;
    detail::axis_split(out_shape, axis, outer, k_all, inner);
    std::vector<T> v(static_cast<size_t>(outer * k_all * inner));
    std::vector<long> ks;
    for (const auto& p : parts) ks.push_back(p.shape()[static_cast<size_t>(axis)]);
    long k_off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const long kp = ks[pi];
        for (long o = 0; o < outer; ++o) {
            const T* src = parts[pi].data().data() + o * kp * inner;
            std::copy(src, src + kp * inner, v.begin() + (o * k_all + k_off) * inner);
        }
        k_off += kp;
    }
    auto out = TensorT<T>::from(std::move(out_shape), std::move(v));
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    detail::wire<T>(out, "concat", parts, [nodes, ks, outer, k_all, inner](TensorNode<T>& self) {
        long off = 0;
        for (size_t pi = 0; pi < nodes.size(); ++pi) {
            const long kp = ks[pi];
            if (nodes[pi]->requires_grad) {
                nodes[pi]->ensure_grad();
                for (long o = 0; o < outer; ++o) {
                    const T* g = self.grad.data() + (o * k_all + off) * inner;
                    T* dst = nodes[pi]->grad.data() + o * kp * inner;
                    for (long i = 0; i < kp * inner; ++i) dst[i] += g[i];
                }
            }
            off += kp;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum_all(const TensorT<T>& a) {
    T s = T(0);
    for (T x : a.data()) s += x;
    auto out = TensorT<T>::scalar(s);
    auto an = a.node();
    detail::wire<T>(out, "sum_all", {a}, [an](TensorNode<T>& self) {
        an->ensure_grad();
        const T g = self.grad[0];
        for (T& x : an->grad) x += g;
    });
    return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& a) {
    return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
TensorT<T> sum_axis(const TensorT<T>& a, int axis, bool keepdim = false) {
    long outer, k, inner;
    detail::axis_split(a.shape(), axis, outer, k, inner);
    std::vector<T> v(static_cast<size_t>(outer * inner), T(0));
    for (long o = 0; o < outer; ++o) {
        for (long j = 0; j < k; ++j) {
            const T* src = a.data().data() + (o * k + j) * inner;
            T* dst = v.data() + o * inner;
            for (long i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    Shape out_shape = a.shape();
    if (keepdim) {
        out_shape[static_cast<size_t>(axis)] = 1;
    } else {
        out_shape.erase(out_shape.begin() + axis);
        if (out_shape.empty()) out_shape = {1};
    }
    auto out = TensorT<T>::from(std::move(out_shape), std::move(v));
    auto an = a.node();
    detail::wire<T>(out, "sum_axis", {a}, [an, outer, k, inner](TensorNode<T>& self) {
        an->ensure_grad();
        for (long o = 0; o < outer; ++o) {
            const T* g = self.grad.data() + o * inner;
            for (long j = 0; j < k; ++j) {
                T* dst = an->grad.data() + (o * k + j) * inner;
                for (long i = 0; i < inner; ++i) dst[i] += g[i];
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Softmax along one axis (max-subtracted).
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
    long outer, k, inner;
    detail::axis_split(a.shape(), axis, outer, k, inner);
    std::vector<T> v(a.data().size());
    for (long o = 0; o < outer; ++o) {
        for (long i = 0; i < inner; ++i) {
            const long base = o * k * inner + i;
            T mx = a.data()[static_cast<size_t>(base)];
            for (long j = 1; j < k; ++j) mx = std::max(mx, a.data()[static_cast<size_t>(base + j * inner)]);
            T denom = T(0);
            for (long j = 0; j < k; ++j) {
                const T e = std::exp(a.data()[static_cast<size_t>(base + j * inner)] - mx);
                v[static_cast<size_t>(base + j * inner)] = e;
                denom += e;
            }
            for (long j = 0; j < k; ++j) v[static_cast<size_t>(base + j * inner)] /= denom;
        }
    }
    auto out = TensorT<T>::from(a.shape(), std::move(v));
    auto an = a.node();
    detail::wire<T>(out, "softmax", {a}, [an, outer, k, inner](TensorNode<T>& self) {
        an->ensure_grad();
        for (long o = 0; o < outer; ++o) {
            for (long i = 0; i < inner; ++i) {
                const long base = o * k * inner + i;
                T dot = T(0);
                for (long j = 0; j < k; ++j) {
                    const size_t ix = static_cast<size_t>(base + j * inner);
                    dot += self.grad[ix] * self.value[ix];
                }
                for (long j = 0; j < k; ++j) {
                    const size_t ix = static_cast<size_t>(base + j * inner);
                    an->grad[ix] += self.value[ix] * (self.grad[ix] - dot);
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Matrix products (Eigen GEMM kernels).
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw ContractError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
    }
    const long m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> v(static_cast<size_t>(m * n));
    detail::ECMap<T> A(a.data().data(), m, k), B(b.data().data(), k, n);
    detail::EMap<T>(v.data(), m, n).noalias() = A * B;
    auto out = TensorT<T>::from({m, n}, std::move(v));
    auto an = a.node(), bn = b.node();
    detail::wire<T>(out, "matmul", {a, b}, [an, bn, m, k, n](TensorNode<T>& self) {
        detail::ECMap<T> G(self.grad.data(), m, n);
        detail::ECMap<T> A(an->value.data(), m, k), B(bn->value.data(), k, n);
        if (an->requires_grad) {
            an->ensure_grad();
            detail::EMap<T>(an->grad.data(), m, k).noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            detail::EMap<T>(bn->grad.data(), k, n).noalias() += A.transpose() * G;
        }
    });
    return out;
}

template <typename T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw ContractError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
    }
    const long nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<T> v(static_cast<size_t>(nb * m * n));
    for (long i = 0; i < nb; ++i) {
        detail::ECMap<T> A(a.data().data() + i * m * k, m, k), B(b.data().data() + i * k * n, k, n);
        detail::EMap<T>(v.data() + i * m * n, m, n).noalias() = A * B;
    }
    auto out = TensorT<T>::from({nb, m, n}, std::move(v));
    auto an = a.node(), bn = b.node();
    detail::wire<T>(out, "bmm", {a, b}, [an, bn, nb, m, k, n](TensorNode<T>& self) {
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (long i = 0; i < nb; ++i) {
            detail::ECMap<T> G(self.grad.data() + i * m * n, m, n);
            detail::ECMap<T> A(an->value.data() + i * m * k, m, k), B(bn->value.data() + i * k * n, k, n);
            if (an->requires_grad) {
                detail::EMap<T>(an->grad.data() + i * m * k, m, k).noalias() += G * B.transpose();
            }
            if (bn->requires_grad) {
                detail::EMap<T>(bn->grad.data() + i * k * n, k, n).noalias() += A.transpose() * G;
            }
        }
    });
    return out;
}

} // namespace maefuse
