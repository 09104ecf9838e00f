#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "maefuse/interp.hpp"
#include "maefuse/ops.hpp"

namespace maefuse {

// y = x . w + b with x [..., In], w [In, Out], b [Out] (b may be undefined).
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b = {}) {
    if (w.ndim() != 2) throw ContractError("linear: weight must be 2-D, got " + shape_str(w.shape()));
    const long in = w.dim(0), out_dim = w.dim(1);
    if (x.shape().back() != in) {
        throw ContractError("linear: input feature dim " + std::to_string(x.shape().back()) +
                            " != weight rows " + std::to_string(in));
    }
    const long rows = x.numel() / in;
    auto y = matmul(reshape(x, {rows, in}), w);
    if (b.defined()) y = add(y, broadcast0(reshape(b, {1, out_dim}), rows));
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    return reshape(y, out_shape);
}

// Layer normalization over the last axis.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-5)) {
    const long d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d) {
        throw ContractError("layer_norm: affine params must have " + std::to_string(d) + " values");
    }
    const long rows = x.numel() / d;
    auto xhat = std::make_shared<std::vector<T>>(x.data().size());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    std::vector<T> v(x.data().size());
    for (long r = 0; r < rows; ++r) {
        const T* px = x.data().data() + r * d;
        T mu = T(0);
        for (long i = 0; i < d; ++i) mu += px[i];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (long i = 0; i < d; ++i) var += (px[i] - mu) * (px[i] - mu);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        for (long i = 0; i < d; ++i) {
            const T xh = (px[i] - mu) * is;
            (*xhat)[static_cast<size_t>(r * d + i)] = xh;
            v[static_cast<size_t>(r * d + i)] = gamma.data()[static_cast<size_t>(i)] * xh +
                                                beta.data()[static_cast<size_t>(i)];
        }
    }
    auto out = TensorT<T>::from(x.shape(), std::move(v));
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    detail::wire<T>(out, "layer_norm", {x, gamma, beta},
                    [xn, gn, bn, xhat, inv_std, rows, d](TensorNode<T>& self) {
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (long r = 0; r < rows; ++r) {
            const T* g = self.grad.data() + r * d;
            const T* xh = xhat->data() + r * d;
            if (gn->requires_grad || bn->requires_grad) {
                for (long i = 0; i < d; ++i) {
                    if (gn->requires_grad) gn->grad[static_cast<size_t>(i)] += g[i] * xh[i];
                    if (bn->requires_grad) bn->grad[static_cast<size_t>(i)] += g[i];
                }
            }
            if (xn->requires_grad) {
                // dxhat = g * gamma; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
                T sum_dxh = T(0), sum_dxh_xh = T(0);
                for (long i = 0; i < d; ++i) {
                    const T dxh = g[i] * gn->value[static_cast<size_t>(i)];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[i];
                }
                const T is = (*inv_std)[static_cast<size_t>(r)];
                const T inv_d = T(1) / static_cast<T>(d);
                for (long i = 0; i < d; ++i) {
                    const T dxh = g[i] * gn->value[static_cast<size_t>(i)];
                    xn->grad[static_cast<size_t>(r * d + i)] +=
                        (dxh - sum_dxh * inv_d - xh[i] * sum_dxh_xh * inv_d) * is;
                }
            }
        }
    });
    return out;
}

// Group normalization on [N, C, H, W] with per-channel affine.
template <typename T>
TensorT<T> group_norm(const TensorT<T>& x, int groups, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps = T(1e-5)) {
    if (x.ndim() != 4) throw ContractError("group_norm: input must be [N,C,H,W]");
    const long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c % groups != 0) {
        throw ContractError("group_norm: channels " + std::to_string(c) + " not divisible by " +
                            std::to_string(groups) + " groups");
    }
    if (gamma.numel() != c || beta.numel() != c) {
        throw ContractError("group_norm: affine params must have " + std::to_string(c) + " values");
    }
    const long cg = c / groups;       // channels per group
    const long m = cg * h * w;        // elements per (sample, group)
    const long ngroups = n * groups;
    auto xhat = std::make_shared<std::vector<T>>(x.data().size());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(ngroups));
    std::vector<T> v(x.data().size());
    for (long gidx = 0; gidx < ngroups; ++gidx) {
        const T* px = x.data().data() + gidx * m;
        T mu = T(0);
        for (long i = 0; i < m; ++i) mu += px[i];
        mu /= static_cast<T>(m);
        T var = T(0);
        for (long i = 0; i < m; ++i) var += (px[i] - mu) * (px[i] - mu);
        var /= static_cast<T>(m);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(gidx)] = is;
        const long c0 = (gidx % groups) * cg;
        for (long i = 0; i < m; ++i) {
            const T xh = (px[i] - mu) * is;
            (*xhat)[static_cast<size_t>(gidx * m + i)] = xh;
            const long ch = c0 + i / (h * w);
            v[static_cast<size_t>(gidx * m + i)] =
                gamma.data()[static_cast<size_t>(ch)] * xh + beta.data()[static_cast<size_t>(ch)];
        }
    }
    auto out = TensorT<T>::from(x.shape(), std::move(v));
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    detail::wire<T>(out, "group_norm", {x, gamma, beta},
                    [xn, gn, bn, xhat, inv_std, ngroups, groups, cg, h, w, m](TensorNode<T>& self) {
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (long gidx = 0; gidx < ngroups; ++gidx) {
            const T* g = self.grad.data() + gidx * m;
            const T* xh = xhat->data() + gidx * m;
            const long c0 = (gidx % groups) * cg;
            if (gn->requires_grad || bn->requires_grad) {
                for (long i = 0; i < m; ++i) {
                    const long ch = c0 + i / (h * w);
                    if (gn->requires_grad) gn->grad[static_cast<size_t>(ch)] += g[i] * xh[i];
                    if (bn->requires_grad) bn->grad[static_cast<size_t>(ch)] += g[i];
                }
            }
            if (xn->requires_grad) {
                T sum_dxh = T(0), sum_dxh_xh = T(0);
                for (long i = 0; i < m; ++i) {
                    const long ch = c0 + i / (h * w);
                    const T dxh = g[i] * gn->value[static_cast<size_t>(ch)];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[i];
                }
                const T is = (*inv_std)[static_cast<size_t>(gidx)];
                const T inv_m = T(1) / static_cast<T>(m);
                for (long i = 0; i < m; ++i) {
                    const long ch = c0 + i / (h * w);
                    const T dxh = g[i] * gn->value[static_cast<size_t>(ch)];
                    xn->grad[static_cast<size_t>(gidx * m + i)] +=
                        (dxh - sum_dxh * inv_m - xh[i] * sum_dxh_xh * inv_m) * is;
                }
            }
        }
    });
    return out;
}

namespace detail {

// x_n [C,H,W] -> cols [C*kh*kw, Ho*Wo] with zero padding.
template <typename T>
void im2col(const T* x, long c, long h, long w, long kh, long kw, long stride, long pad,
            long ho, long wo, T* cols) {
    for (long ch = 0; ch < c; ++ch) {
        for (long ki = 0; ki < kh; ++ki) {
            for (long kj = 0; kj < kw; ++kj) {
                T* row = cols + ((ch * kh + ki) * kw + kj) * ho * wo;
                for (long oy = 0; oy < ho; ++oy) {
                    const long iy = oy * stride - pad + ki;
                    for (long ox = 0; ox < wo; ++ox) {
                        const long ix = ox * stride - pad + kj;
                        row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                                ? x[(ch * h + iy) * w + ix]
                                                : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, long c, long h, long w, long kh, long kw, long stride, long pad,
                long ho, long wo, T* dx) {
    for (long ch = 0; ch < c; ++ch) {
        for (long ki = 0; ki < kh; ++ki) {
            for (long kj = 0; kj < kw; ++kj) {
                const T* row = cols + ((ch * kh + ki) * kw + kj) * ho * wo;
                for (long oy = 0; oy < ho; ++oy) {
                    const long iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    for (long ox = 0; ox < wo; ++ox) {
                        const long ix = ox * stride - pad + kj;
                        if (ix < 0 || ix >= w) continue;
                        dx[(ch * h + iy) * w + ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

// 2-D convolution, x [N,C,H,W], w [K,C,kh,kw], b [K] (optional), zero padding.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, long stride = 1,
                  long pad = 0) {
    if (x.ndim() != 4) throw ContractError("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
    if (w.ndim() != 4) throw ContractError("conv2d: kernel must be [K,C,kh,kw], got " + shape_str(w.shape()));
    const long n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const long k = w.dim(0), kc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (kc != c) {
        throw ContractError("conv2d: kernel expects " + std::to_string(kc) + " input channels, input has " +
                            std::to_string(c));
    }
    if (kh > h + 2 * pad || kw > ww + 2 * pad) {
        throw ContractError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                            " exceeds padded input " + std::to_string(h + 2 * pad) + "x" +
                            std::to_string(ww + 2 * pad));
    }
    if (b.defined() && b.numel() != k) {
        throw ContractError("conv2d: bias must have " + std::to_string(k) + " values");
    }
    const long ho = (h + 2 * pad - kh) / stride + 1;
    const long wo = (ww + 2 * pad - kw) / stride + 1;
    const long ck = c * kh * kw;
    std::vector<T> v(static_cast<size_t>(n * k * ho * wo));
    std::vector<T> cols(static_cast<size_t>(ck * ho * wo));
    detail::ECMap<T> W(w.data().data(), k, ck);
    for (long i = 0; i < n; ++i) {
        detail::im2col(x.data().data() + i * c * h * ww, c, h, ww, kh, kw, stride, pad, ho, wo,
                       cols.data());
        detail::ECMap<T> C(cols.data(), ck, ho * wo);
        detail::EMap<T> Y(v.data() + i * k * ho * wo, k, ho * wo);
        Y.noalias() = W * C;
        if (b.defined()) {
            for (long kk = 0; kk < k; ++kk) Y.row(kk).array() += b.data()[static_cast<size_t>(kk)];
        }
    }
    auto out = TensorT<T>::from({n, k, ho, wo}, std::move(v));
    auto xn = x.node(), wn = w.node();
    auto bnode = b.defined() ? b.node() : nullptr;
    std::vector<TensorT<T>> inputs = b.defined() ? std::vector<TensorT<T>>{x, w, b}
                                                 : std::vector<TensorT<T>>{x, w};
    detail::wire<T>(out, "conv2d", inputs,
                    [xn, wn, bnode, n, c, h, ww, k, kh, kw, stride, pad, ho, wo, ck](TensorNode<T>& self) {
        std::vector<T> cols(static_cast<size_t>(ck * ho * wo));
        std::vector<T> dcols(static_cast<size_t>(ck * ho * wo));
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        if (bnode && bnode->requires_grad) bnode->ensure_grad();
        detail::ECMap<T> W(wn->value.data(), k, ck);
        for (long i = 0; i < n; ++i) {
            detail::ECMap<T> G(self.grad.data() + i * k * ho * wo, k, ho * wo);
            if (wn->requires_grad) {
                detail::im2col(xn->value.data() + i * c * h * ww, c, h, ww, kh, kw, stride, pad, ho,
                               wo, cols.data());
                detail::ECMap<T> C(cols.data(), ck, ho * wo);
                detail::EMap<T>(wn->grad.data(), k, ck).noalias() += G * C.transpose();
            }
            if (bnode && bnode->requires_grad) {
                for (long kk = 0; kk < k; ++kk) bnode->grad[static_cast<size_t>(kk)] += G.row(kk).sum();
            }
            if (xn->requires_grad) {
                detail::EMap<T>(dcols.data(), ck, ho * wo).noalias() = W.transpose() * G;
                detail::col2im_add(dcols.data(), c, h, ww, kh, kw, stride, pad, ho, wo,
                                   xn->grad.data() + i * c * h * ww);
            }
        }
    });
    return out;
}

// 2x2 max pooling with stride 2; odd trailing rows/cols are dropped.
template <typename T>
TensorT<T> maxpool2x2(const TensorT<T>& x) {
    if (x.ndim() != 4) throw ContractError("maxpool2x2: input must be [N,C,H,W]");
    const long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const long ho = h / 2, wo = w / 2;
    std::vector<T> v(static_cast<size_t>(n * c * ho * wo));
    auto argmax = std::make_shared<std::vector<long>>(v.size());
    for (long nc = 0; nc < n * c; ++nc) {
        const T* px = x.data().data() + nc * h * w;
        for (long oy = 0; oy < ho; ++oy) {
            for (long ox = 0; ox < wo; ++ox) {
                long best = (2 * oy) * w + 2 * ox;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const long ix = (2 * oy + dy) * w + 2 * ox + dx;
                        if (px[ix] > px[best]) best = ix;
                    }
                }
                const size_t oix = static_cast<size_t>(nc * ho * wo + oy * wo + ox);
                v[oix] = px[best];
                (*argmax)[oix] = nc * h * w + best;
            }
        }
    }
    auto out = TensorT<T>::from({n, c, ho, wo}, std::move(v));
    auto xn = x.node();
    detail::wire<T>(out, "maxpool2x2", {x}, [xn, argmax](TensorNode<T>& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            xn->grad[static_cast<size_t>((*argmax)[i])] += self.grad[i];
        }
    });
    return out;
}

// Nearest-neighbor 2x upsampling.
template <typename T>
TensorT<T> upsample_nearest2x(const TensorT<T>& x) {
    if (x.ndim() != 4) throw ContractError("upsample_nearest2x: input must be [N,C,H,W]");
    const long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<T> v(static_cast<size_t>(n * c * 4 * h * w));
    for (long nc = 0; nc < n * c; ++nc) {
        const T* px = x.data().data() + nc * h * w;
        T* py = v.data() + nc * 4 * h * w;
        for (long y = 0; y < h; ++y) {
            for (long xx = 0; xx < w; ++xx) {
                const T val = px[y * w + xx];
                py[(2 * y) * 2 * w + 2 * xx] = val;
                py[(2 * y) * 2 * w + 2 * xx + 1] = val;
                py[(2 * y + 1) * 2 * w + 2 * xx] = val;
                py[(2 * y + 1) * 2 * w + 2 * xx + 1] = val;
            }
        }
    }
    auto out = TensorT<T>::from({n, c, 2 * h, 2 * w}, std::move(v));
    auto xn = x.node();
    detail::wire<T>(out, "upsample_nearest2x", {x}, [xn, n, c, h, w](TensorNode<T>& self) {
        xn->ensure_grad();
        for (long nc = 0; nc < n * c; ++nc) {
            const T* g = self.grad.data() + nc * 4 * h * w;
            T* dst = xn->grad.data() + nc * h * w;
            for (long y = 0; y < h; ++y) {
                for (long xx = 0; xx < w; ++xx) {
                    dst[y * w + xx] += g[(2 * y) * 2 * w + 2 * xx] + g[(2 * y) * 2 * w + 2 * xx + 1] +
                                       g[(2 * y + 1) * 2 * w + 2 * xx] +
                                       g[(2 * y + 1) * 2 * w + 2 * xx + 1];
                }
            }
        }
    });
    return out;
}

// Bilinear resize of [N,C,H,W] to [N,C,ho,wo] (half-pixel centers).
template <typename T>
TensorT<T> resize_bilinear(const TensorT<T>& x, long ho, long wo) {
    if (x.ndim() != 4) throw ContractError("resize_bilinear: input must be [N,C,H,W]");
    const long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    auto ty = std::make_shared<std::vector<detail::ResizeTap>>(detail::resize_taps(h, ho));
    auto tx = std::make_shared<std::vector<detail::ResizeTap>>(detail::resize_taps(w, wo));
    std::vector<T> v(static_cast<size_t>(n * c * ho * wo));
    for (long nc = 0; nc < n * c; ++nc) {
        const T* px = x.data().data() + nc * h * w;
        T* py = v.data() + nc * ho * wo;
        for (long oy = 0; oy < ho; ++oy) {
            const auto& ry = (*ty)[static_cast<size_t>(oy)];
            for (long ox = 0; ox < wo; ++ox) {
                const auto& rx = (*tx)[static_cast<size_t>(ox)];
                const double v00 = px[ry.lo * w + rx.lo], v01 = px[ry.lo * w + rx.hi];
                const double v10 = px[ry.hi * w + rx.lo], v11 = px[ry.hi * w + rx.hi];
                const double top = v00 + (v01 - v00) * rx.frac;
                const double bot = v10 + (v11 - v10) * rx.frac;
                py[oy * wo + ox] = static_cast<T>(top + (bot - top) * ry.frac);
            }
        }
    }
    auto out = TensorT<T>::from({n, c, ho, wo}, std::move(v));
    auto xn = x.node();
    detail::wire<T>(out, "resize_bilinear", {x}, [xn, ty, tx, n, c, h, w, ho, wo](TensorNode<T>& self) {
        xn->ensure_grad();
        for (long nc = 0; nc < n * c; ++nc) {
            const T* g = self.grad.data() + nc * ho * wo;
            T* dst = xn->grad.data() + nc * h * w;
            for (long oy = 0; oy < ho; ++oy) {
                const auto& ry = (*ty)[static_cast<size_t>(oy)];
                for (long ox = 0; ox < wo; ++ox) {
                    const auto& rx = (*tx)[static_cast<size_t>(ox)];
                    const double gv = g[oy * wo + ox];
                    dst[ry.lo * w + rx.lo] += static_cast<T>(gv * (1 - ry.frac) * (1 - rx.frac));
                    dst[ry.lo * w + rx.hi] += static_cast<T>(gv * (1 - ry.frac) * rx.frac);
                    dst[ry.hi * w + rx.lo] += static_cast<T>(gv * ry.frac * (1 - rx.frac));
                    dst[ry.hi * w + rx.hi] += static_cast<T>(gv * ry.frac * rx.frac);
                }
            }
        }
    });
    return out;
}

template <typename T>
TensorT<T> upsample_bilinear2x(const TensorT<T>& x) {
    return resize_bilinear(x, x.dim(2) * 2, x.dim(3) * 2);
}

// ---------------------------------------------------------------------------
// Multi-head attention.
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionParamsT {
    TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo; // w: [D_in, D], b: [D]
};

using AttentionParams = AttentionParamsT<float>;

// Scaled dot-product attention with queries from q [N,Tq,D] and keys/values
// from kv [N,Tkv,D]. Self-attention passes the same tensor for both.
template <typename T>
TensorT<T> multi_head_attention(const TensorT<T>& q, const TensorT<T>& kv,
                                const AttentionParamsT<T>& p, int heads) {
    if (q.ndim() != 3 || kv.ndim() != 3) {
        throw ContractError("multi_head_attention: inputs must be [N,T,D]");
    }
    const long n = q.dim(0), tq = q.dim(1), d = p.wq.dim(1);
    const long tkv = kv.dim(1);
    if (kv.dim(0) != n) throw ContractError("multi_head_attention: batch mismatch");
    if (d % heads != 0) {
        throw ConfigError("multi_head_attention: model dim " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) + " heads");
    }
    const long dh = d / heads;
    auto split_heads = [&](const TensorT<T>& t, long tlen) {
        return reshape(permute(reshape(t, {n, tlen, static_cast<long>(heads), dh}), {0, 2, 1, 3}),
                       {n * heads, tlen, dh});
    };
    auto qh = split_heads(linear(q, p.wq, p.bq), tq);
    auto kh = split_heads(linear(kv, p.wk, p.bk), tkv);
    auto vh = split_heads(linear(kv, p.wv, p.bv), tkv);
    auto scores = mul_scalar(bmm(qh, permute(kh, {0, 2, 1})),
                             static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto attn = softmax(scores, 2);
    auto ctx = bmm(attn, vh); // [N*heads, Tq, dh]
    auto merged = reshape(permute(reshape(ctx, {n, static_cast<long>(heads), tq, dh}), {0, 2, 1, 3}),
                          {n, tq, d});
    return linear(merged, p.wo, p.bo);
}

} // namespace maefuse
