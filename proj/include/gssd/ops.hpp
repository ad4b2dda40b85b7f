#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gssd/kernels.hpp"
#include "gssd/parallel.hpp"
#include "gssd/tensor.hpp"

namespace gssd {

enum class Padding { Zero, Replicate };

namespace ops {

namespace raw {

template <class T>
inline void add_scalar(T* y, T v, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += v;
}

// y[i] += a * x[i * stride]
template <class T>
inline void axpy_strided(T* y, const T* x, T a, int64_t n, int64_t stride) {
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[i * stride];
}

template <class T>
inline T dot_strided(const T* x, const T* y, int64_t n, int64_t stride) {
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += x[i] * y[i * stride];
    return acc;
}

// Same-size separable correlation of one H x W plane with a symmetric-length
// 1-D kernel (2*radius+1 taps) applied along x then y. `mid` is an H*W
// scratch buffer, `rowbuf` holds W + 2*radius entries.
template <class T>
void separable_plane(const T* src, T* dst, int64_t H, int64_t W, const T* k, int64_t radius,
                     Padding pad, T* mid, T* rowbuf) {
    const auto& kt = kernels::table<T>();
    const int64_t taps = 2 * radius + 1;
    for (int64_t y = 0; y < H; ++y) {
        const T* srow = src + y * W;
        for (int64_t j = 0; j < W + 2 * radius; ++j) {
            int64_t s = j - radius;
            if (s < 0) s = pad == Padding::Replicate ? 0 : -1;
            if (s > W - 1) s = pad == Padding::Replicate ? W - 1 : -1;
            rowbuf[j] = s < 0 ? T(0) : srow[s];
        }
        T* mrow = mid + y * W;
        std::fill(mrow, mrow + W, T(0));
        for (int64_t t = 0; t < taps; ++t) kt.axpy(mrow, rowbuf + t, k[t], W);
    }
    for (int64_t y = 0; y < H; ++y) {
        T* drow = dst + y * W;
        std::fill(drow, drow + W, T(0));
        for (int64_t t = 0; t < taps; ++t) {
            int64_t s = y + t - radius;
            if (s < 0 || s >= H) {
                if (pad == Padding::Zero) continue;
                s = std::clamp<int64_t>(s, 0, H - 1);
            }
            kt.axpy(drow, mid + s * W, k[t], W);
        }
    }
}

// Adjoint of separable_plane: accumulates into dsrc. `dmid` is H*W scratch,
// `padbuf` holds W + 2*radius entries.
template <class T>
void separable_plane_adjoint(const T* ddst, T* dsrc, int64_t H, int64_t W, const T* k,
                             int64_t radius, Padding pad, T* dmid, T* padbuf) {
    const auto& kt = kernels::table<T>();
    const int64_t taps = 2 * radius + 1;
    std::fill(dmid, dmid + H * W, T(0));
    for (int64_t y = 0; y < H; ++y) {
        const T* drow = ddst + y * W;
        for (int64_t t = 0; t < taps; ++t) {
            int64_t s = y + t - radius;
            if (s < 0 || s >= H) {
                if (pad == Padding::Zero) continue;
                s = std::clamp<int64_t>(s, 0, H - 1);
            }
            kt.axpy(dmid + s * W, drow, k[t], W);
        }
    }
    for (int64_t y = 0; y < H; ++y) {
        std::fill(padbuf, padbuf + W + 2 * radius, T(0));
        for (int64_t t = 0; t < taps; ++t) kt.axpy(padbuf + t, dmid + y * W, k[t], W);
        T* srow = dsrc + y * W;
        for (int64_t j = 0; j < W + 2 * radius; ++j) {
            int64_t s = j - radius;
            if (s < 0 || s > W - 1) {
                if (pad == Padding::Zero) continue;
                s = std::clamp<int64_t>(s, 0, W - 1);
            }
            srow[s] += padbuf[j];
        }
    }
}

}  // namespace raw

inline int64_t conv_out_extent(int64_t in, int64_t pad, int64_t k, int64_t stride) {
    return (in + 2 * pad - k) / stride + 1;
}

// ---------------------------------------------------------------------------
// conv2d: grouped 2-D cross-correlation, zero padding.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, int64_t stride,
                 int64_t padding, int64_t groups = 1) {
    const Shape xs = input.shape();
    const Shape ws = weights.shape();
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0, got " + std::to_string(padding));
    if (groups < 1) throw std::invalid_argument("conv2d: groups must be >= 1, got " + std::to_string(groups));
    if (xs.c % groups != 0)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(xs.c) +
                                    " not divisible by groups " + std::to_string(groups));
    if (ws.n % groups != 0)
        throw std::invalid_argument("conv2d: output channels " + std::to_string(ws.n) +
                                    " not divisible by groups " + std::to_string(groups));
    if (ws.c != xs.c / groups)
        throw std::invalid_argument("conv2d: weight in-channels " + std::to_string(ws.c) +
                                    " != input channels per group " + std::to_string(xs.c / groups));
    const int64_t OH = conv_out_extent(xs.h, padding, ws.h, stride);
    const int64_t OW = conv_out_extent(xs.w, padding, ws.w, stride);
    if (OH < 1 || OW < 1)
        throw std::invalid_argument("conv2d: kernel " + std::to_string(ws.h) + "x" + std::to_string(ws.w) +
                                    " exceeds padded input " + std::to_string(xs.h + 2 * padding) + "x" +
                                    std::to_string(xs.w + 2 * padding));

    Tensor<T> out(Shape{xs.n, ws.n, OH, OW});
    const int64_t cpg = xs.c / groups;  // channels per group
    const int64_t opg = ws.n / groups;  // outputs per group
    const T* X = input.data();
    const T* Wt = weights.data();
    T* Y = out.data();
    const auto& kt = kernels::table<T>();

    auto x_plane = [&](int64_t b, int64_t c) { return X + (b * xs.c + c) * xs.plane(); };
    auto w_at = [&](int64_t oc, int64_t icl) { return Wt + (oc * cpg + icl) * ws.plane(); };

    parallel_for(xs.n * ws.n, [&](int64_t job) {
        const int64_t b = job / ws.n;
        const int64_t oc = job % ws.n;
        const int64_t g = oc / opg;
        T* yplane = Y + (b * ws.n + oc) * OH * OW;
        for (int64_t icl = 0; icl < cpg; ++icl) {
            const T* xp = x_plane(b, g * cpg + icl);
            const T* wp = w_at(oc, icl);
            for (int64_t kh = 0; kh < ws.h; ++kh) {
                // valid output rows for this tap row
                for (int64_t oh = 0; oh < OH; ++oh) {
                    const int64_t ih = oh * stride + kh - padding;
                    if (ih < 0 || ih >= xs.h) continue;
                    T* yrow = yplane + oh * OW;
                    const T* xrow = xp + ih * xs.w;
                    for (int64_t kw = 0; kw < ws.w; ++kw) {
                        const T wv = wp[kh * ws.w + kw];
                        if (wv == T(0)) continue;
                        const int64_t s0 = kw - padding;
                        // valid ow: 0 <= ow*stride + s0 < W
                        int64_t o0 = s0 < 0 ? (-s0 + stride - 1) / stride : 0;
                        int64_t o1 = std::min<int64_t>(OW - 1, s0 <= xs.w - 1 ? (xs.w - 1 - s0) / stride : -1);
                        if (o1 < o0) continue;
                        const int64_t cnt = o1 - o0 + 1;
                        if (stride == 1)
                            kt.axpy(yrow + o0, xrow + o0 + s0, wv, cnt);
                        else if (stride == 2)
                            kt.axpy_in_s2(yrow + o0, xrow + 2 * o0 + s0, wv, cnt);
                        else
                            raw::axpy_strided(yrow + o0, xrow + o0 * stride + s0, wv, cnt, stride);
                    }
                }
            }
        }
    });

    const bool need_x = input.on_tape();
    const bool need_w = weights.on_tape();
    auto xh = input.handle();
    auto wh = weights.handle();
    detail::attach_node<T>(out, "conv2d", {xh, wh}, [=](TensorData<T>& o) {
        const auto& ktb = kernels::table<T>();
        const T* dY = o.grad.data();
        const int64_t OHh = o.shape.h, OWw = o.shape.w;
        if (need_x) {
            xh->ensure_grad();
            T* dX = xh->grad.data();
            parallel_for(xs.n * xs.c, [&](int64_t job) {
                const int64_t b = job / xs.c;
                const int64_t ic = job % xs.c;
                const int64_t g = ic / cpg;
                const int64_t icl = ic % cpg;
                T* dxp = dX + (b * xs.c + ic) * xs.plane();
                for (int64_t oc = g * opg; oc < (g + 1) * opg; ++oc) {
                    const T* wp = wh->values.data() + (oc * cpg + icl) * ws.plane();
                    const T* dyp = dY + (b * ws.n + oc) * OHh * OWw;
                    for (int64_t kh = 0; kh < ws.h; ++kh) {
                        for (int64_t oh = 0; oh < OHh; ++oh) {
                            const int64_t ih = oh * stride + kh - padding;
                            if (ih < 0 || ih >= xs.h) continue;
                            T* dxrow = dxp + ih * xs.w;
                            const T* dyrow = dyp + oh * OWw;
                            for (int64_t kw = 0; kw < ws.w; ++kw) {
                                const T wv = wp[kh * ws.w + kw];
                                if (wv == T(0)) continue;
                                const int64_t s0 = kw - padding;
                                int64_t o0 = s0 < 0 ? (-s0 + stride - 1) / stride : 0;
                                int64_t o1 = std::min<int64_t>(OWw - 1, s0 <= xs.w - 1 ? (xs.w - 1 - s0) / stride : -1);
                                if (o1 < o0) continue;
                                const int64_t cnt = o1 - o0 + 1;
                                if (stride == 1)
                                    ktb.axpy(dxrow + o0 + s0, dyrow + o0, wv, cnt);
                                else if (stride == 2)
                                    ktb.axpy_out_s2(dxrow + 2 * o0 + s0, dyrow + o0, wv, cnt);
                                else
                                    for (int64_t i = 0; i < cnt; ++i)
                                        dxrow[(o0 + i) * stride + s0] += wv * dyrow[o0 + i];
                            }
                        }
                    }
                }
            });
        }
        if (need_w) {
            wh->ensure_grad();
            T* dW = wh->grad.data();
            parallel_for(ws.n * cpg, [&](int64_t job) {
                const int64_t oc = job / cpg;
                const int64_t icl = job % cpg;
                const int64_t g = oc / opg;
                const int64_t ic = g * cpg + icl;
                T* dwp = dW + (oc * cpg + icl) * ws.plane();
                for (int64_t kh = 0; kh < ws.h; ++kh) {
                    for (int64_t kw = 0; kw < ws.w; ++kw) {
                        const int64_t s0 = kw - padding;
                        T acc = 0;
                        for (int64_t b = 0; b < xs.n; ++b) {
                            const T* xp = xh->values.data() + (b * xs.c + ic) * xs.plane();
                            const T* dyp = dY + (b * ws.n + oc) * OHh * OWw;
                            for (int64_t oh = 0; oh < OHh; ++oh) {
                                const int64_t ih = oh * stride + kh - padding;
                                if (ih < 0 || ih >= xs.h) continue;
                                int64_t o0 = s0 < 0 ? (-s0 + stride - 1) / stride : 0;
                                int64_t o1 = std::min<int64_t>(OWw - 1, s0 <= xs.w - 1 ? (xs.w - 1 - s0) / stride : -1);
                                if (o1 < o0) continue;
                                const int64_t cnt = o1 - o0 + 1;
                                const T* dyrow = dyp + oh * OWw;
                                const T* xrow = xp + ih * xs.w;
                                if (stride == 1)
                                    acc += ktb.dot(dyrow + o0, xrow + o0 + s0, cnt);
                                else if (stride == 2)
                                    acc += ktb.dot_in_s2(dyrow + o0, xrow + 2 * o0 + s0, cnt);
                                else
                                    acc += raw::dot_strided(dyrow + o0, xrow + o0 * stride + s0, cnt, stride);
                            }
                        }
                        dwp[kh * ws.w + kw] += acc;
                    }
                }
            });
        }
    });
    return out;
}

// One kernel per input channel; channel i of the output depends only on
// channel i of the input.
template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& kernels_, int64_t stride,
                           int64_t padding) {
    if (kernels_.shape().n != input.shape().c)
        throw std::invalid_argument("depthwise_conv2d: kernel count " + std::to_string(kernels_.shape().n) +
                                    " != channel count " + std::to_string(input.shape().c));
    return conv2d(input, kernels_, stride, padding, input.shape().c);
}

// ---------------------------------------------------------------------------
// pointwise_conv: 1x1 channel mixing, kept as a dedicated GEMM-shaped path.
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> pointwise_conv(const Tensor<T>& input, const Tensor<T>& weights) {
    const Shape xs = input.shape();
    const Shape ws = weights.shape();
    if (ws.h != 1 || ws.w != 1)
        throw std::invalid_argument("pointwise_conv: weights must be 1x1, got " + to_string(ws));
    if (ws.c != xs.c)
        throw std::invalid_argument("pointwise_conv: weight in-channels " + std::to_string(ws.c) +
                                    " != input channels " + std::to_string(xs.c));
    const int64_t P = xs.plane();
    Tensor<T> out(Shape{xs.n, ws.n, xs.h, xs.w});
    const T* X = input.data();
    const T* Wt = weights.data();
    T* Y = out.data();
    const auto& kt = kernels::table<T>();

    parallel_for(xs.n * ws.n, [&](int64_t job) {
        const int64_t b = job / ws.n;
        const int64_t oc = job % ws.n;
        T* yp = Y + (b * ws.n + oc) * P;
        const T* xb = X + b * xs.c * P;
        const T* wrow = Wt + oc * xs.c;
        for (int64_t ic = 0; ic < xs.c; ++ic) kt.axpy(yp, xb + ic * P, wrow[ic], P);
    });

    const bool need_x = input.on_tape();
    const bool need_w = weights.on_tape();
    auto xh = input.handle();
    auto wh = weights.handle();
    detail::attach_node<T>(out, "pointwise_conv", {xh, wh}, [=](TensorData<T>& o) {
        const auto& ktb = kernels::table<T>();
        const T* dY = o.grad.data();
        if (need_x) {
            xh->ensure_grad();
            T* dX = xh->grad.data();
            parallel_for(xs.n * xs.c, [&](int64_t job) {
                const int64_t b = job / xs.c;
                const int64_t ic = job % xs.c;
                T* dxp = dX + (b * xs.c + ic) * P;
                const T* dyb = dY + b * ws.n * P;
                for (int64_t oc = 0; oc < ws.n; ++oc)
                    ktb.axpy(dxp, dyb + oc * P, wh->values[static_cast<size_t>(oc * xs.c + ic)], P);
            });
        }
        if (need_w) {
            wh->ensure_grad();
            T* dW = wh->grad.data();
            parallel_for(ws.n * xs.c, [&](int64_t job) {
                const int64_t oc = job / xs.c;
                const int64_t ic = job % xs.c;
                T acc = 0;
                for (int64_t b = 0; b < xs.n; ++b)
                    acc += ktb.dot(dY + (b * ws.n + oc) * P, xh->values.data() + (b * xs.c + ic) * P, P);
                dW[oc * xs.c + ic] += acc;
            });
        }
    });
    return out;
}

// Fully connected head on (B, C, 1, 1) activations. weight is (K, C, 1, 1),
// bias (1, K, 1, 1).
template <class T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    const Shape xs = input.shape();
    const Shape ws = weight.shape();
    if (xs.h != 1 || xs.w != 1)
        throw std::invalid_argument("linear: expected pooled (B,C,1,1) input, got " + to_string(xs));
    if (ws.c != xs.c)
        throw std::invalid_argument("linear: weight in-features " + std::to_string(ws.c) +
                                    " != input features " + std::to_string(xs.c));
    if (bias.numel() != ws.n)
        throw std::invalid_argument("linear: bias length " + std::to_string(bias.numel()) +
                                    " != out features " + std::to_string(ws.n));
    const int64_t B = xs.n, C = xs.c, K = ws.n;
    Tensor<T> out(Shape{B, K, 1, 1});
    const auto& kt = kernels::table<T>();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t k = 0; k < K; ++k)
            out.data()[b * K + k] = bias.data()[k] + kt.dot(weight.data() + k * C, input.data() + b * C, C);

    const bool need_x = input.on_tape(), need_w = weight.on_tape(), need_b = bias.on_tape();
    auto xh = input.handle();
    auto wh = weight.handle();
    auto bh = bias.handle();
    detail::attach_node<T>(out, "linear", {xh, wh, bh}, [=](TensorData<T>& o) {
        const auto& ktb = kernels::table<T>();
        const T* dY = o.grad.data();
        if (need_x) {
            xh->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t k = 0; k < K; ++k)
                    ktb.axpy(xh->grad.data() + b * C, wh->values.data() + k * C, dY[b * K + k], C);
        }
        if (need_w) {
            wh->ensure_grad();
            for (int64_t k = 0; k < K; ++k)
                for (int64_t b = 0; b < B; ++b)
                    ktb.axpy(wh->grad.data() + k * C, xh->values.data() + b * C, dY[b * K + k], C);
        }
        if (need_b) {
            bh->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t k = 0; k < K; ++k) bh->grad[static_cast<size_t>(k)] += dY[b * K + k];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// batchnorm
// ---------------------------------------------------------------------------
template <class T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;
};

template <class T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormState<T>& state, bool training, T momentum = T(0.9),
                    T eps = T(1e-5)) {
    const Shape xs = input.shape();
    if (xs.n == 0) throw std::invalid_argument("batchnorm: zero batch size");
    if (gamma.numel() != xs.c || beta.numel() != xs.c)
        throw std::invalid_argument("batchnorm: gamma/beta length " + std::to_string(gamma.numel()) +
                                    " != channel count " + std::to_string(xs.c));
    if (static_cast<int64_t>(state.running_mean.size()) != xs.c ||
        static_cast<int64_t>(state.running_var.size()) != xs.c)
        throw std::invalid_argument("batchnorm: running statistics not sized to channel count " +
                                    std::to_string(xs.c));

    const int64_t P = xs.plane();
    const int64_t N = xs.n * P;  // elements per channel
    Tensor<T> out(xs);
    const T* X = input.data();
    T* Y = out.data();
    const auto& kt = kernels::table<T>();

    // Per-channel normalization constants; saved for the backward closure.
    auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(xs.c));
    auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(xs.c));

    parallel_for(xs.c, [&](int64_t c) {
        T m, v;
        if (training) {
            T s = 0;
            for (int64_t b = 0; b < xs.n; ++b) s += kt.sum(X + (b * xs.c + c) * P, P);
            m = s / static_cast<T>(N);
            T sq = 0;
            for (int64_t b = 0; b < xs.n; ++b) sq += kt.sumsq_centered(X + (b * xs.c + c) * P, m, P);
            v = sq / static_cast<T>(N);
            state.running_mean[static_cast<size_t>(c)] =
                momentum * state.running_mean[static_cast<size_t>(c)] + (T(1) - momentum) * m;
            state.running_var[static_cast<size_t>(c)] =
                momentum * state.running_var[static_cast<size_t>(c)] + (T(1) - momentum) * v;
        } else {
            m = state.running_mean[static_cast<size_t>(c)];
            v = state.running_var[static_cast<size_t>(c)];
        }
        const T inv = T(1) / std::sqrt(v + eps);
        (*mean)[static_cast<size_t>(c)] = m;
        (*invstd)[static_cast<size_t>(c)] = inv;
        const T a = gamma.data()[c] * inv;
        const T bconst = beta.data()[c] - m * a;
        for (int64_t b = 0; b < xs.n; ++b)
            kt.affine(Y + (b * xs.c + c) * P, X + (b * xs.c + c) * P, a, bconst, P);
    });

    const bool need_x = input.on_tape(), need_g = gamma.on_tape(), need_b = beta.on_tape();
    auto xh = input.handle();
    auto gh = gamma.handle();
    auto bh = beta.handle();
    detail::attach_node<T>(out, "batchnorm", {xh, gh, bh}, [=](TensorData<T>& o) {
        const auto& ktb = kernels::table<T>();
        const T* dY = o.grad.data();
        if (need_x) xh->ensure_grad();
        if (need_g) gh->ensure_grad();
        if (need_b) bh->ensure_grad();
        parallel_for(xs.c, [&](int64_t c) {
            const T m = (*mean)[static_cast<size_t>(c)];
            const T inv = (*invstd)[static_cast<size_t>(c)];
            const T g = gh->values[static_cast<size_t>(c)];
            // s1 = sum dy, sxm = sum dy*(x - m)
            T s1 = 0, sxm = 0;
            for (int64_t b = 0; b < xs.n; ++b) {
                const T* dyp = dY + (b * xs.c + c) * P;
                const T* xp = xh->values.data() + (b * xs.c + c) * P;
                s1 += ktb.sum(dyp, P);
                sxm += ktb.dot(dyp, xp, P);
            }
            sxm -= m * s1;
            const T s2 = sxm * inv;  // sum dy * xhat
            if (need_g) gh->grad[static_cast<size_t>(c)] += s2;
            if (need_b) bh->grad[static_cast<size_t>(c)] += s1;
            if (!need_x) return;
            if (training) {
                const T A = g * inv;
                const T Bx = -inv * inv * g * s2 / static_cast<T>(N);
                const T C0 = -inv * (g * s1 / static_cast<T>(N)) - Bx * m;
                for (int64_t b = 0; b < xs.n; ++b) {
                    T* dxp = xh->grad.data() + (b * xs.c + c) * P;
                    const T* dyp = dY + (b * xs.c + c) * P;
                    const T* xp = xh->values.data() + (b * xs.c + c) * P;
                    ktb.axpy(dxp, dyp, A, P);
                    ktb.axpy(dxp, xp, Bx, P);
                    raw::add_scalar(dxp, C0, P);
                }
            } else {
                const T A = g * inv;
                for (int64_t b = 0; b < xs.n; ++b)
                    ktb.axpy(xh->grad.data() + (b * xs.c + c) * P, dY + (b * xs.c + c) * P, A, P);
            }
        });
    });
    return out;
}

// ---------------------------------------------------------------------------
// relu / pooling / losses / elementwise
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> relu(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    kernels::table<T>().relu_fwd(out.data(), input.data(), input.numel());
    auto xh = input.handle();
    detail::attach_node<T>(out, "relu", {xh}, [=](TensorData<T>& o) {
        xh->ensure_grad();
        kernels::table<T>().relu_bwd(xh->grad.data(), o.grad.data(), xh->values.data(),
                                     static_cast<int64_t>(xh->values.size()));
    });
    return out;
}

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    const Shape xs = input.shape();
    if (xs.h < 1 || xs.w < 1)
        throw std::invalid_argument("global_avg_pool: empty spatial extents " + to_string(xs));
    const int64_t P = xs.plane();
    Tensor<T> out(Shape{xs.n, xs.c, 1, 1});
    const auto& kt = kernels::table<T>();
    for (int64_t i = 0; i < xs.n * xs.c; ++i)
        out.data()[i] = kt.sum(input.data() + i * P, P) / static_cast<T>(P);
    auto xh = input.handle();
    detail::attach_node<T>(out, "global_avg_pool", {xh}, [=](TensorData<T>& o) {
        xh->ensure_grad();
        for (int64_t i = 0; i < xs.n * xs.c; ++i)
            raw::add_scalar(xh->grad.data() + i * P, o.grad[static_cast<size_t>(i)] / static_cast<T>(P), P);
    });
    return out;
}

// Mean over the batch of the label-smoothed cross entropy. Logits are
// (B, K, 1, 1).
template <class T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits, const std::vector<int>& labels, T epsilon) {
    const Shape xs = logits.shape();
    if (xs.h != 1 || xs.w != 1)
        throw std::invalid_argument("cross_entropy_smoothed: logits must be (B,K,1,1), got " + to_string(xs));
    if (epsilon < T(0) || epsilon >= T(1))
        throw std::invalid_argument("cross_entropy_smoothed: epsilon must be in [0,1), got " +
                                    std::to_string(static_cast<double>(epsilon)));
    const int64_t B = xs.n, K = xs.c;
    if (static_cast<int64_t>(labels.size()) != B)
        throw std::invalid_argument("cross_entropy_smoothed: label count " + std::to_string(labels.size()) +
                                    " != batch size " + std::to_string(B));
    for (int64_t b = 0; b < B; ++b)
        if (labels[static_cast<size_t>(b)] < 0 || labels[static_cast<size_t>(b)] >= K)
            throw std::invalid_argument("cross_entropy_smoothed: label " +
                                        std::to_string(labels[static_cast<size_t>(b)]) +
                                        " out of range [0," + std::to_string(K) + ")");

    // Softmax probabilities are saved for the backward pass.
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(B * K));
    T total = 0;
    for (int64_t b = 0; b < B; ++b) {
        const T* z = logits.data() + b * K;
        T zmax = z[0];
        for (int64_t k = 1; k < K; ++k) zmax = std::max(zmax, z[k]);
        T se = 0;
        for (int64_t k = 0; k < K; ++k) se += std::exp(z[k] - zmax);
        const T lse = std::log(se) + zmax;
        T zsum = 0;
        for (int64_t k = 0; k < K; ++k) {
            zsum += z[k];
            (*probs)[static_cast<size_t>(b * K + k)] = std::exp(z[k] - zmax) / se;
        }
        // loss_b = lse - sum_k t_k z_k with t = eps/K + (1-eps) onehot
        total += lse - (epsilon / static_cast<T>(K)) * zsum -
                 (T(1) - epsilon) * z[labels[static_cast<size_t>(b)]];
    }
    Tensor<T> out(Shape{1, 1, 1, 1});
    out.data()[0] = total / static_cast<T>(B);

    auto xh = logits.handle();
    detail::attach_node<T>(out, "cross_entropy_smoothed", {xh}, [=](TensorData<T>& o) {
        xh->ensure_grad();
        const T gscale = o.grad[0] / static_cast<T>(B);
        const T uniform = epsilon / static_cast<T>(K);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t k = 0; k < K; ++k) {
                T t = uniform + (k == labels[static_cast<size_t>(b)] ? T(1) - epsilon : T(0));
                xh->grad[static_cast<size_t>(b * K + k)] +=
                    gscale * ((*probs)[static_cast<size_t>(b * K + k)] - t);
            }
    });
    return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& input) {
    Tensor<T> out(Shape{1, 1, 1, 1});
    out.data()[0] = kernels::table<T>().sum(input.data(), input.numel());
    auto xh = input.handle();
    detail::attach_node<T>(out, "sum", {xh}, [=](TensorData<T>& o) {
        xh->ensure_grad();
        raw::add_scalar(xh->grad.data(), o.grad[0], static_cast<int64_t>(xh->grad.size()));
    });
    return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape()))
        throw std::invalid_argument("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    auto ah = a.handle(), bh = b.handle();
    const bool na = a.on_tape(), nb = b.on_tape();
    detail::attach_node<T>(out, "add", {ah, bh}, [=](TensorData<T>& o) {
        if (na) {
            ah->ensure_grad();
            kernels::table<T>().axpy(ah->grad.data(), o.grad.data(), T(1), static_cast<int64_t>(o.grad.size()));
        }
        if (nb) {
            bh->ensure_grad();
            kernels::table<T>().axpy(bh->grad.data(), o.grad.data(), T(1), static_cast<int64_t>(o.grad.size()));
        }
    });
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape()))
        throw std::invalid_argument("mul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    auto ah = a.handle(), bh = b.handle();
    const bool na = a.on_tape(), nb = b.on_tape();
    detail::attach_node<T>(out, "mul", {ah, bh}, [=](TensorData<T>& o) {
        const int64_t n = static_cast<int64_t>(o.grad.size());
        if (na) {
            ah->ensure_grad();
            for (int64_t i = 0; i < n; ++i) ah->grad[static_cast<size_t>(i)] += o.grad[static_cast<size_t>(i)] * bh->values[static_cast<size_t>(i)];
        }
        if (nb) {
            bh->ensure_grad();
            for (int64_t i = 0; i < n; ++i) bh->grad[static_cast<size_t>(i)] += o.grad[static_cast<size_t>(i)] * ah->values[static_cast<size_t>(i)];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// structural ops for the half-split blocks
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> channel_slice(const Tensor<T>& input, int64_t c0, int64_t c1) {
    const Shape xs = input.shape();
    if (c0 < 0 || c1 > xs.c || c0 >= c1)
        throw std::invalid_argument("channel_slice: invalid range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for " + std::to_string(xs.c) + " channels");
    const int64_t P = xs.plane(), C = c1 - c0;
    Tensor<T> out(Shape{xs.n, C, xs.h, xs.w});
    for (int64_t b = 0; b < xs.n; ++b)
        std::copy(input.data() + (b * xs.c + c0) * P, input.data() + (b * xs.c + c1) * P,
                  out.data() + b * C * P);
    auto xh = input.handle();
    detail::attach_node<T>(out, "channel_slice", {xh}, [=](TensorData<T>& o) {
        xh->ensure_grad();
        for (int64_t b = 0; b < xs.n; ++b)
            kernels::table<T>().axpy(xh->grad.data() + (b * xs.c + c0) * P, o.grad.data() + b * C * P,
                                     T(1), C * P);
    });
    return out;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape as = a.shape(), bs = b.shape();
    if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
        throw std::invalid_argument("concat_channels: incompatible shapes " + to_string(as) + " vs " +
                                    to_string(bs));
    const int64_t P = as.plane();
    Tensor<T> out(Shape{as.n, as.c + bs.c, as.h, as.w});
    for (int64_t n = 0; n < as.n; ++n) {
        std::copy(a.data() + n * as.c * P, a.data() + (n + 1) * as.c * P,
                  out.data() + n * (as.c + bs.c) * P);
        std::copy(b.data() + n * bs.c * P, b.data() + (n + 1) * bs.c * P,
                  out.data() + (n * (as.c + bs.c) + as.c) * P);
    }
    auto ah = a.handle(), bh = b.handle();
    const bool na = a.on_tape(), nb = b.on_tape();
    detail::attach_node<T>(out, "concat_channels", {ah, bh}, [=](TensorData<T>& o) {
        const auto& kt = kernels::table<T>();
        for (int64_t n = 0; n < as.n; ++n) {
            if (na) {
                ah->ensure_grad();
                kt.axpy(ah->grad.data() + n * as.c * P, o.grad.data() + n * (as.c + bs.c) * P, T(1), as.c * P);
            }
            if (nb) {
                bh->ensure_grad();
                kt.axpy(bh->grad.data() + n * bs.c * P, o.grad.data() + (n * (as.c + bs.c) + as.c) * P,
                        T(1), bs.c * P);
            }
        }
    });
    return out;
}

// Plain stride-2 sampling (keeps even-indexed pixels).
template <class T>
Tensor<T> subsample2(const Tensor<T>& input) {
    const Shape xs = input.shape();
    const int64_t OH = (xs.h + 1) / 2, OW = (xs.w + 1) / 2;
    Tensor<T> out(Shape{xs.n, xs.c, OH, OW});
    for (int64_t p = 0; p < xs.n * xs.c; ++p) {
        const T* xp = input.data() + p * xs.plane();
        T* yp = out.data() + p * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh)
            for (int64_t ow = 0; ow < OW; ++ow) yp[oh * OW + ow] = xp[(2 * oh) * xs.w + 2 * ow];
    }
    auto xh = input.handle();
    detail::attach_node<T>(out, "subsample2", {xh}, [=](TensorData<T>& o) {
        xh->ensure_grad();
        for (int64_t p = 0; p < xs.n * xs.c; ++p) {
            T* dxp = xh->grad.data() + p * xs.plane();
            const T* dyp = o.grad.data() + p * OH * OW;
            for (int64_t oh = 0; oh < OH; ++oh)
                for (int64_t ow = 0; ow < OW; ++ow) dxp[(2 * oh) * xs.w + 2 * ow] += dyp[oh * OW + ow];
        }
    });
    return out;
}

// Same-size separable correlation with a 1-D kernel along x then y; the
// spatial path of the network stem and of scalespace::blur.
template <class T>
Tensor<T> separable_conv2d(const Tensor<T>& input, const std::vector<T>& k1d, Padding padding) {
    const Shape xs = input.shape();
    if (k1d.size() % 2 == 0) throw std::invalid_argument("separable_conv2d: kernel must have odd length");
    const int64_t radius = static_cast<int64_t>(k1d.size() / 2);
    Tensor<T> out(xs);
    const int64_t P = xs.plane();
    parallel_for(xs.n * xs.c, [&](int64_t p) {
        std::vector<T> mid(static_cast<size_t>(P));
        std::vector<T> rowbuf(static_cast<size_t>(xs.w + 2 * radius));
        raw::separable_plane(input.data() + p * P, out.data() + p * P, xs.h, xs.w, k1d.data(), radius,
                             padding, mid.data(), rowbuf.data());
    });
    auto xh = input.handle();
    detail::attach_node<T>(out, "separable_conv2d", {xh}, [=](TensorData<T>& o) {
        xh->ensure_grad();
        parallel_for(xs.n * xs.c, [&](int64_t p) {
            std::vector<T> dmid(static_cast<size_t>(P));
            std::vector<T> padbuf(static_cast<size_t>(xs.w + 2 * radius));
            raw::separable_plane_adjoint(o.grad.data() + p * P, xh->grad.data() + p * P, xs.h, xs.w,
                                         k1d.data(), radius, padding, dmid.data(), padbuf.data());
        });
    });
    return out;
}

}  // namespace ops
}  // namespace gssd
