#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "tiergan/autodiff.hpp"
#include "tiergan/parallel.hpp"
#include "tiergan/tensor.hpp"

namespace tiergan {

namespace detail {

template <typename T>
T stable_sigmoid(T v) {
    T s;
    if (v >= T(0)) {
        T e = std::exp(-v);
        s = T(1) / (T(1) + e);
    } else {
        T e = std::exp(v);
        s = e / (T(1) + e);
    }
    // Round saturated values to the nearest representable interior point so
    // the output stays strictly inside (0, 1). NaN passes through untouched;
    // divergence detection depends on it.
    const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    const T lo = std::numeric_limits<T>::min();
    if (s < lo) return lo;
    if (s > hi) return hi;
    return s;
}

// ---- conv2d kernels (cross-correlation, zero padding) ----

template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias,
                     const ConvGeometry& g) {
    const std::size_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t Co = g.out_channels;
    const auto [Oh, Ow] = g.conv_out_hw(H, W);
    Tensor<T> out({B, Co, Oh, Ow});
    parallel_for(B * Co, [&](std::size_t bc) {
        const std::size_t b = bc / Co, co = bc % Co;
        for (std::size_t oy = 0; oy < Oh; ++oy) {
            const std::ptrdiff_t base_y = static_cast<std::ptrdiff_t>(oy * g.sh) -
                                          static_cast<std::ptrdiff_t>(g.ph);
            const std::size_t ky_lo = base_y < 0 ? static_cast<std::size_t>(-base_y) : 0;
            const std::size_t ky_hi = std::min<std::ptrdiff_t>(
                static_cast<std::ptrdiff_t>(g.kh),
                std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(H) - base_y));
            for (std::size_t ox = 0; ox < Ow; ++ox) {
                const std::ptrdiff_t base_x = static_cast<std::ptrdiff_t>(ox * g.sw) -
                                              static_cast<std::ptrdiff_t>(g.pw);
                const std::size_t kx_lo = base_x < 0 ? static_cast<std::size_t>(-base_x) : 0;
                const std::size_t kx_hi = std::min<std::ptrdiff_t>(
                    static_cast<std::ptrdiff_t>(g.kw),
                    std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(W) - base_x));
                double acc = bias.size() ? static_cast<double>(bias[co]) : 0.0;
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                    const T* xp = &x.data[((b * Ci + ci) * H) * W];
                    const T* kp = &k.data[((co * Ci + ci) * g.kh) * g.kw];
                    for (std::size_t ky = ky_lo; ky < ky_hi; ++ky) {
                        const std::size_t iy = static_cast<std::size_t>(base_y) + ky;
                        for (std::size_t kx = kx_lo; kx < kx_hi; ++kx) {
                            const std::size_t ix = static_cast<std::size_t>(base_x) + kx;
                            acc += static_cast<double>(xp[iy * W + ix]) * kp[ky * g.kw + kx];
                        }
                    }
                }
                out.at4(b, co, oy, ox) = static_cast<T>(acc);
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> conv2d_bwd_input(const Tensor<T>& dy, const Tensor<T>& k, const ConvGeometry& g,
                           std::size_t H, std::size_t W) {
    const std::size_t B = dy.shape[0], Co = dy.shape[1], Oh = dy.shape[2], Ow = dy.shape[3];
    const std::size_t Ci = g.in_channels;
    Tensor<T> dx({B, Ci, H, W});
    parallel_for(B * Ci, [&](std::size_t bc) {
        const std::size_t b = bc / Ci, ci = bc % Ci;
        for (std::size_t iy = 0; iy < H; ++iy) {
            for (std::size_t ix = 0; ix < W; ++ix) {
                double acc = 0.0;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const std::ptrdiff_t oy_num = static_cast<std::ptrdiff_t>(iy + g.ph) -
                                                  static_cast<std::ptrdiff_t>(ky);
                    if (oy_num < 0 || oy_num % static_cast<std::ptrdiff_t>(g.sh)) continue;
                    const std::size_t oy = static_cast<std::size_t>(oy_num) / g.sh;
                    if (oy >= Oh) continue;
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const std::ptrdiff_t ox_num = static_cast<std::ptrdiff_t>(ix + g.pw) -
                                                      static_cast<std::ptrdiff_t>(kx);
                        if (ox_num < 0 || ox_num % static_cast<std::ptrdiff_t>(g.sw)) continue;
                        const std::size_t ox = static_cast<std::size_t>(ox_num) / g.sw;
                        if (ox >= Ow) continue;
                        for (std::size_t co = 0; co < Co; ++co)
                            acc += static_cast<double>(dy.at4(b, co, oy, ox)) *
                                   k.data[((co * Ci + ci) * g.kh + ky) * g.kw + kx];
                    }
                }
                dx.at4(b, ci, iy, ix) = static_cast<T>(acc);
            }
        }
    });
    return dx;
}

template <typename T>
Tensor<T> conv2d_bwd_kernel(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g) {
    const std::size_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t Co = dy.shape[1], Oh = dy.shape[2], Ow = dy.shape[3];
    Tensor<T> dk({Co, Ci, g.kh, g.kw});
    parallel_for(Co * Ci, [&](std::size_t cc) {
        const std::size_t co = cc / Ci, ci = cc % Ci;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double acc = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t oy = 0; oy < Oh; ++oy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) -
                                                  static_cast<std::ptrdiff_t>(g.ph);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t ox = 0; ox < Ow; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + kx) -
                                                      static_cast<std::ptrdiff_t>(g.pw);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            acc += static_cast<double>(x.at4(b, ci, static_cast<std::size_t>(iy),
                                                              static_cast<std::size_t>(ix))) *
                                   dy.at4(b, co, oy, ox);
                        }
                    }
                }
                dk.data[((co * Ci + ci) * g.kh + ky) * g.kw + kx] = static_cast<T>(acc);
            }
        }
    });
    return dk;
}

template <typename T>
Tensor<T> bwd_bias(const Tensor<T>& dy) {
    const std::size_t B = dy.shape[0], C = dy.shape[1], Oh = dy.shape[2], Ow = dy.shape[3];
    Tensor<T> db({C});
    for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t y = 0; y < Oh; ++y)
                for (std::size_t x = 0; x < Ow; ++x) acc += dy.at4(b, c, y, x);
        db[c] = static_cast<T>(acc);
    }
    return db;
}

// ---- transposed conv kernels; gather form of the conv adjoint ----

template <typename T>
Tensor<T> tconv2d_fwd(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias,
                      const ConvGeometry& g) {
    const std::size_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t Co = g.out_channels;
    const auto [Oh, Ow] = g.tconv_out_hw(H, W);
    Tensor<T> out({B, Co, Oh, Ow});
    parallel_for(B * Co, [&](std::size_t bc) {
        const std::size_t b = bc / Co, co = bc % Co;
        for (std::size_t oy = 0; oy < Oh; ++oy) {
            for (std::size_t ox = 0; ox < Ow; ++ox) {
                double acc = bias.size() ? static_cast<double>(bias[co]) : 0.0;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const std::ptrdiff_t iy_num = static_cast<std::ptrdiff_t>(oy + g.ph) -
                                                  static_cast<std::ptrdiff_t>(ky);
                    if (iy_num < 0 || iy_num % static_cast<std::ptrdiff_t>(g.sh)) continue;
                    const std::size_t iy = static_cast<std::size_t>(iy_num) / g.sh;
                    if (iy >= H) continue;
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const std::ptrdiff_t ix_num = static_cast<std::ptrdiff_t>(ox + g.pw) -
                                                      static_cast<std::ptrdiff_t>(kx);
                        if (ix_num < 0 || ix_num % static_cast<std::ptrdiff_t>(g.sw)) continue;
                        const std::size_t ix = static_cast<std::size_t>(ix_num) / g.sw;
                        if (ix >= W) continue;
                        for (std::size_t ci = 0; ci < Ci; ++ci)
                            acc += static_cast<double>(x.at4(b, ci, iy, ix)) *
                                   k.data[((ci * Co + co) * g.kh + ky) * g.kw + kx];
                    }
                }
                out.at4(b, co, oy, ox) = static_cast<T>(acc);
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> tconv2d_bwd_input(const Tensor<T>& dy, const Tensor<T>& k, const ConvGeometry& g,
                            std::size_t H, std::size_t W) {
    const std::size_t B = dy.shape[0], Co = dy.shape[1], Oh = dy.shape[2], Ow = dy.shape[3];
    const std::size_t Ci = g.in_channels;
    Tensor<T> dx({B, Ci, H, W});
    parallel_for(B * Ci, [&](std::size_t bc) {
        const std::size_t b = bc / Ci, ci = bc % Ci;
        for (std::size_t iy = 0; iy < H; ++iy) {
            for (std::size_t ix = 0; ix < W; ++ix) {
                double acc = 0.0;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(iy * g.sh + ky) -
                                              static_cast<std::ptrdiff_t>(g.ph);
                    if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(Oh)) continue;
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(ix * g.sw + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pw);
                        if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(Ow)) continue;
                        for (std::size_t co = 0; co < Co; ++co)
                            acc += static_cast<double>(dy.at4(b, co, static_cast<std::size_t>(oy),
                                                              static_cast<std::size_t>(ox))) *
                                   k.data[((ci * Co + co) * g.kh + ky) * g.kw + kx];
                    }
                }
                dx.at4(b, ci, iy, ix) = static_cast<T>(acc);
            }
        }
    });
    return dx;
}

template <typename T>
Tensor<T> tconv2d_bwd_kernel(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g) {
    const std::size_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t Co = dy.shape[1], Oh = dy.shape[2], Ow = dy.shape[3];
    Tensor<T> dk({Ci, Co, g.kh, g.kw});
    parallel_for(Ci * Co, [&](std::size_t cc) {
        const std::size_t ci = cc / Co, co = cc % Co;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double acc = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t iy = 0; iy < H; ++iy) {
                        const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(iy * g.sh + ky) -
                                                  static_cast<std::ptrdiff_t>(g.ph);
                        if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(Oh)) continue;
                        for (std::size_t ix = 0; ix < W; ++ix) {
                            const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(ix * g.sw + kx) -
                                                      static_cast<std::ptrdiff_t>(g.pw);
                            if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(Ow)) continue;
                            acc += static_cast<double>(x.at4(b, ci, iy, ix)) *
                                   dy.at4(b, co, static_cast<std::size_t>(oy),
                                          static_cast<std::size_t>(ox));
                        }
                    }
                }
                dk.data[((ci * Co + co) * g.kh + ky) * g.kw + kx] = static_cast<T>(acc);
            }
        }
    });
    return dk;
}

} // namespace detail

// ---- graph-building primitives ----

// Elementwise sum of two equal-shape nodes.
template <typename T>
NodePtr<T> add(const NodePtr<T>& a, const NodePtr<T>& b) {
    require_same_shape(a->value.shape, b->value.shape, "add");
    Tensor<T> out(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    return make_node<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
        for (int p = 0; p < 2; ++p) {
            self.parents[p]->ensure_grad();
            auto& pg = self.parents[p]->grad->data;
            for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += (*self.grad)[i];
        }
    });
}

// Scalar head for gradient checking: sum(x * w) / numel(x), w constant.
template <typename T>
NodePtr<T> weighted_mean(const NodePtr<T>& x, Tensor<T> w) {
    require_same_shape(x->value.shape, w.shape, "weighted_mean");
    const std::size_t n = w.size();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += x->value[i] * w[i];
    acc /= static_cast<T>(n);
    return make_node<T>("weighted_mean", Tensor<T>::scalar(acc), {x},
                        [w = std::move(w), n](Node<T>& self) {
                            const T g = (*self.grad)[0];
                            auto& xg = self.parents[0]->grad->data;
                            for (std::size_t i = 0; i < n; ++i)
                                xg[i] += g * w[i] / static_cast<T>(n);
                        });
}

// y[i,j] = sum_k x[i,k] * W[k,j] + b[j]
template <typename T>
NodePtr<T> dense(const NodePtr<T>& x, const NodePtr<T>& W, const NodePtr<T>& b) {
    const auto& xs = x->value.shape;
    const auto& ws = W->value.shape;
    const auto& bs = b->value.shape;
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0])
        throw ShapeError("dense: input " + shape_str(xs) + " incompatible with weights " +
                         shape_str(ws));
    if (bs.size() != 1 || bs[0] != ws[1])
        throw ShapeError("dense: bias " + shape_str(bs) + " incompatible with weights " +
                         shape_str(ws));
    const std::size_t B = xs[0], In = ws[0], Out = ws[1];
    Tensor<T> y({B, Out});
    parallel_for(B, [&](std::size_t i) {
        for (std::size_t j = 0; j < Out; ++j) {
            double acc = b->value[j];
            for (std::size_t k = 0; k < In; ++k)
                acc += static_cast<double>(x->value.at2(i, k)) * W->value.at2(k, j);
            y.at2(i, j) = static_cast<T>(acc);
        }
    });
    return make_node<T>("dense", std::move(y), {x, W, b}, [B, In, Out](Node<T>& self) {
        const Tensor<T>& dy = *self.grad;
        const Tensor<T>& xv = self.parents[0]->value;
        const Tensor<T>& wv = self.parents[1]->value;
        for (auto& p : self.parents) p->ensure_grad();
        Tensor<T>& dx = *self.parents[0]->grad;
        Tensor<T>& dw = *self.parents[1]->grad;
        Tensor<T>& db = *self.parents[2]->grad;
        parallel_for(B, [&](std::size_t i) {
            for (std::size_t k = 0; k < In; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < Out; ++j)
                    acc += static_cast<double>(dy.at2(i, j)) * wv.at2(k, j);
                dx.at2(i, k) += static_cast<T>(acc);
            }
        });
        parallel_for(In, [&](std::size_t k) {
            for (std::size_t j = 0; j < Out; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < B; ++i)
                    acc += static_cast<double>(xv.at2(i, k)) * dy.at2(i, j);
                dw.at2(k, j) += static_cast<T>(acc);
            }
        });
        for (std::size_t j = 0; j < Out; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < B; ++i) acc += dy.at2(i, j);
            db[j] += static_cast<T>(acc);
        }
    });
}

namespace detail {

template <typename T>
void check_conv_args(const Shape& xs, const Shape& ks, const Shape& bs, const ConvGeometry& g,
                     bool transposed) {
    if (xs.size() != 4)
        throw ShapeError("conv: input must be rank 4, got " + shape_str(xs));
    const std::size_t k_in = transposed ? ks[0] : ks[1];
    const std::size_t k_out = transposed ? ks[1] : ks[0];
    if (ks.size() != 4 || k_in != g.in_channels || k_out != g.out_channels || ks[2] != g.kh ||
        ks[3] != g.kw)
        throw ShapeError("conv: kernel " + shape_str(ks) + " does not match geometry (in " +
                         std::to_string(g.in_channels) + ", out " + std::to_string(g.out_channels) +
                         ", k " + std::to_string(g.kh) + "x" + std::to_string(g.kw) + ")");
    if (xs[1] != g.in_channels)
        throw ShapeError("conv: input channels " + std::to_string(xs[1]) + " != geometry in_channels " +
                         std::to_string(g.in_channels));
    if (bs.size() != 1 || bs[0] != g.out_channels)
        throw ShapeError("conv: bias " + shape_str(bs) + " must be (" +
                         std::to_string(g.out_channels) + ")");
    (void)transposed;
}

} // namespace detail

// Cross-correlation with zero padding. Kernel layout (c_out, c_in, kh, kw).
template <typename T>
NodePtr<T> conv2d(const NodePtr<T>& x, const NodePtr<T>& k, const NodePtr<T>& b,
                  const ConvGeometry& geom) {
    detail::check_conv_args<T>(x->value.shape, k->value.shape, b->value.shape, geom, false);
    geom.conv_out_hw(x->value.shape[2], x->value.shape[3]); // validates output size
    Tensor<T> y = detail::conv2d_fwd(x->value, k->value, b->value, geom);
    const std::size_t H = x->value.shape[2], W = x->value.shape[3];
    return make_node<T>("conv2d", std::move(y), {x, k, b}, [geom, H, W](Node<T>& self) {
        const Tensor<T>& dy = *self.grad;
        for (auto& p : self.parents) p->ensure_grad();
        Tensor<T> dx = detail::conv2d_bwd_input(dy, self.parents[1]->value, geom, H, W);
        Tensor<T> dk = detail::conv2d_bwd_kernel(self.parents[0]->value, dy, geom);
        Tensor<T> db = detail::bwd_bias(dy);
        auto& xg = self.parents[0]->grad->data;
        for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += dx[i];
        auto& kg = self.parents[1]->grad->data;
        for (std::size_t i = 0; i < kg.size(); ++i) kg[i] += dk[i];
        auto& bg = self.parents[2]->grad->data;
        for (std::size_t i = 0; i < bg.size(); ++i) bg[i] += db[i];
    });
}

// Adjoint of conv2d under the same geometry. Kernel layout (c_in, c_out, kh, kw).
template <typename T>
NodePtr<T> conv2d_transpose(const NodePtr<T>& x, const NodePtr<T>& k, const NodePtr<T>& b,
                            const ConvGeometry& geom) {
    detail::check_conv_args<T>(x->value.shape, k->value.shape, b->value.shape, geom, true);
    geom.tconv_out_hw(x->value.shape[2], x->value.shape[3]); // validates output size
    Tensor<T> y = detail::tconv2d_fwd(x->value, k->value, b->value, geom);
    const std::size_t H = x->value.shape[2], W = x->value.shape[3];
    return make_node<T>("conv2d_transpose", std::move(y), {x, k, b}, [geom, H, W](Node<T>& self) {
        const Tensor<T>& dy = *self.grad;
        for (auto& p : self.parents) p->ensure_grad();
        Tensor<T> dx = detail::tconv2d_bwd_input(dy, self.parents[1]->value, geom, H, W);
        Tensor<T> dk = detail::tconv2d_bwd_kernel(self.parents[0]->value, dy, geom);
        Tensor<T> db = detail::bwd_bias(dy);
        auto& xg = self.parents[0]->grad->data;
        for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += dx[i];
        auto& kg = self.parents[1]->grad->data;
        for (std::size_t i = 0; i < kg.size(); ++i) kg[i] += dk[i];
        auto& bg = self.parents[2]->grad->data;
        for (std::size_t i = 0; i < bg.size(); ++i) bg[i] += db[i];
    });
}

// x if x >= 0 else alpha * x, elementwise.
template <typename T>
NodePtr<T> leaky_relu(const NodePtr<T>& x, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw Error("leaky_relu: alpha must be in (0, 1), got " + std::to_string(alpha));
    const T a = static_cast<T>(alpha);
    Tensor<T> y(x->value.shape);
    for (std::size_t i = 0; i < y.size(); ++i) {
        T v = x->value[i];
        y[i] = v >= T(0) ? v : a * v;
    }
    return make_node<T>("leaky_relu", std::move(y), {x}, [a](Node<T>& self) {
        const Tensor<T>& xv = self.parents[0]->value;
        auto& xg = self.parents[0]->grad->data;
        for (std::size_t i = 0; i < xg.size(); ++i)
            xg[i] += (*self.grad)[i] * (xv[i] >= T(0) ? T(1) : a);
    });
}

// Numerically stable logistic, elementwise; output strictly inside (0, 1).
template <typename T>
NodePtr<T> sigmoid(const NodePtr<T>& x) {
    Tensor<T> y(x->value.shape);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = detail::stable_sigmoid(x->value[i]);
    return make_node<T>("sigmoid", std::move(y), {x}, [](Node<T>& self) {
        const Tensor<T>& s = self.value;
        auto& xg = self.parents[0]->grad->data;
        for (std::size_t i = 0; i < xg.size(); ++i)
            xg[i] += (*self.grad)[i] * s[i] * (T(1) - s[i]);
    });
}

enum class BnMode { train, infer };

template <typename T>
struct RunningStats {
    Tensor<T> mean; // (c,), starts at 0
    Tensor<T> var;  // (c,), starts at 1

    explicit RunningStats(std::size_t channels = 0)
        : mean({channels}), var(Tensor<T>::full({channels}, T(1))) {}
};

// Per-channel batch normalization over (batch, c, h, w). Train mode uses batch
// statistics and optionally folds them into `stats`; infer mode reads `stats`.
template <typename T>
NodePtr<T> batchnorm(const NodePtr<T>& x, const NodePtr<T>& gamma, const NodePtr<T>& beta,
                     BnMode mode, RunningStats<T>* stats, bool update_running,
                     double eps = 1e-5, double momentum = 0.9) {
    const auto& xs = x->value.shape;
    if (xs.size() != 4) throw ShapeError("batchnorm: input must be rank 4, got " + shape_str(xs));
    const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    if (gamma->value.shape != Shape{C} || beta->value.shape != Shape{C})
        throw ShapeError("batchnorm: gamma/beta must be (" + std::to_string(C) + ")");
    if (mode == BnMode::train && B < 2)
        throw ShapeError("batchnorm: train mode requires batch >= 2, got " + std::to_string(B));
    if (mode == BnMode::infer && (!stats || stats->mean.shape != Shape{C}))
        throw ShapeError("batchnorm: infer mode requires running statistics for " +
                         std::to_string(C) + " channels");

    const T e = static_cast<T>(eps);
    const std::size_t n = B * H * W;
    Tensor<T> mean({C}), inv_std({C});
    if (mode == BnMode::train) {
        for (std::size_t c = 0; c < C; ++c) {
            double m = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t yx = 0; yx < H * W; ++yx)
                    m += x->value.data[((b * C + c) * H * W) + yx];
            m /= static_cast<double>(n);
            double v = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t yx = 0; yx < H * W; ++yx) {
                    const double d = x->value.data[((b * C + c) * H * W) + yx] - m;
                    v += d * d;
                }
            v /= static_cast<double>(n);
            mean[c] = static_cast<T>(m);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(e)));
            if (update_running && stats) {
                const T mom = static_cast<T>(momentum);
                stats->mean[c] = mom * stats->mean[c] + (T(1) - mom) * static_cast<T>(m);
                stats->var[c] = mom * stats->var[c] + (T(1) - mom) * static_cast<T>(v);
            }
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = stats->mean[c];
            inv_std[c] = T(1) / std::sqrt(stats->var[c] + e);
        }
    }

    Tensor<T> xhat(xs), y(xs);
    parallel_for(B * C, [&](std::size_t bc) {
        const std::size_t c = bc % C;
        const std::size_t off = bc * H * W;
        for (std::size_t yx = 0; yx < H * W; ++yx) {
            T h = (x->value.data[off + yx] - mean[c]) * inv_std[c];
            xhat.data[off + yx] = h;
            y.data[off + yx] = gamma->value[c] * h + beta->value[c];
        }
    });

    const bool train = mode == BnMode::train;
    return make_node<T>("batchnorm", std::move(y), {x, gamma, beta},
                        [xhat = std::move(xhat), inv_std = std::move(inv_std), train, B, C, H,
                         W, n](Node<T>& self) {
        const Tensor<T>& dy = *self.grad;
        const Tensor<T>& gv = self.parents[1]->value;
        for (auto& p : self.parents) p->ensure_grad();
        Tensor<T>& dx = *self.parents[0]->grad;
        Tensor<T>& dgamma = *self.parents[1]->grad;
        Tensor<T>& dbeta = *self.parents[2]->grad;
        parallel_for(C, [&](std::size_t c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t off = (b * C + c) * H * W;
                for (std::size_t yx = 0; yx < H * W; ++yx) {
                    sum_dy += dy.data[off + yx];
                    sum_dy_xhat += static_cast<double>(dy.data[off + yx]) * xhat.data[off + yx];
                }
            }
            dgamma[c] += static_cast<T>(sum_dy_xhat);
            dbeta[c] += static_cast<T>(sum_dy);
            const T scale = gv[c] * inv_std[c];
            if (train) {
                const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(n));
                const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(n));
                for (std::size_t b = 0; b < B; ++b) {
                    const std::size_t off = (b * C + c) * H * W;
                    for (std::size_t yx = 0; yx < H * W; ++yx)
                        dx.data[off + yx] += scale * (dy.data[off + yx] - mean_dy -
                                                      xhat.data[off + yx] * mean_dy_xhat);
                }
            } else {
                for (std::size_t b = 0; b < B; ++b) {
                    const std::size_t off = (b * C + c) * H * W;
                    for (std::size_t yx = 0; yx < H * W; ++yx)
                        dx.data[off + yx] += scale * dy.data[off + yx];
                }
            }
        });
    });
}

// Each pixel replicated into an f x f block.
template <typename T>
NodePtr<T> upsample_nearest(const NodePtr<T>& x, std::size_t factor) {
    if (factor < 1) throw Error("upsample_nearest: factor must be >= 1");
    const auto& xs = x->value.shape;
    if (xs.size() != 4) throw ShapeError("upsample_nearest: input must be rank 4, got " + shape_str(xs));
    const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    Tensor<T> y({B, C, H * factor, W * factor});
    parallel_for(B * C, [&](std::size_t bc) {
        const std::size_t in_off = bc * H * W;
        const std::size_t out_off = bc * H * factor * W * factor;
        for (std::size_t oy = 0; oy < H * factor; ++oy)
            for (std::size_t ox = 0; ox < W * factor; ++ox)
                y.data[out_off + oy * W * factor + ox] =
                    x->value.data[in_off + (oy / factor) * W + ox / factor];
    });
    return make_node<T>("upsample_nearest", std::move(y), {x}, [factor, B, C, H, W](Node<T>& self) {
        const Tensor<T>& dy = *self.grad;
        Tensor<T>& dx = *self.parents[0]->grad;
        parallel_for(B * C, [&](std::size_t bc) {
            const std::size_t in_off = bc * H * W;
            const std::size_t out_off = bc * H * factor * W * factor;
            for (std::size_t oy = 0; oy < H * factor; ++oy)
                for (std::size_t ox = 0; ox < W * factor; ++ox)
                    dx.data[in_off + (oy / factor) * W + ox / factor] +=
                        dy.data[out_off + oy * W * factor + ox];
        });
    });
}

// Keeps the top-left sample of each f x f block.
template <typename T>
NodePtr<T> downsample_nearest(const NodePtr<T>& x, std::size_t factor) {
    if (factor < 1) throw Error("downsample_nearest: factor must be >= 1");
    const auto& xs = x->value.shape;
    if (xs.size() != 4) throw ShapeError("downsample_nearest: input must be rank 4, got " + shape_str(xs));
    const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    if (H % factor || W % factor)
        throw ShapeError("downsample_nearest: size " + std::to_string(H) + "x" + std::to_string(W) +
                         " not divisible by factor " + std::to_string(factor));
    const std::size_t Oh = H / factor, Ow = W / factor;
    Tensor<T> y({B, C, Oh, Ow});
    parallel_for(B * C, [&](std::size_t bc) {
        for (std::size_t oy = 0; oy < Oh; ++oy)
            for (std::size_t ox = 0; ox < Ow; ++ox)
                y.data[bc * Oh * Ow + oy * Ow + ox] =
                    x->value.data[bc * H * W + (oy * factor) * W + ox * factor];
    });
    return make_node<T>("downsample_nearest", std::move(y), {x}, [factor, B, C, H, W](Node<T>& self) {
        const Tensor<T>& dy = *self.grad;
        Tensor<T>& dx = *self.parents[0]->grad;
        const std::size_t Oh = H / factor, Ow = W / factor;
        parallel_for(B * C, [&](std::size_t bc) {
            for (std::size_t oy = 0; oy < Oh; ++oy)
                for (std::size_t ox = 0; ox < Ow; ++ox)
                    dx.data[bc * H * W + (oy * factor) * W + ox * factor] +=
                        dy.data[bc * Oh * Ow + oy * Ow + ox];
        });
    });
}

// Same storage, new shape; element count must be preserved.
template <typename T>
NodePtr<T> reshape(const NodePtr<T>& x, Shape target) {
    if (shape_numel(target) != x->value.size())
        throw ShapeError("reshape: cannot view " + shape_str(x->value.shape) + " as " +
                         shape_str(target));
    Tensor<T> y(std::move(target), x->value.data);
    return make_node<T>("reshape", std::move(y), {x}, [](Node<T>& self) {
        auto& xg = self.parents[0]->grad->data;
        for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += (*self.grad)[i];
    });
}

} // namespace tiergan
