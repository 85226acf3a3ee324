#include "attnseg/ops.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "attnseg/parallel.hpp"

namespace attnseg {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvDims {
    int c_in, c_out, k, ho, wo;
};

ConvDims conv_dims(const Shape& x, const Shape& weight, int stride, int pad) {
    if (stride < 1) throw DimensionError("stride", "conv2d: stride must be positive");
    if (pad < 0) throw DimensionError("pad", "conv2d: padding must be non-negative");
    if (weight.h != weight.w)
        throw DimensionError("k", "conv2d: kernel must be square, got " + weight.str());
    if (weight.h % 2 == 0)
        throw DimensionError("k", "conv2d: kernel size must be odd, got " + std::to_string(weight.h));
    if (x.c != weight.c)
        throw DimensionError("c", "conv2d: input has " + std::to_string(x.c) +
                                      " channels but weight expects " + std::to_string(weight.c));
    const int k = weight.h;
    const int span_h = x.h + 2 * pad - k;
    const int span_w = x.w + 2 * pad - k;
    if (span_h < 0 || span_h % stride != 0)
        throw DimensionError("h", "conv2d: height " + std::to_string(x.h) +
                                      " does not tile with kernel/stride/pad");
    if (span_w < 0 || span_w % stride != 0)
        throw DimensionError("w", "conv2d: width " + std::to_string(x.w) +
                                      " does not tile with kernel/stride/pad");
    return {x.c, weight.n, k, span_h / stride + 1, span_w / stride + 1};
}

bool is_pointwise(const ConvDims& d, int stride, int pad) {
    return d.k == 1 && stride == 1 && pad == 0;
}

template <class T>
void im2col(const T* x, int c_in, int h, int w, const ConvDims& d, int stride, int pad, T* cols) {
    const std::size_t howo = static_cast<std::size_t>(d.ho) * d.wo;
    for (int c = 0; c < c_in; ++c) {
        const T* plane = x + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                T* row = cols + ((static_cast<std::size_t>(c) * d.k + ky) * d.k + kx) * howo;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    T* out = row + static_cast<std::size_t>(oy) * d.wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(out, out + d.wo, T(0));
                        continue;
                    }
                    const T* in = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        out[ox] = (ix >= 0 && ix < w) ? in[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* cols, int c_in, int h, int w, const ConvDims& d, int stride, int pad,
                T* dx) {
    const std::size_t howo = static_cast<std::size_t>(d.ho) * d.wo;
    for (int c = 0; c < c_in; ++c) {
        T* plane = dx + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < d.k; ++ky) {
            for (int kx = 0; kx < d.k; ++kx) {
                const T* row = cols + ((static_cast<std::size_t>(c) * d.k + ky) * d.k + kx) * howo;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * d.wo;
                    T* out = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) out[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <class T>
void check_bias(const Tensor4<T>* bias, int channels, const char* op) {
    if (bias != nullptr && bias->size() != static_cast<std::size_t>(channels))
        throw DimensionError("c", std::string(op) + ": bias has " + std::to_string(bias->size()) +
                                      " elements, expected " + std::to_string(channels));
}

template <class T>
T clamp_open_unit(T v) {
    constexpr T lo = std::numeric_limits<T>::min();
    constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    return std::clamp(v, lo, hi);
}

// Source coordinate and blend weight for one output index of a ×2 half-pixel resize.
struct LerpTap {
    int i0, i1;
    double frac;
};

std::vector<LerpTap> lerp_taps(int in_size) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(in_size) * 2);
    for (int o = 0; o < in_size * 2; ++o) {
        double src = (o + 0.5) / 2.0 - 0.5;
        if (src < 0) src = 0;
        const int i0 = std::min(static_cast<int>(src), in_size - 1);
        const int i1 = std::min(i0 + 1, in_size - 1);
        taps[o] = {i0, i1, src - i0};
    }
    return taps;
}

}  // namespace

// --- convolution -----------------------------------------------------------

template <class T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>* bias,
                  int stride, int pad) {
    const ConvDims d = conv_dims(x.shape(), weight.shape(), stride, pad);
    check_bias(bias, d.c_out, "conv2d");
    Tensor4<T> y(x.n(), d.c_out, d.ho, d.wo);
    const int ckk = d.c_in * d.k * d.k;
    const std::size_t howo = static_cast<std::size_t>(d.ho) * d.wo;
    const ConstMapMat<T> wmat(weight.data(), d.c_out, ckk);
    const bool pointwise = is_pointwise(d, stride, pad);

    parallel_for(static_cast<std::size_t>(x.n()), [&](std::size_t s) {
        const int ni = static_cast<int>(s);
        std::vector<T> cols;
        const T* src = x.plane(ni, 0);
        if (!pointwise) {
            cols.resize(static_cast<std::size_t>(ckk) * howo);
            im2col(src, d.c_in, x.h(), x.w(), d, stride, pad, cols.data());
            src = cols.data();
        }
        MapMat<T> out(y.plane(ni, 0), d.c_out, static_cast<Eigen::Index>(howo));
        out.noalias() = wmat * ConstMapMat<T>(src, ckk, static_cast<Eigen::Index>(howo));
        if (bias != nullptr) {
            for (int o = 0; o < d.c_out; ++o) out.row(o).array() += (*bias)[o];
        }
    });
    return y;
}

template <class T>
Tensor4<T> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& dy,
                           int stride, int pad, Tensor4<T>* dweight, Tensor4<T>* dbias) {
    const ConvDims d = conv_dims(x.shape(), weight.shape(), stride, pad);
    require_same_shape(dy.shape(), Shape{x.n(), d.c_out, d.ho, d.wo}, "conv2d_backward dY");
    if (dweight != nullptr) require_same_shape(dweight->shape(), weight.shape(), "conv2d dW");
    check_bias(dbias, d.c_out, "conv2d_backward");

    const int ckk = d.c_in * d.k * d.k;
    const auto howo = static_cast<Eigen::Index>(d.ho) * d.wo;
    const ConstMapMat<T> wmat(weight.data(), d.c_out, ckk);
    const bool pointwise = is_pointwise(d, stride, pad);
    const auto n = static_cast<std::size_t>(x.n());

    Tensor4<T> dx(x.shape());
    // Per-sample weight-gradient partials, summed afterwards in sample order.
    std::vector<RowMat<T>> dw_parts(dweight != nullptr ? n : 0);

    parallel_for(n, [&](std::size_t s) {
        const int ni = static_cast<int>(s);
        const ConstMapMat<T> g(dy.plane(ni, 0), d.c_out, howo);
        std::vector<T> cols;
        const T* src = x.plane(ni, 0);
        if (!pointwise) {
            cols.resize(static_cast<std::size_t>(ckk) * howo);
            im2col(x.plane(ni, 0), d.c_in, x.h(), x.w(), d, stride, pad, cols.data());
            src = cols.data();
        }
        if (dweight != nullptr) {
            dw_parts[s].noalias() = g * ConstMapMat<T>(src, ckk, howo).transpose();
        }
        if (pointwise) {
            MapMat<T>(dx.plane(ni, 0), ckk, howo).noalias() = wmat.transpose() * g;
        } else {
            MapMat<T> dcols(cols.data(), ckk, howo);
            dcols.noalias() = wmat.transpose() * g;
            col2im_add(cols.data(), d.c_in, x.h(), x.w(), d, stride, pad, dx.plane(ni, 0));
        }
    });

    if (dweight != nullptr) {
        MapMat<T> dw(dweight->data(), d.c_out, ckk);
        for (const auto& part : dw_parts) dw += part;
    }
    if (dbias != nullptr) {
        // plain loops: Eigen's vectorized sum peels by address alignment,
        // so its rounding would depend on where the buffer was allocated
        for (std::size_t s = 0; s < n; ++s)
            for (int o = 0; o < d.c_out; ++o) {
                const T* g = dy.plane(static_cast<int>(s), o);
                T acc = 0;
                for (Eigen::Index i = 0; i < howo; ++i) acc += g[i];
                (*dbias)[o] += acc;
            }
    }
    return dx;
}

// --- pooling and reductions ------------------------------------------------

template <class T>
Reduction<T> maxpool2x(const Tensor4<T>& x) {
    if (x.h() % 2 != 0)
        throw DimensionError("h", "maxpool2x: height " + std::to_string(x.h()) + " is odd");
    if (x.w() % 2 != 0)
        throw DimensionError("w", "maxpool2x: width " + std::to_string(x.w()) + " is odd");
    Reduction<T> r{Tensor4<T>(x.n(), x.c(), x.h() / 2, x.w() / 2), {}};
    r.argmax.resize(r.y.size());
    std::size_t o = 0;
    for (int ni = 0; ni < x.n(); ++ni)
        for (int ci = 0; ci < x.c(); ++ci)
            for (int oy = 0; oy < r.y.h(); ++oy)
                for (int ox = 0; ox < r.y.w(); ++ox, ++o) {
                    std::size_t best = x.offset(ni, ci, 2 * oy, 2 * ox);
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = x.offset(ni, ci, 2 * oy + dy, 2 * ox + dx);
                            if (x[idx] > x[best]) best = idx;
                        }
                    r.y[o] = x[best];
                    r.argmax[o] = static_cast<std::uint32_t>(best);
                }
    return r;
}

template <class T>
Tensor4<T> maxpool2x_backward(const Tensor4<T>& dy, const std::vector<std::uint32_t>& argmax,
                              const Shape& input_shape) {
    if (argmax.size() != dy.size())
        throw DimensionError("argmax", "maxpool2x_backward: argmax map does not match dY");
    Tensor4<T> dx(input_shape);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
    return dx;
}

template <class T>
Reduction<T> reduce_spatial(const Tensor4<T>& x, ReduceMode mode) {
    Reduction<T> r{Tensor4<T>(x.n(), x.c(), 1, 1), {}};
    const std::size_t hw = x.shape().plane();
    if (mode == ReduceMode::Max) r.argmax.resize(r.y.size());
    for (int ni = 0; ni < x.n(); ++ni)
        for (int ci = 0; ci < x.c(); ++ci) {
            const T* p = x.plane(ni, ci);
            const std::size_t o = r.y.offset(ni, ci, 0, 0);
            if (mode == ReduceMode::Avg) {
                T sum = 0;
                for (std::size_t i = 0; i < hw; ++i) sum += p[i];
                r.y[o] = sum / static_cast<T>(hw);
            } else {
                std::size_t best = 0;
                for (std::size_t i = 1; i < hw; ++i)
                    if (p[i] > p[best]) best = i;
                r.y[o] = p[best];
                r.argmax[o] = static_cast<std::uint32_t>(x.offset(ni, ci, 0, 0) + best);
            }
        }
    return r;
}

template <class T>
Tensor4<T> reduce_spatial_backward(const Tensor4<T>& dy, const Reduction<T>& fwd,
                                   const Shape& input_shape, ReduceMode mode) {
    require_same_shape(dy.shape(), Shape{input_shape.n, input_shape.c, 1, 1},
                       "reduce_spatial_backward dY");
    Tensor4<T> dx(input_shape);
    const std::size_t hw = input_shape.plane();
    for (int ni = 0; ni < input_shape.n; ++ni)
        for (int ci = 0; ci < input_shape.c; ++ci) {
            const std::size_t o = dy.offset(ni, ci, 0, 0);
            if (mode == ReduceMode::Avg) {
                const T g = dy[o] / static_cast<T>(hw);
                T* p = dx.plane(ni, ci);
                for (std::size_t i = 0; i < hw; ++i) p[i] += g;
            } else {
                dx[fwd.argmax.at(o)] += dy[o];
            }
        }
    return dx;
}

template <class T>
Reduction<T> reduce_channels(const Tensor4<T>& x, ReduceMode mode) {
    Reduction<T> r{Tensor4<T>(x.n(), 1, x.h(), x.w()), {}};
    const std::size_t hw = x.shape().plane();
    if (mode == ReduceMode::Max) r.argmax.resize(r.y.size());
    for (int ni = 0; ni < x.n(); ++ni) {
        T* out = r.y.plane(ni, 0);
        for (std::size_t i = 0; i < hw; ++i) {
            if (mode == ReduceMode::Avg) {
                T sum = 0;
                for (int ci = 0; ci < x.c(); ++ci) sum += x.plane(ni, ci)[i];
                out[i] = sum / static_cast<T>(x.c());
            } else {
                int best = 0;
                for (int ci = 1; ci < x.c(); ++ci)
                    if (x.plane(ni, ci)[i] > x.plane(ni, best)[i]) best = ci;
                out[i] = x.plane(ni, best)[i];
                r.argmax[r.y.offset(ni, 0, 0, 0) + i] =
                    static_cast<std::uint32_t>(x.offset(ni, best, 0, 0) + i);
            }
        }
    }
    return r;
}

template <class T>
Tensor4<T> reduce_channels_backward(const Tensor4<T>& dy, const Reduction<T>& fwd,
                                    const Shape& input_shape, ReduceMode mode) {
    require_same_shape(dy.shape(), Shape{input_shape.n, 1, input_shape.h, input_shape.w},
                       "reduce_channels_backward dY");
    Tensor4<T> dx(input_shape);
    const std::size_t hw = input_shape.plane();
    for (int ni = 0; ni < input_shape.n; ++ni) {
        const T* g = dy.plane(ni, 0);
        for (std::size_t i = 0; i < hw; ++i) {
            if (mode == ReduceMode::Avg) {
                const T share = g[i] / static_cast<T>(input_shape.c);
                for (int ci = 0; ci < input_shape.c; ++ci) dx.plane(ni, ci)[i] += share;
            } else {
                dx[fwd.argmax.at(dy.offset(ni, 0, 0, 0) + i)] += g[i];
            }
        }
    }
    return dx;
}

// --- batch normalization ---------------------------------------------------

template <class T>
Tensor4<T> batchnorm(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                     BatchNormState<T>& state, Mode mode, BatchNormCache<T>* cache) {
    const int channels = x.c();
    if (gamma.size() != static_cast<std::size_t>(channels) ||
        beta.size() != static_cast<std::size_t>(channels) ||
        state.running_mean.size() != static_cast<std::size_t>(channels))
        throw DimensionError("c", "batchnorm: parameters sized for " +
                                      std::to_string(gamma.size()) + " channels, input has " +
                                      std::to_string(channels));
    if (mode == Mode::Eval && !state.initialized())
        throw StateError("batchnorm: eval mode requested before any train-mode batch populated "
                         "the running statistics");

    Tensor4<T> y(x.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(channels));
    Tensor4<T> xhat;
    if (cache != nullptr) xhat = Tensor4<T>(x.shape());
    const std::size_t hw = x.shape().plane();
    const std::size_t count = hw * static_cast<std::size_t>(x.n());

    for (int ci = 0; ci < channels; ++ci) {
        T mean;
        T var;
        if (mode == Mode::Train) {
            double sum = 0;
            for (int ni = 0; ni < x.n(); ++ni) {
                const T* p = x.plane(ni, ci);
                for (std::size_t i = 0; i < hw; ++i) sum += p[i];
            }
            const double mu = sum / static_cast<double>(count);
            double sq = 0;
            for (int ni = 0; ni < x.n(); ++ni) {
                const T* p = x.plane(ni, ci);
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = p[i] - mu;
                    sq += d * d;
                }
            }
            mean = static_cast<T>(mu);
            var = static_cast<T>(sq / static_cast<double>(count));
            const T unbiased =
                count > 1 ? static_cast<T>(sq / static_cast<double>(count - 1)) : var;
            state.running_mean[ci] =
                (T(1) - state.momentum) * state.running_mean[ci] + state.momentum * mean;
            state.running_var[ci] =
                (T(1) - state.momentum) * state.running_var[ci] + state.momentum * unbiased;
        } else {
            mean = state.running_mean[ci];
            var = state.running_var[ci];
        }
        const T istd = T(1) / std::sqrt(var + state.eps);
        inv_std[ci] = istd;
        const T g = gamma[ci];
        const T b = beta[ci];
        for (int ni = 0; ni < x.n(); ++ni) {
            const T* p = x.plane(ni, ci);
            T* out = y.plane(ni, ci);
            T* xh = cache != nullptr ? xhat.plane(ni, ci) : nullptr;
            for (std::size_t i = 0; i < hw; ++i) {
                const T v = (p[i] - mean) * istd;
                if (xh != nullptr) xh[i] = v;
                out[i] = g * v + b;
            }
        }
    }
    if (mode == Mode::Train) state.tracked[0] += T(1);
    if (cache != nullptr) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
        cache->mode = mode;
    }
    return y;
}

template <class T>
Tensor4<T> batchnorm_eval(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                          const BatchNormState<T>& state) {
    // The eval path never mutates state; the const_cast only satisfies the shared signature.
    return batchnorm(x, gamma, beta, const_cast<BatchNormState<T>&>(state), Mode::Eval,
                     static_cast<BatchNormCache<T>*>(nullptr));
}

template <class T>
Tensor4<T> batchnorm_backward(const Tensor4<T>& dy, const BatchNormCache<T>& cache,
                              const Tensor4<T>& gamma, Tensor4<T>* dgamma, Tensor4<T>* dbeta) {
    require_same_shape(dy.shape(), cache.xhat.shape(), "batchnorm_backward dY");
    Tensor4<T> dx(dy.shape());
    const std::size_t hw = dy.shape().plane();
    const auto count = static_cast<T>(hw * static_cast<std::size_t>(dy.n()));
    for (int ci = 0; ci < dy.c(); ++ci) {
        T sum_dy = 0;
        T sum_dy_xhat = 0;
        for (int ni = 0; ni < dy.n(); ++ni) {
            const T* g = dy.plane(ni, ci);
            const T* xh = cache.xhat.plane(ni, ci);
            for (std::size_t i = 0; i < hw; ++i) {
                sum_dy += g[i];
                sum_dy_xhat += g[i] * xh[i];
            }
        }
        if (dgamma != nullptr) (*dgamma)[ci] += sum_dy_xhat;
        if (dbeta != nullptr) (*dbeta)[ci] += sum_dy;
        const T scale = gamma[ci] * cache.inv_std[ci];
        for (int ni = 0; ni < dy.n(); ++ni) {
            const T* g = dy.plane(ni, ci);
            const T* xh = cache.xhat.plane(ni, ci);
            T* out = dx.plane(ni, ci);
            if (cache.mode == Mode::Train) {
                for (std::size_t i = 0; i < hw; ++i)
                    out[i] = scale / count * (count * g[i] - sum_dy - xh[i] * sum_dy_xhat);
            } else {
                for (std::size_t i = 0; i < hw; ++i) out[i] = scale * g[i];
            }
        }
    }
    return dx;
}

// --- activations -----------------------------------------------------------

template <class T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return clamp_open_unit(T(1) / (T(1) + std::exp(-x)));
    const T e = std::exp(x);
    return clamp_open_unit(e / (T(1) + e));
}

template <class T>
Tensor4<T> relu(const Tensor4<T>& x) {
    Tensor4<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
}

template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& dy, const Tensor4<T>& y) {
    require_same_shape(dy.shape(), y.shape(), "relu_backward");
    Tensor4<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
    return dx;
}

template <class T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
    Tensor4<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid_scalar(x[i]);
    return y;
}

template <class T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& dy, const Tensor4<T>& y) {
    require_same_shape(dy.shape(), y.shape(), "sigmoid_backward");
    Tensor4<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
    return dx;
}

// --- upsampling ------------------------------------------------------------

template <class T>
Tensor4<T> upsample_bilinear2x(const Tensor4<T>& x) {
    if (x.h() < 1 || x.w() < 1) throw DimensionError("h", "upsample_bilinear2x: empty input");
    const auto ty = lerp_taps(x.h());
    const auto tx = lerp_taps(x.w());
    Tensor4<T> y(x.n(), x.c(), 2 * x.h(), 2 * x.w());
    for (int ni = 0; ni < x.n(); ++ni)
        for (int ci = 0; ci < x.c(); ++ci) {
            const T* in = x.plane(ni, ci);
            T* out = y.plane(ni, ci);
            for (int oy = 0; oy < y.h(); ++oy) {
                const auto& a = ty[oy];
                const T fy = static_cast<T>(a.frac);
                const T* r0 = in + static_cast<std::size_t>(a.i0) * x.w();
                const T* r1 = in + static_cast<std::size_t>(a.i1) * x.w();
                for (int ox = 0; ox < y.w(); ++ox) {
                    const auto& b = tx[ox];
                    const T fx = static_cast<T>(b.frac);
                    const T top = r0[b.i0] * (T(1) - fx) + r0[b.i1] * fx;
                    const T bottom = r1[b.i0] * (T(1) - fx) + r1[b.i1] * fx;
                    out[static_cast<std::size_t>(oy) * y.w() + ox] = top * (T(1) - fy) + bottom * fy;
                }
            }
        }
    return y;
}

template <class T>
Tensor4<T> upsample_bilinear2x_backward(const Tensor4<T>& dy) {
    if (dy.h() % 2 != 0 || dy.w() % 2 != 0)
        throw DimensionError(dy.h() % 2 != 0 ? "h" : "w",
                             "upsample_bilinear2x_backward: dY dims must be even, got " +
                                 dy.shape().str());
    const int h = dy.h() / 2;
    const int w = dy.w() / 2;
    const auto ty = lerp_taps(h);
    const auto tx = lerp_taps(w);
    Tensor4<T> dx(dy.n(), dy.c(), h, w);
    for (int ni = 0; ni < dy.n(); ++ni)
        for (int ci = 0; ci < dy.c(); ++ci) {
            const T* g = dy.plane(ni, ci);
            T* out = dx.plane(ni, ci);
            for (int oy = 0; oy < dy.h(); ++oy) {
                const auto& a = ty[oy];
                const T fy = static_cast<T>(a.frac);
                T* r0 = out + static_cast<std::size_t>(a.i0) * w;
                T* r1 = out + static_cast<std::size_t>(a.i1) * w;
                for (int ox = 0; ox < dy.w(); ++ox) {
                    const auto& b = tx[ox];
                    const T fx = static_cast<T>(b.frac);
                    const T v = g[static_cast<std::size_t>(oy) * dy.w() + ox];
                    r0[b.i0] += v * (T(1) - fy) * (T(1) - fx);
                    r0[b.i1] += v * (T(1) - fy) * fx;
                    r1[b.i0] += v * fy * (T(1) - fx);
                    r1[b.i1] += v * fy * fx;
                }
            }
        }
    return dx;
}

template <class T>
Tensor4<T> transposed_conv2x(const Tensor4<T>& x, const Tensor4<T>& weight,
                             const Tensor4<T>* bias) {
    if (weight.h() != 2 || weight.w() != 2)
        throw DimensionError("k", "transposed_conv2x: kernel must be 2x2, got " +
                                      weight.shape().str());
    if (weight.n() != x.c())
        throw DimensionError("c", "transposed_conv2x: input has " + std::to_string(x.c()) +
                                      " channels but weight expects " + std::to_string(weight.n()));
    const int c_out = weight.c();
    check_bias(bias, c_out, "transposed_conv2x");
    Tensor4<T> y(x.n(), c_out, 2 * x.h(), 2 * x.w());
    const auto hw = static_cast<Eigen::Index>(x.shape().plane());
    const ConstMapMat<T> wmat(weight.data(), x.c(), c_out * 4);
    parallel_for(static_cast<std::size_t>(x.n()), [&](std::size_t s) {
        const int ni = static_cast<int>(s);
        const RowMat<T> z = wmat.transpose() * ConstMapMat<T>(x.plane(ni, 0), x.c(), hw);
        for (int o = 0; o < c_out; ++o) {
            const T b = bias != nullptr ? (*bias)[o] : T(0);
            T* out = y.plane(ni, o);
            for (int a = 0; a < 2; ++a)
                for (int bb = 0; bb < 2; ++bb) {
                    const auto row = z.row(o * 4 + a * 2 + bb);
                    for (int i = 0; i < x.h(); ++i)
                        for (int j = 0; j < x.w(); ++j)
                            out[static_cast<std::size_t>(2 * i + a) * y.w() + 2 * j + bb] =
                                row(static_cast<Eigen::Index>(i) * x.w() + j) + b;
                }
        }
    });
    return y;
}

template <class T>
Tensor4<T> transposed_conv2x_backward(const Tensor4<T>& x, const Tensor4<T>& weight,
                                      const Tensor4<T>& dy, Tensor4<T>* dweight,
                                      Tensor4<T>* dbias) {
    const int c_out = weight.c();
    require_same_shape(dy.shape(), Shape{x.n(), c_out, 2 * x.h(), 2 * x.w()},
                       "transposed_conv2x_backward dY");
    const auto hw = static_cast<Eigen::Index>(x.shape().plane());
    const ConstMapMat<T> wmat(weight.data(), x.c(), c_out * 4);
    const auto n = static_cast<std::size_t>(x.n());
    Tensor4<T> dx(x.shape());
    std::vector<RowMat<T>> dw_parts(dweight != nullptr ? n : 0);
    std::vector<std::vector<T>> db_parts(dbias != nullptr ? n : 0);

    parallel_for(n, [&](std::size_t s) {
        const int ni = static_cast<int>(s);
        RowMat<T> dz(c_out * 4, hw);
        for (int o = 0; o < c_out; ++o) {
            const T* g = dy.plane(ni, o);
            for (int a = 0; a < 2; ++a)
                for (int bb = 0; bb < 2; ++bb)
                    for (int i = 0; i < x.h(); ++i)
                        for (int j = 0; j < x.w(); ++j)
                            dz(o * 4 + a * 2 + bb, static_cast<Eigen::Index>(i) * x.w() + j) =
                                g[static_cast<std::size_t>(2 * i + a) * dy.w() + 2 * j + bb];
        }
        const ConstMapMat<T> xs(x.plane(ni, 0), x.c(), hw);
        if (dweight != nullptr) dw_parts[s].noalias() = xs * dz.transpose();
        if (dbias != nullptr) {
            db_parts[s].assign(static_cast<std::size_t>(c_out), T(0));
            for (int o = 0; o < c_out; ++o) {
                const T* g = dy.plane(ni, o);
                T sum = 0;
                for (std::size_t i = 0; i < dy.shape().plane(); ++i) sum += g[i];
                db_parts[s][o] = sum;
            }
        }
        MapMat<T>(dx.plane(ni, 0), x.c(), hw).noalias() = wmat * dz;
    });

    if (dweight != nullptr) {
        MapMat<T> dw(dweight->data(), x.c(), c_out * 4);
        for (const auto& part : dw_parts) dw += part;
    }
    if (dbias != nullptr)
        for (const auto& part : db_parts)
            for (int o = 0; o < c_out; ++o) (*dbias)[o] += part[o];
    return dx;
}

// --- channel plumbing ------------------------------------------------------

template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b, const std::string& a_name,
                           const std::string& b_name) {
    const char* axis = a.n() != b.n()   ? "n"
                       : a.h() != b.h() ? "h"
                       : a.w() != b.w() ? "w"
                                        : nullptr;
    if (axis != nullptr)
        throw DimensionError(axis, "concat_channels: " + a_name + " (" + a.shape().str() +
                                       ") and " + b_name + " (" + b.shape().str() +
                                       ") disagree on axis " + axis);
    Tensor4<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
    const std::size_t a_block = static_cast<std::size_t>(a.c()) * a.shape().plane();
    const std::size_t b_block = static_cast<std::size_t>(b.c()) * b.shape().plane();
    for (int ni = 0; ni < a.n(); ++ni) {
        T* out = y.plane(ni, 0);
        std::copy_n(a.plane(ni, 0), a_block, out);
        std::copy_n(b.plane(ni, 0), b_block, out + a_block);
    }
    return y;
}

template <class T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int begin, int count) {
    if (begin < 0 || count < 0 || begin + count > x.c())
        throw DimensionError("c", "slice_channels: range [" + std::to_string(begin) + ", " +
                                      std::to_string(begin + count) + ") outside " +
                                      std::to_string(x.c()) + " channels");
    Tensor4<T> y(x.n(), count, x.h(), x.w());
    const std::size_t block = static_cast<std::size_t>(count) * x.shape().plane();
    for (int ni = 0; ni < x.n(); ++ni) std::copy_n(x.plane(ni, begin), block, y.plane(ni, 0));
    return y;
}

template <class T>
std::pair<Tensor4<T>, Tensor4<T>> concat_channels_backward(const Tensor4<T>& dy, int a_channels) {
    return {slice_channels(dy, 0, a_channels),
            slice_channels(dy, a_channels, dy.c() - a_channels)};
}

// --- fully connected -------------------------------------------------------

template <class T>
Tensor4<T> linear(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>* bias) {
    const auto f = static_cast<Eigen::Index>(x.c()) * x.h() * x.w();
    const Eigen::Index f_in = static_cast<Eigen::Index>(weight.c()) * weight.h() * weight.w();
    if (f != f_in)
        throw DimensionError("f", "linear: input has " + std::to_string(f) +
                                      " features but weight expects " + std::to_string(f_in));
    const int f_out = weight.n();
    check_bias(bias, f_out, "linear");
    Tensor4<T> y(x.n(), f_out, 1, 1);
    MapMat<T> out(y.data(), x.n(), f_out);
    out.noalias() = ConstMapMat<T>(x.data(), x.n(), f) * ConstMapMat<T>(weight.data(), f_out, f).transpose();
    if (bias != nullptr)
        for (int o = 0; o < f_out; ++o) out.col(o).array() += (*bias)[o];
    return y;
}

template <class T>
Tensor4<T> linear_backward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& dy,
                           Tensor4<T>* dweight, Tensor4<T>* dbias) {
    const auto f = static_cast<Eigen::Index>(x.c()) * x.h() * x.w();
    const int f_out = weight.n();
    require_same_shape(dy.shape(), Shape{x.n(), f_out, 1, 1}, "linear_backward dY");
    const ConstMapMat<T> g(dy.data(), x.n(), f_out);
    const ConstMapMat<T> xm(x.data(), x.n(), f);
    if (dweight != nullptr) MapMat<T>(dweight->data(), f_out, f).noalias() += g.transpose() * xm;
    if (dbias != nullptr)
        for (int o = 0; o < f_out; ++o)
            for (int ni = 0; ni < x.n(); ++ni) (*dbias)[o] += dy[static_cast<std::size_t>(ni) * f_out + o];
    Tensor4<T> dx(x.shape());
    MapMat<T>(dx.data(), x.n(), f).noalias() = g * ConstMapMat<T>(weight.data(), f_out, f);
    return dx;
}

#define ATTNSEG_INSTANTIATE_OPS(T)                                                              \
    template Tensor4<T> conv2d(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>*, int, int); \
    template Tensor4<T> conv2d_backward(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,  \
                                        int, int, Tensor4<T>*, Tensor4<T>*);                    \
    template Reduction<T> maxpool2x(const Tensor4<T>&);                                         \
    template Tensor4<T> maxpool2x_backward(const Tensor4<T>&, const std::vector<std::uint32_t>&, \
                                           const Shape&);                                       \
    template Reduction<T> reduce_spatial(const Tensor4<T>&, ReduceMode);                        \
    template Tensor4<T> reduce_spatial_backward(const Tensor4<T>&, const Reduction<T>&,         \
                                                const Shape&, ReduceMode);                      \
    template Reduction<T> reduce_channels(const Tensor4<T>&, ReduceMode);                       \
    template Tensor4<T> reduce_channels_backward(const Tensor4<T>&, const Reduction<T>&,        \
                                                 const Shape&, ReduceMode);                     \
    template Tensor4<T> batchnorm(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,      \
                                  BatchNormState<T>&, Mode, BatchNormCache<T>*);                \
    template Tensor4<T> batchnorm_eval(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&, \
                                       const BatchNormState<T>&);                               \
    template Tensor4<T> batchnorm_backward(const Tensor4<T>&, const BatchNormCache<T>&,         \
                                           const Tensor4<T>&, Tensor4<T>*, Tensor4<T>*);        \
    template Tensor4<T> relu(const Tensor4<T>&);                                                \
    template Tensor4<T> relu_backward(const Tensor4<T>&, const Tensor4<T>&);                    \
    template T sigmoid_scalar(T);                                                               \
    template Tensor4<T> sigmoid(const Tensor4<T>&);                                             \
    template Tensor4<T> sigmoid_backward(const Tensor4<T>&, const Tensor4<T>&);                 \
    template Tensor4<T> upsample_bilinear2x(const Tensor4<T>&);                                 \
    template Tensor4<T> upsample_bilinear2x_backward(const Tensor4<T>&);                        \
    template Tensor4<T> transposed_conv2x(const Tensor4<T>&, const Tensor4<T>&,                 \
                                          const Tensor4<T>*);                                   \
    template Tensor4<T> transposed_conv2x_backward(const Tensor4<T>&, const Tensor4<T>&,        \
                                                   const Tensor4<T>&, Tensor4<T>*, Tensor4<T>*); \
    template Tensor4<T> concat_channels(const Tensor4<T>&, const Tensor4<T>&,                   \
                                        const std::string&, const std::string&);                \
    template Tensor4<T> slice_channels(const Tensor4<T>&, int, int);                            \
    template std::pair<Tensor4<T>, Tensor4<T>> concat_channels_backward(const Tensor4<T>&, int); \
    template Tensor4<T> linear(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>*);        \
    template Tensor4<T> linear_backward(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&, \
                                        Tensor4<T>*, Tensor4<T>*);

ATTNSEG_INSTANTIATE_OPS(float)
ATTNSEG_INSTANTIATE_OPS(double)

#undef ATTNSEG_INSTANTIATE_OPS

}  // namespace attnseg
