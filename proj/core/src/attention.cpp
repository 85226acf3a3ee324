#include "attnseg/attention.hpp"

#include <cmath>

namespace attnseg {

int cbam_hidden_width(int channels, int reduction) {
    if (channels < 1) throw ConfigError("cbam: channel count must be positive");
    if (reduction < 1) throw ConfigError("cbam: reduction ratio must be positive");
    const int r = std::min(reduction, channels);
    return std::max(1, (channels + r - 1) / r);
}

std::size_t cbam_param_count(int channels, int reduction, int sam_kernel) {
    const auto c = static_cast<std::size_t>(channels);
    const auto k = static_cast<std::size_t>(sam_kernel);
    return 2 * c * static_cast<std::size_t>(cbam_hidden_width(channels, reduction)) + 2 * k * k + 1;
}

template <class T>
CbamParams<T>::CbamParams(const std::string& prefix, int channels_, int reduction_,
                          int sam_kernel_)
    : channels(channels_), reduction(reduction_),
      hidden(cbam_hidden_width(channels_, reduction_)), sam_kernel(sam_kernel_) {
    if (sam_kernel < 1 || sam_kernel % 2 == 0)
        throw ConfigError("cbam: spatial kernel size must be odd and positive, got " +
                          std::to_string(sam_kernel));
    mlp_w1 = Param<T>(prefix + ".mlp_w1", Shape{hidden, channels, 1, 1});
    mlp_w2 = Param<T>(prefix + ".mlp_w2", Shape{channels, hidden, 1, 1});
    sam_conv = Param<T>(prefix + ".sam_conv", Shape{1, 2, sam_kernel, sam_kernel});
    sam_bias = Param<T>(prefix + ".sam_bias", Shape{1, 1, 1, 1});
}

template <class T>
std::size_t CbamParams<T>::param_count() const {
    return mlp_w1.size() + mlp_w2.size() + sam_conv.size() + sam_bias.size();
}

template <class T>
std::vector<Param<T>*> CbamParams<T>::params() {
    return {&mlp_w1, &mlp_w2, &sam_conv, &sam_bias};
}

namespace {

template <class T>
void check_channels(const Tensor4<T>& x, const CbamParams<T>& p, const char* op) {
    if (x.c() != p.channels)
        throw DimensionError("c", std::string(op) + ": input has " + std::to_string(x.c()) +
                                      " channels, block was built for " +
                                      std::to_string(p.channels));
}

}  // namespace

// --- CAM -------------------------------------------------------------------

template <class T>
ChannelAttentionResult<T> channel_attention(const Tensor4<T>& x, const CbamParams<T>& p) {
    check_channels(x, p, "channel_attention");
    ChannelAttentionResult<T> r;
    r.avg = reduce_spatial(x, ReduceMode::Avg);
    r.max = reduce_spatial(x, ReduceMode::Max);
    r.hidden_avg = relu(linear(r.avg.y, p.mlp_w1.value, static_cast<const Tensor4<T>*>(nullptr)));
    r.hidden_max = relu(linear(r.max.y, p.mlp_w1.value, static_cast<const Tensor4<T>*>(nullptr)));
    Tensor4<T> logits = linear(r.hidden_avg, p.mlp_w2.value, static_cast<const Tensor4<T>*>(nullptr));
    const Tensor4<T> other =
        linear(r.hidden_max, p.mlp_w2.value, static_cast<const Tensor4<T>*>(nullptr));
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += other[i];
    r.weights = sigmoid(logits);

    r.y = Tensor4<T>(x.shape());
    const std::size_t hw = x.shape().plane();
    for (int ni = 0; ni < x.n(); ++ni)
        for (int ci = 0; ci < x.c(); ++ci) {
            const T g = r.weights.at(ni, ci, 0, 0);
            const T* in = x.plane(ni, ci);
            T* out = r.y.plane(ni, ci);
            for (std::size_t i = 0; i < hw; ++i) out[i] = in[i] * g;
        }
    return r;
}

template <class T>
Tensor4<T> channel_attention_backward(const Tensor4<T>& x, const ChannelAttentionResult<T>& fwd,
                                      const Tensor4<T>& dy, CbamParams<T>& p) {
    require_same_shape(dy.shape(), x.shape(), "channel_attention_backward dY");
    const std::size_t hw = x.shape().plane();
    Tensor4<T> dx(x.shape());
    Tensor4<T> dgate(x.n(), x.c(), 1, 1);
    for (int ni = 0; ni < x.n(); ++ni)
        for (int ci = 0; ci < x.c(); ++ci) {
            const T g = fwd.weights.at(ni, ci, 0, 0);
            const T* in = x.plane(ni, ci);
            const T* gy = dy.plane(ni, ci);
            T* out = dx.plane(ni, ci);
            T acc = 0;
            for (std::size_t i = 0; i < hw; ++i) {
                out[i] = gy[i] * g;
                acc += gy[i] * in[i];
            }
            dgate.at(ni, ci, 0, 0) = acc;
        }
    const Tensor4<T> dlogits = sigmoid_backward(dgate, fwd.weights);

    // Both branches share w1/w2; each contributes to the same gradient slots.
    auto branch = [&](const Reduction<T>& pooled, const Tensor4<T>& hidden, ReduceMode mode) {
        const Tensor4<T> dhidden =
            linear_backward(hidden, p.mlp_w2.value, dlogits, &p.mlp_w2.grad,
                            static_cast<Tensor4<T>*>(nullptr));
        const Tensor4<T> dpre = relu_backward(dhidden, hidden);
        const Tensor4<T> dpooled =
            linear_backward(pooled.y, p.mlp_w1.value, dpre, &p.mlp_w1.grad,
                            static_cast<Tensor4<T>*>(nullptr));
        const Tensor4<T> dxb = reduce_spatial_backward(dpooled, pooled, x.shape(), mode);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dxb[i];
    };
    branch(fwd.avg, fwd.hidden_avg, ReduceMode::Avg);
    branch(fwd.max, fwd.hidden_max, ReduceMode::Max);
    return dx;
}

// --- SAM -------------------------------------------------------------------

template <class T>
SpatialAttentionResult<T> spatial_attention(const Tensor4<T>& x, const CbamParams<T>& p) {
    SpatialAttentionResult<T> r;
    r.avg = reduce_channels(x, ReduceMode::Avg);
    r.max = reduce_channels(x, ReduceMode::Max);
    r.pooled = concat_channels(r.avg.y, r.max.y, std::string("channel-mean map"),
                               std::string("channel-max map"));
    r.weights = sigmoid(conv2d(r.pooled, p.sam_conv.value, &p.sam_bias.value, 1, p.sam_kernel / 2));
    r.y = Tensor4<T>(x.shape());
    const std::size_t hw = x.shape().plane();
    for (int ni = 0; ni < x.n(); ++ni) {
        const T* gate = r.weights.plane(ni, 0);
        for (int ci = 0; ci < x.c(); ++ci) {
            const T* in = x.plane(ni, ci);
            T* out = r.y.plane(ni, ci);
            for (std::size_t i = 0; i < hw; ++i) out[i] = in[i] * gate[i];
        }
    }
    return r;
}

template <class T>
Tensor4<T> spatial_attention_backward(const Tensor4<T>& x, const SpatialAttentionResult<T>& fwd,
                                      const Tensor4<T>& dy, CbamParams<T>& p) {
    require_same_shape(dy.shape(), x.shape(), "spatial_attention_backward dY");
    const std::size_t hw = x.shape().plane();
    Tensor4<T> dx(x.shape());
    Tensor4<T> dgate(x.n(), 1, x.h(), x.w());
    for (int ni = 0; ni < x.n(); ++ni) {
        const T* gate = fwd.weights.plane(ni, 0);
        T* dg = dgate.plane(ni, 0);
        for (int ci = 0; ci < x.c(); ++ci) {
            const T* in = x.plane(ni, ci);
            const T* gy = dy.plane(ni, ci);
            T* out = dx.plane(ni, ci);
            for (std::size_t i = 0; i < hw; ++i) {
                out[i] = gy[i] * gate[i];
                dg[i] += gy[i] * in[i];
            }
        }
    }
    const Tensor4<T> dconv_out = sigmoid_backward(dgate, fwd.weights);
    const Tensor4<T> dpooled = conv2d_backward(fwd.pooled, p.sam_conv.value, dconv_out, 1,
                                               p.sam_kernel / 2, &p.sam_conv.grad,
                                               &p.sam_bias.grad);
    auto [davg, dmax] = concat_channels_backward(dpooled, 1);
    const Tensor4<T> dx_avg = reduce_channels_backward(davg, fwd.avg, x.shape(), ReduceMode::Avg);
    const Tensor4<T> dx_max = reduce_channels_backward(dmax, fwd.max, x.shape(), ReduceMode::Max);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx_avg[i] + dx_max[i];
    return dx;
}

// --- CBAM ------------------------------------------------------------------

template <class T>
CbamResult<T> cbam_forward(const Tensor4<T>& x, const CbamParams<T>& p) {
    CbamResult<T> r;
    r.cam = channel_attention(x, p);
    r.sam = spatial_attention(r.cam.y, p);
    return r;
}

template <class T>
Tensor4<T> cbam_apply(const Tensor4<T>& x, const CbamParams<T>& p) {
    return cbam_forward(x, p).sam.y;
}

template <class T>
Tensor4<T> cbam_backward(const Tensor4<T>& x, const CbamResult<T>& fwd, const Tensor4<T>& dy,
                         CbamParams<T>& p) {
    const Tensor4<T> dmid = spatial_attention_backward(fwd.cam.y, fwd.sam, dy, p);
    return channel_attention_backward(x, fwd.cam, dmid, p);
}

// --- SimAM -----------------------------------------------------------------

template <class T>
SimamResult<T> simam_forward(const Tensor4<T>& x, const SimamConfig& cfg) {
    if (!(cfg.lambda > 0)) throw ConfigError("simam: lambda must be positive");
    const std::size_t hw = x.shape().plane();
    if (hw < 2)
        throw DimensionError("h*w", "simam: needs at least 2 spatial positions per channel, got " +
                                        x.shape().str());
    SimamResult<T> r{Tensor4<T>(x.shape()), Tensor4<T>(x.shape()), {}, {}};
    const std::size_t planes = static_cast<std::size_t>(x.n()) * x.c();
    r.mean.resize(planes);
    r.var.resize(planes);
    const T lambda = static_cast<T>(cfg.lambda);
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* in = x.data() + pl * hw;
        T* gate = r.weights.data() + pl * hw;
        T* out = r.y.data() + pl * hw;
        double sum = 0;
        for (std::size_t i = 0; i < hw; ++i) sum += in[i];
        const T mu = static_cast<T>(sum / static_cast<double>(hw));
        double sq = 0;
        for (std::size_t i = 0; i < hw; ++i) {
            const double d = in[i] - mu;
            sq += d * d;
        }
        const T var = static_cast<T>(sq / static_cast<double>(hw - 1));
        const T denom = T(4) * (var + lambda);
        for (std::size_t i = 0; i < hw; ++i) {
            const T d = (in[i] - mu) * (in[i] - mu);
            const T energy = d / denom + T(0.5);
            gate[i] = sigmoid_scalar(energy);
            out[i] = in[i] * gate[i];
        }
        r.mean[pl] = mu;
        r.var[pl] = var;
    }
    return r;
}

template <class T>
Tensor4<T> simam_apply(const Tensor4<T>& x, const SimamConfig& cfg) {
    return simam_forward(x, cfg).y;
}

template <class T>
Tensor4<T> simam_backward(const Tensor4<T>& x, const SimamResult<T>& fwd, const Tensor4<T>& dy,
                          const SimamConfig& cfg) {
    require_same_shape(dy.shape(), x.shape(), "simam_backward dY");
    const std::size_t hw = x.shape().plane();
    const std::size_t planes = static_cast<std::size_t>(x.n()) * x.c();
    const T lambda = static_cast<T>(cfg.lambda);
    const T count = static_cast<T>(hw);
    Tensor4<T> dx(x.shape());
    std::vector<T> denergy(hw);
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* in = x.data() + pl * hw;
        const T* gate = fwd.weights.data() + pl * hw;
        const T* g = dy.data() + pl * hw;
        T* out = dx.data() + pl * hw;
        const T mu = fwd.mean[pl];
        const T s = fwd.var[pl] + lambda;

        // energy_t = d_t / (4 s) + 0.5; var depends on every d_t.
        T dvar = 0;
        for (std::size_t i = 0; i < hw; ++i) {
            denergy[i] = g[i] * in[i] * gate[i] * (T(1) - gate[i]);
            const T d = (in[i] - mu) * (in[i] - mu);
            dvar -= denergy[i] * d / (T(4) * s * s);
        }
        const T dd_shared = dvar / (count - T(1));
        T dmu = 0;
        for (std::size_t i = 0; i < hw; ++i) {
            const T dd = denergy[i] / (T(4) * s) + dd_shared;
            const T centered = in[i] - mu;
            out[i] = g[i] * gate[i] + dd * T(2) * centered;
            dmu -= dd * T(2) * centered;
        }
        const T share = dmu / count;
        for (std::size_t i = 0; i < hw; ++i) out[i] += share;
    }
    return dx;
}

#define ATTNSEG_INSTANTIATE_ATTENTION(T)                                                         \
    template struct CbamParams<T>;                                                               \
    template ChannelAttentionResult<T> channel_attention(const Tensor4<T>&, const CbamParams<T>&); \
    template Tensor4<T> channel_attention_backward(const Tensor4<T>&,                            \
                                                   const ChannelAttentionResult<T>&,             \
                                                   const Tensor4<T>&, CbamParams<T>&);           \
    template SpatialAttentionResult<T> spatial_attention(const Tensor4<T>&, const CbamParams<T>&); \
    template Tensor4<T> spatial_attention_backward(const Tensor4<T>&,                            \
                                                   const SpatialAttentionResult<T>&,             \
                                                   const Tensor4<T>&, CbamParams<T>&);           \
    template CbamResult<T> cbam_forward(const Tensor4<T>&, const CbamParams<T>&);                \
    template Tensor4<T> cbam_apply(const Tensor4<T>&, const CbamParams<T>&);                     \
    template Tensor4<T> cbam_backward(const Tensor4<T>&, const CbamResult<T>&, const Tensor4<T>&, \
                                      CbamParams<T>&);                                           \
    template SimamResult<T> simam_forward(const Tensor4<T>&, const SimamConfig&);                \
    template Tensor4<T> simam_apply(const Tensor4<T>&, const SimamConfig&);                      \
    template Tensor4<T> simam_backward(const Tensor4<T>&, const SimamResult<T>&,                 \
                                       const Tensor4<T>&, const SimamConfig&);

ATTNSEG_INSTANTIATE_ATTENTION(float)
ATTNSEG_INSTANTIATE_ATTENTION(double)

#undef ATTNSEG_INSTANTIATE_ATTENTION

}  // namespace attnseg
