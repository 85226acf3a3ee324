#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "attnseg/ops.hpp"
#include "attnseg/tensor.hpp"

namespace attnseg {

/// Hidden width of the CBAM channel MLP: channels / min(reduction, channels),
/// rounded up, never below 1.
int cbam_hidden_width(int channels, int reduction);

/// Learnable scalars in one CBAM block: 2·c·hidden (biasless MLP) + 2·k² + 1 (SAM conv).
std::size_t cbam_param_count(int channels, int reduction, int sam_kernel);

/// CBAM parameters. The channel MLP (w1: hidden×c, w2: c×hidden) is shared by
/// the average- and max-pooled branches and has no biases.
template <class T>
struct CbamParams {
    int channels = 0;
    int reduction = 16;
    int hidden = 1;
    int sam_kernel = 7;
    Param<T> mlp_w1;    // hidden×c×1×1
    Param<T> mlp_w2;    // c×hidden×1×1
    Param<T> sam_conv;  // 1×2×k×k
    Param<T> sam_bias;  // 1×1×1×1

    CbamParams() = default;
    CbamParams(const std::string& prefix, int channels, int reduction = 16, int sam_kernel = 7);

    std::size_t param_count() const;
    std::vector<Param<T>*> params();
};

struct SimamConfig {
    double lambda = 1e-4;
};

// --- channel attention (CAM) -----------------------------------------------

template <class T>
struct ChannelAttentionResult {
    Tensor4<T> weights;  // n×c×1×1, strictly inside (0, 1)
    Tensor4<T> y;
    Reduction<T> avg;
    Reduction<T> max;
    Tensor4<T> hidden_avg;  // relu(w1·avg)
    Tensor4<T> hidden_max;  // relu(w1·max)
};

template <class T>
ChannelAttentionResult<T> channel_attention(const Tensor4<T>& x, const CbamParams<T>& p);

/// Returns dX and accumulates MLP gradients into p.
template <class T>
Tensor4<T> channel_attention_backward(const Tensor4<T>& x, const ChannelAttentionResult<T>& fwd,
                                      const Tensor4<T>& dy, CbamParams<T>& p);

// --- spatial attention (SAM) -----------------------------------------------

template <class T>
struct SpatialAttentionResult {
    Tensor4<T> weights;  // n×1×h×w
    Tensor4<T> y;
    Reduction<T> avg;
    Reduction<T> max;
    Tensor4<T> pooled;  // n×2×h×w: [mean over c, max over c]
};

template <class T>
SpatialAttentionResult<T> spatial_attention(const Tensor4<T>& x, const CbamParams<T>& p);

template <class T>
Tensor4<T> spatial_attention_backward(const Tensor4<T>& x, const SpatialAttentionResult<T>& fwd,
                                      const Tensor4<T>& dy, CbamParams<T>& p);

// --- CBAM: channel gate, then spatial gate ---------------------------------

template <class T>
struct CbamResult {
    ChannelAttentionResult<T> cam;
    SpatialAttentionResult<T> sam;
    const Tensor4<T>& y() const noexcept { return sam.y; }
};

template <class T>
CbamResult<T> cbam_forward(const Tensor4<T>& x, const CbamParams<T>& p);

template <class T>
Tensor4<T> cbam_apply(const Tensor4<T>& x, const CbamParams<T>& p);

template <class T>
Tensor4<T> cbam_backward(const Tensor4<T>& x, const CbamResult<T>& fwd, const Tensor4<T>& dy,
                         CbamParams<T>& p);

// --- SimAM -----------------------------------------------------------------
//
// Per channel of each sample, with N = h·w positions:
//   mu = mean(x), d_t = (x_t - mu)^2, var = sum(d) / (N - 1)
//   y_t = x_t · sigmoid(d_t / (4·(var + lambda)) + 0.5)

template <class T>
struct SimamResult {
    Tensor4<T> y;
    Tensor4<T> weights;
    std::vector<T> mean;  // per (n, c)
    std::vector<T> var;   // per (n, c)
};

template <class T>
SimamResult<T> simam_forward(const Tensor4<T>& x, const SimamConfig& cfg);

template <class T>
Tensor4<T> simam_apply(const Tensor4<T>& x, const SimamConfig& cfg);

template <class T>
Tensor4<T> simam_backward(const Tensor4<T>& x, const SimamResult<T>& fwd, const Tensor4<T>& dy,
                          const SimamConfig& cfg);

}  // namespace attnseg
