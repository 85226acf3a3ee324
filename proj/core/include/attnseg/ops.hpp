#pragma once

// Forward/backward primitives over Tensor4. Every backward that produces
// parameter gradients accumulates into the supplied tensors (never overwrites),
// so repeated backward calls add up until the caller zeroes them.

#include <cstdint>
#include <utility>
#include <vector>

#include "attnseg/tensor.hpp"

namespace attnseg {

enum class Mode { Train, Eval };
enum class ReduceMode { Avg, Max };

// --- convolution -----------------------------------------------------------

/// Cross-correlation. weight is c_out×c_in×k×k, bias (optional) is 1×c_out×1×1.
template <class T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>* bias,
                  int stride, int pad);

/// Returns dX; adds dW into *dweight and dB into *dbias when those are non-null.
template <class T>
Tensor4<T> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& dy,
                           int stride, int pad, Tensor4<T>* dweight, Tensor4<T>* dbias);

// --- pooling and reductions ------------------------------------------------

/// Output plus, for max reductions, the flat input index each output element came from.
template <class T>
struct Reduction {
    Tensor4<T> y;
    std::vector<std::uint32_t> argmax;
};

/// 2×2 max-pool, stride 2. Ties go to the first element in row-major scan order.
template <class T>
Reduction<T> maxpool2x(const Tensor4<T>& x);

template <class T>
Tensor4<T> maxpool2x_backward(const Tensor4<T>& dy, const std::vector<std::uint32_t>& argmax,
                              const Shape& input_shape);

/// Per-channel global average or max over h×w. Output is n×c×1×1.
template <class T>
Reduction<T> reduce_spatial(const Tensor4<T>& x, ReduceMode mode);

template <class T>
Tensor4<T> reduce_spatial_backward(const Tensor4<T>& dy, const Reduction<T>& fwd,
                                   const Shape& input_shape, ReduceMode mode);

/// Per-position average or max across channels. Output is n×1×h×w.
template <class T>
Reduction<T> reduce_channels(const Tensor4<T>& x, ReduceMode mode);

template <class T>
Tensor4<T> reduce_channels_backward(const Tensor4<T>& dy, const Reduction<T>& fwd,
                                    const Shape& input_shape, ReduceMode mode);

// --- batch normalization ---------------------------------------------------

template <class T>
struct BatchNormState {
    Tensor4<T> running_mean;  // 1×c×1×1
    Tensor4<T> running_var;   // 1×c×1×1, unbiased batch variance
    Tensor4<T> tracked;       // 1×1×1×1 count of train-mode batches seen
    T momentum = T(0.1);
    T eps = T(1e-5);

    BatchNormState() = default;
    explicit BatchNormState(int channels)
        : running_mean(1, channels, 1, 1), running_var(1, channels, 1, 1, T(1)),
          tracked(1, 1, 1, 1) {}

    bool initialized() const noexcept { return !tracked.empty() && tracked[0] > T(0); }
};

template <class T>
struct BatchNormCache {
    Tensor4<T> xhat;
    std::vector<T> inv_std;
    Mode mode = Mode::Train;
};

/// gamma and beta are 1×c×1×1. Train mode normalizes with batch statistics and
/// updates `state`; eval mode uses the running statistics.
template <class T>
Tensor4<T> batchnorm(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                     BatchNormState<T>& state, Mode mode, BatchNormCache<T>* cache);

/// Eval-mode batch norm without touching the state.
template <class T>
Tensor4<T> batchnorm_eval(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                          const BatchNormState<T>& state);

template <class T>
Tensor4<T> batchnorm_backward(const Tensor4<T>& dy, const BatchNormCache<T>& cache,
                              const Tensor4<T>& gamma, Tensor4<T>* dgamma, Tensor4<T>* dbeta);

// --- activations -----------------------------------------------------------

template <class T>
Tensor4<T> relu(const Tensor4<T>& x);
/// Uses the forward output y.
template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& dy, const Tensor4<T>& y);

/// Logistic function, clamped so the result stays strictly inside (0, 1).
template <class T>
T sigmoid_scalar(T x);

template <class T>
Tensor4<T> sigmoid(const Tensor4<T>& x);
template <class T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& dy, const Tensor4<T>& y);

// --- upsampling ------------------------------------------------------------

/// Bilinear ×2, align-corners=false (half-pixel centers, edge-clamped).
template <class T>
Tensor4<T> upsample_bilinear2x(const Tensor4<T>& x);
template <class T>
Tensor4<T> upsample_bilinear2x_backward(const Tensor4<T>& dy);

/// Transposed convolution, kernel 2, stride 2. weight is c_in×c_out×2×2, bias 1×c_out×1×1.
template <class T>
Tensor4<T> transposed_conv2x(const Tensor4<T>& x, const Tensor4<T>& weight,
                             const Tensor4<T>* bias);
template <class T>
Tensor4<T> transposed_conv2x_backward(const Tensor4<T>& x, const Tensor4<T>& weight,
                                      const Tensor4<T>& dy, Tensor4<T>* dweight,
                                      Tensor4<T>* dbias);

// --- channel plumbing ------------------------------------------------------

/// Channels of a followed by channels of b. The names identify the operands in
/// dimension errors (for skip joins: the encoder and decoder layer names).
template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b,
                           const std::string& a_name = "a", const std::string& b_name = "b");

template <class T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int begin, int count);

/// Splits dY of a concat into the gradients of its two operands.
template <class T>
std::pair<Tensor4<T>, Tensor4<T>> concat_channels_backward(const Tensor4<T>& dy, int a_channels);

// --- fully connected -------------------------------------------------------

/// x is read as n×f (f = c·h·w); weight is f_out×f×1×1; bias (optional) 1×f_out×1×1.
/// Output is n×f_out×1×1.
template <class T>
Tensor4<T> linear(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>* bias);

/// Returns dX in the shape of x.
template <class T>
Tensor4<T> linear_backward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& dy,
                           Tensor4<T>* dweight, Tensor4<T>* dbias);

}  // namespace attnseg
