#pragma once

// Stateful layer wrappers around the ops. Each layer has a const `infer`
// (eval mode, no caching) and a caching `forward` (train mode) paired with
// `backward`, which accumulates parameter gradients and returns dX. Caches
// persist until the next forward, so repeated backward calls add up.

#include <optional>
#include <string>
#include <vector>

#include "attnseg/attention.hpp"
#include "attnseg/ops.hpp"
#include "attnseg/random.hpp"

namespace attnseg {

inline constexpr double kReluGain = 1.4142135623730951;
/// Gain for layers whose output feeds a sigmoid or softmax: bound 1/sqrt(fan_in).
inline constexpr double kGateGain = 0.5773502691896258;

/// Kaiming uniform over fan-in: U(-b, b) with b = gain·sqrt(3/fan_in).
template <class T>
void kaiming_uniform(Tensor4<T>& weight, int fan_in, SplitMix64& rng, double gain = kReluGain);

template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, int c_in, int c_out, int kernel, bool with_bias = true);

    void init(SplitMix64& rng, double gain = kReluGain);
    Tensor4<T> infer(const Tensor4<T>& x) const;
    Tensor4<T> forward(const Tensor4<T>& x);
    Tensor4<T> backward(const Tensor4<T>& dy);
    void collect(std::vector<Param<T>*>& out);

    Param<T> weight;
    std::optional<Param<T>> bias;
    int pad = 0;

private:
    std::optional<Tensor4<T>> input_;
};

template <class T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(const std::string& name, int channels);

    Tensor4<T> infer(const Tensor4<T>& x) const;
    Tensor4<T> forward(const Tensor4<T>& x);
    Tensor4<T> backward(const Tensor4<T>& dy);
    void collect(std::vector<Param<T>*>& out);
    void collect_buffers(std::vector<Buffer<T>>& out);

    std::string name;
    Param<T> gamma;
    Param<T> beta;
    BatchNormState<T> state;

private:
    std::optional<BatchNormCache<T>> cache_;
};

/// [conv3×3 → BN → relu] × 2
template <class T>
class DoubleConv {
public:
    DoubleConv() = default;
    DoubleConv(const std::string& name, int c_in, int c_out);

    void init(SplitMix64& rng);
    Tensor4<T> infer(const Tensor4<T>& x) const;
    Tensor4<T> forward(const Tensor4<T>& x);
    Tensor4<T> backward(const Tensor4<T>& dy);
    void collect(std::vector<Param<T>*>& out);
    void collect_buffers(std::vector<Buffer<T>>& out);

    Conv2d<T> conv1;
    BatchNorm2d<T> bn1;
    Conv2d<T> conv2;
    BatchNorm2d<T> bn2;

private:
    Tensor4<T> act1_;
    Tensor4<T> act2_;
};

enum class UpsampleMode { Bilinear, TransposedConv };

/// ×2 spatial upsampling. Transposed-conv mode maps c_in → c_out channels;
/// bilinear mode keeps c_in.
template <class T>
class Upsample2x {
public:
    Upsample2x() = default;
    Upsample2x(const std::string& name, UpsampleMode mode, int c_in, int c_out);

    void init(SplitMix64& rng);
    int out_channels() const noexcept { return out_channels_; }
    Tensor4<T> infer(const Tensor4<T>& x) const;
    Tensor4<T> forward(const Tensor4<T>& x);
    Tensor4<T> backward(const Tensor4<T>& dy);
    void collect(std::vector<Param<T>*>& out);

    UpsampleMode mode = UpsampleMode::Bilinear;
    std::optional<Param<T>> weight;  // c_in×c_out×2×2
    std::optional<Param<T>> bias;

private:
    int out_channels_ = 0;
    std::optional<Tensor4<T>> input_;
};

/// SimAM and/or CBAM applied in sequence (SimAM first) to one feature map.
template <class T>
class AttentionNode {
public:
    AttentionNode() = default;
    AttentionNode(const std::string& name, int channels, std::optional<SimamConfig> simam,
                  bool with_cbam, int cbam_reduction, int sam_kernel);

    void init(SplitMix64& rng);
    Tensor4<T> infer(const Tensor4<T>& x) const;
    Tensor4<T> forward(const Tensor4<T>& x);
    Tensor4<T> backward(const Tensor4<T>& dy);
    void collect(std::vector<Param<T>*>& out);

    std::optional<SimamConfig> simam;
    std::optional<CbamParams<T>> cbam;

private:
    std::optional<Tensor4<T>> input_;
    std::optional<SimamResult<T>> simam_cache_;
    std::optional<CbamResult<T>> cbam_cache_;
};

}  // namespace attnseg
