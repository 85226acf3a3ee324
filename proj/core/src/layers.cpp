#include "attnseg/layers.hpp"

#include <cmath>

namespace attnseg {

namespace {

[[noreturn]] void no_forward(const std::string& who) {
    throw StateError(who + ": backward called before a train-mode forward");
}

template <class T>
const Tensor4<T>* bias_ptr(const std::optional<Param<T>>& b) {
    return b ? &b->value : nullptr;
}

}  // namespace

template <class T>
void kaiming_uniform(Tensor4<T>& weight, int fan_in, SplitMix64& rng, double gain) {
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(std::max(1, fan_in)));
    for (auto& v : weight.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
}

// --- Conv2d ----------------------------------------------------------------

template <class T>
Conv2d<T>::Conv2d(const std::string& name, int c_in, int c_out, int kernel, bool with_bias)
    : weight(name + ".weight", Shape{c_out, c_in, kernel, kernel}), pad(kernel / 2) {
    if (with_bias) bias.emplace(name + ".bias", Shape{1, c_out, 1, 1});
}

template <class T>
void Conv2d<T>::init(SplitMix64& rng, double gain) {
    kaiming_uniform(weight.value, weight.shape().c * weight.shape().h * weight.shape().w, rng, gain);
    if (bias) bias->value.zero();
}

template <class T>
Tensor4<T> Conv2d<T>::infer(const Tensor4<T>& x) const {
    return conv2d(x, weight.value, bias_ptr(bias), 1, pad);
}

template <class T>
Tensor4<T> Conv2d<T>::forward(const Tensor4<T>& x) {
    input_ = x;
    return infer(x);
}

template <class T>
Tensor4<T> Conv2d<T>::backward(const Tensor4<T>& dy) {
    if (!input_) no_forward(weight.name);
    return conv2d_backward(*input_, weight.value, dy, 1, pad, &weight.grad,
                           bias ? &bias->grad : nullptr);
}

template <class T>
void Conv2d<T>::collect(std::vector<Param<T>*>& out) {
    out.push_back(&weight);
    if (bias) out.push_back(&*bias);
}

// --- BatchNorm2d -----------------------------------------------------------

template <class T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name_, int channels)
    : name(name_), gamma(name_ + ".gamma", Shape{1, channels, 1, 1}),
      beta(name_ + ".beta", Shape{1, channels, 1, 1}), state(channels) {
    gamma.value.fill(T(1));
}

template <class T>
Tensor4<T> BatchNorm2d<T>::infer(const Tensor4<T>& x) const {
    try {
        return batchnorm_eval(x, gamma.value, beta.value, state);
    } catch (const StateError& e) {
        throw StateError(name + ": " + e.what());
    }
}

template <class T>
Tensor4<T> BatchNorm2d<T>::forward(const Tensor4<T>& x) {
    cache_.emplace();
    return batchnorm(x, gamma.value, beta.value, state, Mode::Train, &*cache_);
}

template <class T>
Tensor4<T> BatchNorm2d<T>::backward(const Tensor4<T>& dy) {
    if (!cache_) no_forward(name);
    return batchnorm_backward(dy, *cache_, gamma.value, &gamma.grad, &beta.grad);
}

template <class T>
void BatchNorm2d<T>::collect(std::vector<Param<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

template <class T>
void BatchNorm2d<T>::collect_buffers(std::vector<Buffer<T>>& out) {
    out.push_back({name + ".running_mean", &state.running_mean});
    out.push_back({name + ".running_var", &state.running_var});
    out.push_back({name + ".tracked", &state.tracked});
}

// --- DoubleConv ------------------------------------------------------------

template <class T>
DoubleConv<T>::DoubleConv(const std::string& name, int c_in, int c_out)
    : conv1(name + ".conv1", c_in, c_out, 3), bn1(name + ".bn1", c_out),
      conv2(name + ".conv2", c_out, c_out, 3), bn2(name + ".bn2", c_out) {}

template <class T>
void DoubleConv<T>::init(SplitMix64& rng) {
    conv1.init(rng);
    conv2.init(rng);
}

template <class T>
Tensor4<T> DoubleConv<T>::infer(const Tensor4<T>& x) const {
    return relu(bn2.infer(conv2.infer(relu(bn1.infer(conv1.infer(x))))));
}

template <class T>
Tensor4<T> DoubleConv<T>::forward(const Tensor4<T>& x) {
    act1_ = relu(bn1.forward(conv1.forward(x)));
    act2_ = relu(bn2.forward(conv2.forward(act1_)));
    return act2_;
}

template <class T>
Tensor4<T> DoubleConv<T>::backward(const Tensor4<T>& dy) {
    Tensor4<T> g = conv2.backward(bn2.backward(relu_backward(dy, act2_)));
    return conv1.backward(bn1.backward(relu_backward(g, act1_)));
}

template <class T>
void DoubleConv<T>::collect(std::vector<Param<T>*>& out) {
    conv1.collect(out);
    bn1.collect(out);
    conv2.collect(out);
    bn2.collect(out);
}

template <class T>
void DoubleConv<T>::collect_buffers(std::vector<Buffer<T>>& out) {
    bn1.collect_buffers(out);
    bn2.collect_buffers(out);
}

// --- Upsample2x ------------------------------------------------------------

template <class T>
Upsample2x<T>::Upsample2x(const std::string& name, UpsampleMode mode_, int c_in, int c_out)
    : mode(mode_), out_channels_(mode_ == UpsampleMode::Bilinear ? c_in : c_out) {
    if (mode == UpsampleMode::TransposedConv) {
        weight.emplace(name + ".weight", Shape{c_in, c_out, 2, 2});
        bias.emplace(name + ".bias", Shape{1, c_out, 1, 1});
    }
}

template <class T>
void Upsample2x<T>::init(SplitMix64& rng) {
    if (weight) {
        kaiming_uniform(weight->value, weight->shape().n * 4, rng);
        bias->value.zero();
    }
}

template <class T>
Tensor4<T> Upsample2x<T>::infer(const Tensor4<T>& x) const {
    if (mode == UpsampleMode::Bilinear) return upsample_bilinear2x(x);
    return transposed_conv2x(x, weight->value, &bias->value);
}

template <class T>
Tensor4<T> Upsample2x<T>::forward(const Tensor4<T>& x) {
    if (mode == UpsampleMode::TransposedConv) input_ = x;
    else input_ = Tensor4<T>();
    return infer(x);
}

template <class T>
Tensor4<T> Upsample2x<T>::backward(const Tensor4<T>& dy) {
    if (!input_) no_forward("upsample");
    if (mode == UpsampleMode::Bilinear) return upsample_bilinear2x_backward(dy);
    return transposed_conv2x_backward(*input_, weight->value, dy, &weight->grad, &bias->grad);
}

template <class T>
void Upsample2x<T>::collect(std::vector<Param<T>*>& out) {
    if (weight) {
        out.push_back(&*weight);
        out.push_back(&*bias);
    }
}

// --- AttentionNode ---------------------------------------------------------

template <class T>
AttentionNode<T>::AttentionNode(const std::string& name, int channels,
                                std::optional<SimamConfig> simam_cfg, bool with_cbam,
                                int cbam_reduction, int sam_kernel)
    : simam(simam_cfg) {
    if (with_cbam) cbam.emplace(name + ".cbam", channels, cbam_reduction, sam_kernel);
}

template <class T>
void AttentionNode<T>::init(SplitMix64& rng) {
    if (!cbam) return;
    kaiming_uniform(cbam->mlp_w1.value, cbam->channels, rng);
    kaiming_uniform(cbam->mlp_w2.value, cbam->hidden, rng, kGateGain);
    kaiming_uniform(cbam->sam_conv.value, 2 * cbam->sam_kernel * cbam->sam_kernel, rng, kGateGain);
    cbam->sam_bias.value.zero();
}

template <class T>
Tensor4<T> AttentionNode<T>::infer(const Tensor4<T>& x) const {
    Tensor4<T> y = simam ? simam_apply(x, *simam) : x;
    if (cbam) y = cbam_apply(y, *cbam);
    return y;
}

template <class T>
Tensor4<T> AttentionNode<T>::forward(const Tensor4<T>& x) {
    input_ = x;
    simam_cache_.reset();
    cbam_cache_.reset();
    const Tensor4<T>* cur = &x;
    if (simam) {
        simam_cache_ = simam_forward(x, *simam);
        cur = &simam_cache_->y;
    }
    if (cbam) {
        cbam_cache_ = cbam_forward(*cur, *cbam);
        return cbam_cache_->y();
    }
    return *cur;
}

template <class T>
Tensor4<T> AttentionNode<T>::backward(const Tensor4<T>& dy) {
    if (!input_) no_forward("attention node");
    Tensor4<T> g = dy;
    if (cbam) {
        const Tensor4<T>& cbam_in = simam_cache_ ? simam_cache_->y : *input_;
        g = cbam_backward(cbam_in, *cbam_cache_, g, *cbam);
    }
    if (simam) g = simam_backward(*input_, *simam_cache_, g, *simam);
    return g;
}

template <class T>
void AttentionNode<T>::collect(std::vector<Param<T>*>& out) {
    if (!cbam) return;
    for (Param<T>* p : cbam->params()) out.push_back(p);
}

#define ATTNSEG_INSTANTIATE_LAYERS(T)                                  \
    template void kaiming_uniform(Tensor4<T>&, int, SplitMix64&, double);    \
    template class Conv2d<T>;                                          \
    template class BatchNorm2d<T>;                                     \
    template class DoubleConv<T>;                                      \
    template class Upsample2x<T>;                                      \
    template class AttentionNode<T>;

ATTNSEG_INSTANTIATE_LAYERS(float)
ATTNSEG_INSTANTIATE_LAYERS(double)

#undef ATTNSEG_INSTANTIATE_LAYERS

}  // namespace attnseg
