#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attnseg/layers.hpp"

namespace attnseg {

enum class AttentionSite { Skip, Decoder, Both };

std::string to_string(AttentionSite site);
std::string to_string(UpsampleMode mode);
AttentionSite parse_attention_site(const std::string& text);
UpsampleMode parse_upsample_mode(const std::string& text);

/// One U-Net variant. The four ablation variants differ only in
/// (use_simam, use_cbam): a = (F,F), b = (T,F), c = (F,T), d = (T,T).
struct ModelConfig {
    int in_channels = 3;
    int num_classes = 5;
    int depth = 4;
    int base_width = 16;
    bool use_simam = false;
    bool use_cbam = false;
    AttentionSite attention_site = AttentionSite::Skip;
    UpsampleMode upsample_mode = UpsampleMode::Bilinear;
    int cbam_r = 16;
    int sam_kernel = 7;
    double simam_lambda = 1e-4;
    std::uint64_t seed = 0;

    /// Channels at encoder stage i (i == depth is the bottleneck).
    int width(int stage) const noexcept { return base_width << stage; }

    /// Input height and width must be multiples of this.
    int size_multiple() const noexcept { return 1 << depth; }

    /// Throws ConfigError naming the offending field.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Ablation variant labels in report order.
inline constexpr char kVariantLabels[4] = {'a', 'b', 'c', 'd'};

/// `base` with the attention flags of variant a, b, c or d.
ModelConfig variant_config(ModelConfig base, char label);

/// Configurable U-Net: encoder stages of double convs and 2×2 max-pools, a
/// double-conv bottleneck, decoder stages that upsample, join the (optionally
/// attention-weighted) skip tensor by channel concatenation and double-conv,
/// and a 1×1 head producing raw logits.
template <class T>
class Model {
public:
    explicit Model(const ModelConfig& cfg);

    const ModelConfig& config() const noexcept { return cfg_; }

    /// Train mode caches activations for backward and updates BN running
    /// statistics; eval mode is equivalent to predict().
    Tensor4<T> forward(const Tensor4<T>& x, Mode mode);

    /// Eval-mode forward; pure.
    Tensor4<T> predict(const Tensor4<T>& x) const;

    /// Accumulates gradients of every Param from dL/dlogits.
    void backward(const Tensor4<T>& dlogits);

    /// All learnable parameters in deterministic graph order.
    std::vector<Param<T>*> params();
    std::vector<const Param<T>*> params() const;

    /// Batch-norm running statistics in deterministic graph order.
    std::vector<Buffer<T>> buffers();
    std::vector<ConstBuffer<T>> buffers() const;

    std::size_t param_count() const;
    void zero_grad();

    /// Number of attention nodes in the graph (0 for variant a).
    int attention_node_count() const;

    /// Multiplies every skip tensor by `scale` before it enters its attention
    /// node and the concat; 1 is the normal network. Graph-surgery hook for tests.
    void set_skip_scale(T scale) noexcept { skip_scale_ = scale; }

private:
    void check_input(const Tensor4<T>& x) const;
    Tensor4<T> scaled_skip(const Tensor4<T>& s) const;

    ModelConfig cfg_;
    std::vector<DoubleConv<T>> encoders_;
    DoubleConv<T> bottleneck_;
    std::vector<Upsample2x<T>> upsamplers_;
    std::vector<DoubleConv<T>> decoders_;
    std::vector<std::optional<AttentionNode<T>>> skip_attention_;
    std::vector<std::optional<AttentionNode<T>>> decoder_attention_;
    Conv2d<T> head_;
    T skip_scale_ = T(1);

    // Train-mode caches.
    std::vector<std::vector<std::uint32_t>> pool_argmax_;
    std::vector<Shape> skip_shapes_;
    std::vector<int> up_channels_;
    bool has_cache_ = false;
};

}  // namespace attnseg
