#include "attnseg/unet.hpp"

namespace attnseg {

std::string to_string(AttentionSite site) {
    switch (site) {
        case AttentionSite::Skip: return "skip";
        case AttentionSite::Decoder: return "decoder";
        case AttentionSite::Both: return "both";
    }
    return "skip";
}

std::string to_string(UpsampleMode mode) {
    return mode == UpsampleMode::Bilinear ? "bilinear" : "transposed_conv";
}

AttentionSite parse_attention_site(const std::string& text) {
    if (text == "skip") return AttentionSite::Skip;
    if (text == "decoder") return AttentionSite::Decoder;
    if (text == "both") return AttentionSite::Both;
    throw ConfigError("unknown attention_site '" + text + "' (expected skip, decoder or both)");
}

UpsampleMode parse_upsample_mode(const std::string& text) {
    if (text == "bilinear") return UpsampleMode::Bilinear;
    if (text == "transposed_conv") return UpsampleMode::TransposedConv;
    throw ConfigError("unknown upsample_mode '" + text +
                      "' (expected bilinear or transposed_conv)");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("model." + field + ": " + why);
    };
    if (in_channels < 1) fail("in_channels", "must be >= 1");
    if (num_classes < 1 || num_classes > 255) fail("num_classes", "must be in [1, 255]");
    if (depth < 1) fail("depth", "must be >= 1");
    if (depth > 10) fail("depth", "must be <= 10");
    if (base_width < 1) fail("base_width", "must be >= 1");
    if (cbam_r < 1) fail("cbam_r", "reduction ratio must be >= 1");
    if (sam_kernel < 1 || sam_kernel % 2 == 0) fail("sam_kernel", "must be odd and >= 1");
    if (!(simam_lambda > 0)) fail("simam_lambda", "must be > 0");
}

ModelConfig variant_config(ModelConfig base, char label) {
    switch (label) {
        case 'a': base.use_simam = false; base.use_cbam = false; break;
        case 'b': base.use_simam = true; base.use_cbam = false; break;
        case 'c': base.use_simam = false; base.use_cbam = true; break;
        case 'd': base.use_simam = true; base.use_cbam = true; break;
        default: throw ConfigError(std::string("unknown ablation variant '") + label + "'");
    }
    return base;
}

namespace {

template <class T>
std::optional<AttentionNode<T>> make_attention(const ModelConfig& cfg, const std::string& name,
                                               int channels, bool at_site) {
    if (!at_site || (!cfg.use_simam && !cfg.use_cbam)) return std::nullopt;
    std::optional<SimamConfig> simam;
    if (cfg.use_simam) simam = SimamConfig{cfg.simam_lambda};
    return AttentionNode<T>(name, channels, simam, cfg.use_cbam, cfg.cbam_r, cfg.sam_kernel);
}

}  // namespace

template <class T>
Model<T>::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int depth = cfg_.depth;
    const bool at_skip = cfg_.attention_site != AttentionSite::Decoder;
    const bool at_decoder = cfg_.attention_site != AttentionSite::Skip;

    int c_in = cfg_.in_channels;
    for (int i = 0; i < depth; ++i) {
        encoders_.emplace_back("enc" + std::to_string(i), c_in, cfg_.width(i));
        c_in = cfg_.width(i);
    }
    bottleneck_ = DoubleConv<T>("bottleneck", cfg_.width(depth - 1), cfg_.width(depth));

    upsamplers_.resize(depth);
    decoders_.resize(depth);
    skip_attention_.resize(depth);
    decoder_attention_.resize(depth);
    for (int i = depth - 1; i >= 0; --i) {
        const std::string tag = std::to_string(i);
        upsamplers_[i] = Upsample2x<T>("up" + tag, cfg_.upsample_mode, cfg_.width(i + 1),
                                       cfg_.width(i));
        skip_attention_[i] = make_attention<T>(cfg_, "skip_att" + tag, cfg_.width(i), at_skip);
        decoders_[i] = DoubleConv<T>("dec" + tag, cfg_.width(i) + upsamplers_[i].out_channels(),
                                     cfg_.width(i));
        decoder_attention_[i] =
            make_attention<T>(cfg_, "dec_att" + tag, cfg_.width(i), at_decoder);
    }
    head_ = Conv2d<T>("head", cfg_.width(0), cfg_.num_classes, 1);

    // Initialization consumes the stream in graph order; SimAM draws nothing,
    // so variants differing only in use_simam start from identical weights.
    SplitMix64 rng(cfg_.seed);
    for (auto& e : encoders_) e.init(rng);
    bottleneck_.init(rng);
    for (int i = depth - 1; i >= 0; --i) {
        upsamplers_[i].init(rng);
        if (skip_attention_[i]) skip_attention_[i]->init(rng);
        decoders_[i].init(rng);
        if (decoder_attention_[i]) decoder_attention_[i]->init(rng);
    }
    head_.init(rng, kGateGain);
}

template <class T>
void Model<T>::check_input(const Tensor4<T>& x) const {
    if (x.c() != cfg_.in_channels)
        throw DimensionError("c", "unet: expected " + std::to_string(cfg_.in_channels) +
                                      " input channels, got " + std::to_string(x.c()));
    const int multiple = cfg_.size_multiple();
    if (x.h() % multiple != 0 || x.h() == 0)
        throw DimensionError("h", "unet: input height " + std::to_string(x.h()) +
                                      " must be a positive multiple of " +
                                      std::to_string(multiple));
    if (x.w() % multiple != 0 || x.w() == 0)
        throw DimensionError("w", "unet: input width " + std::to_string(x.w()) +
                                      " must be a positive multiple of " +
                                      std::to_string(multiple));
}

template <class T>
Tensor4<T> Model<T>::scaled_skip(const Tensor4<T>& s) const {
    if (skip_scale_ == T(1)) return s;
    Tensor4<T> out = s;
    for (auto& v : out.vec()) v *= skip_scale_;
    return out;
}

template <class T>
Tensor4<T> Model<T>::predict(const Tensor4<T>& x) const {
    check_input(x);
    const int depth = cfg_.depth;
    std::vector<Tensor4<T>> skips(depth);
    Tensor4<T> cur = x;
    for (int i = 0; i < depth; ++i) {
        skips[i] = encoders_[i].infer(cur);
        cur = maxpool2x(skips[i]).y;
    }
    cur = bottleneck_.infer(cur);
    for (int i = depth - 1; i >= 0; --i) {
        const Tensor4<T> up = upsamplers_[i].infer(cur);
        Tensor4<T> skip = scaled_skip(skips[i]);
        if (skip_attention_[i]) skip = skip_attention_[i]->infer(skip);
        cur = decoders_[i].infer(concat_channels(skip, up, "enc" + std::to_string(i),
                                                 "up" + std::to_string(i)));
        if (decoder_attention_[i]) cur = decoder_attention_[i]->infer(cur);
    }
    return head_.infer(cur);
}

template <class T>
Tensor4<T> Model<T>::forward(const Tensor4<T>& x, Mode mode) {
    if (mode == Mode::Eval) return predict(x);
    check_input(x);
    const int depth = cfg_.depth;
    pool_argmax_.assign(depth, {});
    skip_shapes_.assign(depth, {});
    up_channels_.assign(depth, 0);

    std::vector<Tensor4<T>> skips(depth);
    Tensor4<T> cur = x;
    for (int i = 0; i < depth; ++i) {
        skips[i] = encoders_[i].forward(cur);
        skip_shapes_[i] = skips[i].shape();
        auto pooled = maxpool2x(skips[i]);
        pool_argmax_[i] = std::move(pooled.argmax);
        cur = std::move(pooled.y);
    }
    cur = bottleneck_.forward(cur);
    for (int i = depth - 1; i >= 0; --i) {
        const Tensor4<T> up = upsamplers_[i].forward(cur);
        up_channels_[i] = up.c();
        Tensor4<T> skip = scaled_skip(skips[i]);
        if (skip_attention_[i]) skip = skip_attention_[i]->forward(skip);
        cur = decoders_[i].forward(concat_channels(skip, up, "enc" + std::to_string(i),
                                                   "up" + std::to_string(i)));
        if (decoder_attention_[i]) cur = decoder_attention_[i]->forward(cur);
    }
    has_cache_ = true;
    return head_.forward(cur);
}

template <class T>
void Model<T>::backward(const Tensor4<T>& dlogits) {
    if (!has_cache_) throw StateError("unet: backward called before a train-mode forward");
    const int depth = cfg_.depth;
    std::vector<Tensor4<T>> dskips(depth);

    Tensor4<T> g = head_.backward(dlogits);
    for (int i = 0; i < depth; ++i) {
        if (decoder_attention_[i]) g = decoder_attention_[i]->backward(g);
        g = decoders_[i].backward(g);
        auto [dskip, dup] = concat_channels_backward(g, skip_shapes_[i].c);
        if (skip_attention_[i]) dskip = skip_attention_[i]->backward(dskip);
        if (skip_scale_ != T(1))
            for (auto& v : dskip.vec()) v *= skip_scale_;
        dskips[i] = std::move(dskip);
        g = upsamplers_[i].backward(dup);
    }
    g = bottleneck_.backward(g);
    for (int i = depth - 1; i >= 0; --i) {
        g = maxpool2x_backward(g, pool_argmax_[i], skip_shapes_[i]);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += dskips[i][k];
        g = encoders_[i].backward(g);
    }
}

template <class T>
std::vector<Param<T>*> Model<T>::params() {
    std::vector<Param<T>*> out;
    for (auto& e : encoders_) e.collect(out);
    bottleneck_.collect(out);
    for (int i = cfg_.depth - 1; i >= 0; --i) {
        upsamplers_[i].collect(out);
        if (skip_attention_[i]) skip_attention_[i]->collect(out);
        decoders_[i].collect(out);
        if (decoder_attention_[i]) decoder_attention_[i]->collect(out);
    }
    head_.collect(out);
    return out;
}

template <class T>
std::vector<const Param<T>*> Model<T>::params() const {
    auto mut = const_cast<Model*>(this)->params();
    return {mut.begin(), mut.end()};
}

template <class T>
std::vector<Buffer<T>> Model<T>::buffers() {
    std::vector<Buffer<T>> out;
    for (auto& e : encoders_) e.collect_buffers(out);
    bottleneck_.collect_buffers(out);
    for (int i = cfg_.depth - 1; i >= 0; --i) decoders_[i].collect_buffers(out);
    return out;
}

template <class T>
std::vector<ConstBuffer<T>> Model<T>::buffers() const {
    // Collection only takes addresses; nothing is written through them.
    std::vector<ConstBuffer<T>> out;
    for (const Buffer<T>& b : const_cast<Model*>(this)->buffers()) out.push_back({b.name, b.tensor});
    return out;
}

template <class T>
std::size_t Model<T>::param_count() const {
    std::size_t total = 0;
    for (const Param<T>* p : params()) total += p->size();
    return total;
}

template <class T>
void Model<T>::zero_grad() {
    for (Param<T>* p : params()) p->zero_grad();
}

template <class T>
int Model<T>::attention_node_count() const {
    int count = 0;
    for (const auto& a : skip_attention_) count += a.has_value();
    for (const auto& a : decoder_attention_) count += a.has_value();
    return count;
}

template class Model<float>;
template class Model<double>;

}  // namespace attnseg
