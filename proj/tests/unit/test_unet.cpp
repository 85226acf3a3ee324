#include <gtest/gtest.h>

#include <cmath>

#include "attnseg/layers.hpp"
#include "attnseg/unet.hpp"
#include "oracles.hpp"

using namespace attnseg;
using attnseg::testing::ledger_cbam;
using attnseg::testing::ledger_model;
using attnseg::testing::random_tensor;

namespace {

ModelConfig tiny(char variant = 'a') {
    ModelConfig c;
    c.depth = 2;
    c.base_width = 4;
    c.num_classes = 3;
    c.cbam_r = 2;
    c.sam_kernel = 3;
    c.seed = 5;
    return variant_config(c, variant);
}

std::vector<float> flat_params(const Model<float>& m) {
    std::vector<float> out;
    for (const Param<float>* p : m.params()) out.insert(out.end(), p->value.vec().begin(), p->value.vec().end());
    return out;
}

}  // namespace

TEST(ParamCount, SmallLayers) {
    Conv2d<float> conv("c", 1, 1, 3);
    std::vector<Param<float>*> ps;
    conv.collect(ps);
    std::size_t n = 0;
    for (auto* p : ps) n += p->size();
    EXPECT_EQ(n, 10u);

    BatchNorm2d<float> bn("bn", 7);
    ps.clear();
    bn.collect(ps);
    n = 0;
    for (auto* p : ps) n += p->size();
    EXPECT_EQ(n, 14u);
}

TEST(ParamCount, MatchesHandLedger) {
    for (UpsampleMode up : {UpsampleMode::Bilinear, UpsampleMode::TransposedConv})
        for (AttentionSite site : {AttentionSite::Skip, AttentionSite::Decoder, AttentionSite::Both})
            for (char v : {'a', 'b', 'c', 'd'}) {
                ModelConfig c = tiny(v);
                c.upsample_mode = up;
                c.attention_site = site;
                EXPECT_EQ(Model<float>(c).param_count(), ledger_model(c))
                    << v << " " << to_string(up) << " " << to_string(site);
            }
    // depth 2, base 4, bilinear, K 5 written out in full
    ModelConfig c;
    c.depth = 2;
    c.base_width = 4;
    c.num_classes = 5;
    const std::size_t enc0 = (9 * 3 * 4 + 4) + 8 + (9 * 4 * 4 + 4) + 8;
    const std::size_t enc1 = (9 * 4 * 8 + 8) + 16 + (9 * 8 * 8 + 8) + 16;
    const std::size_t bott = (9 * 8 * 16 + 16) + 32 + (9 * 16 * 16 + 16) + 32;
    const std::size_t dec1 = (9 * 24 * 8 + 8) + 16 + (9 * 8 * 8 + 8) + 16;
    const std::size_t dec0 = (9 * 12 * 4 + 4) + 8 + (9 * 4 * 4 + 4) + 8;
    const std::size_t head = 4 * 5 + 5;
    EXPECT_EQ(Model<float>(c).param_count(), enc0 + enc1 + bott + dec1 + dec0 + head);
}

TEST(ParamCount, AttentionDeltas) {
    ModelConfig base;
    base.depth = 4;
    base.base_width = 16;
    const auto count = [&](char v) { return Model<float>(variant_config(base, v)).param_count(); };
    EXPECT_EQ(count('b'), count('a'));
    EXPECT_EQ(count('d'), count('c'));
    std::size_t delta = 0;
    for (int i = 0; i < base.depth; ++i) {
        const std::size_t c = base.width(i), r = std::min<std::size_t>(16, c);
        delta += 2 * c * c / r + 2 * 7 * 7 + 1;
        EXPECT_EQ(ledger_cbam(c, r, 7), 2 * c * c / r + 2 * 7 * 7 + 1);
    }
    EXPECT_EQ(count('c') - count('a'), delta);
}

TEST(Model, LogitShapeAndAttentionNodes) {
    ModelConfig c;
    c.depth = 4;
    c.base_width = 4;
    c.num_classes = 5;
    SplitMix64 rng(1);
    const TensorF x = random_tensor<float>({1, 3, 64, 64}, rng, 0, 1);
    for (char v : {'a', 'b', 'c', 'd'}) {
        Model<float> m(variant_config(c, v));
        EXPECT_EQ(m.forward(x, Mode::Train).shape(), (Shape{1, 5, 64, 64}));
        EXPECT_EQ(m.predict(x).shape(), (Shape{1, 5, 64, 64}));
        EXPECT_EQ(m.attention_node_count(), v == 'a' ? 0 : 4);
    }
}

TEST(Model, DivisibilityChecked) {
    Model<float> m(tiny());
    try {
        m.predict(TensorF(1, 3, 16, 18));
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("4"), std::string::npos);
    }
    EXPECT_THROW(m.predict(TensorF(1, 2, 16, 16)), DimensionError);
}

TEST(Model, InvalidConfigRejected) {
    ModelConfig c = tiny();
    c.depth = 0;
    EXPECT_THROW(Model<float>{c}, ConfigError);
    c = tiny();
    c.sam_kernel = 4;
    EXPECT_THROW(Model<float>{c}, ConfigError);
    c = tiny();
    c.cbam_r = 0;
    EXPECT_THROW(Model<float>{c}, ConfigError);
}

TEST(Model, EvalForwardIsPure) {
    Model<float> m(tiny('d'));
    SplitMix64 rng(2);
    const TensorF x = random_tensor<float>({2, 3, 16, 16}, rng, 0, 1);
    m.forward(x, Mode::Train);  // populate BN statistics
    const TensorF a = m.predict(x);
    const TensorF b = m.forward(x, Mode::Eval);
    const TensorF c = m.predict(x);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
}

TEST(Model, SeedFixesInitialParams) {
    EXPECT_EQ(flat_params(Model<float>(tiny('c'))), flat_params(Model<float>(tiny('c'))));
    ModelConfig other = tiny('c');
    other.seed = 6;
    EXPECT_NE(flat_params(Model<float>(tiny('c'))), flat_params(Model<float>(other)));
}

TEST(Model, InitialisationConventions) {
    Model<float> m(tiny('c'));
    for (const Param<float>* p : m.params()) {
        if (p->name.ends_with(".gamma"))
            for (float v : p->value.vec()) EXPECT_EQ(v, 1.0f) << p->name;
        if (p->name.ends_with(".beta") || p->name.ends_with(".bias"))
            for (float v : p->value.vec()) EXPECT_EQ(v, 0.0f) << p->name;
        if (p->name.ends_with("conv1.weight")) {
            const double fan_in = p->shape().c * 9.0;
            const double bound = std::sqrt(6.0 / fan_in);
            for (float v : p->value.vec()) EXPECT_LE(std::abs(v), bound) << p->name;
        }
    }
}

TEST(Model, ZeroedSkipsMakeVariantsAAndBIdentical) {
    // a and b share every parameter; they differ only in the SimAM nodes on
    // the skip path, so removing the skip contribution removes the difference.
    Model<float> a(tiny('a')), b(tiny('b'));
    ASSERT_EQ(flat_params(a), flat_params(b));
    SplitMix64 rng(3);
    const TensorF x = random_tensor<float>({2, 3, 16, 16}, rng, 0, 1);
    a.forward(x, Mode::Train);
    b.forward(x, Mode::Train);
    EXPECT_NE(a.predict(x), b.predict(x));
    Model<float> a0(tiny('a')), b0(tiny('b'));
    a0.set_skip_scale(0.0f);
    b0.set_skip_scale(0.0f);
    a0.forward(x, Mode::Train);
    b0.forward(x, Mode::Train);
    EXPECT_EQ(a0.predict(x), b0.predict(x));
}

TEST(Model, BackwardContracts) {
    Model<double> m(tiny('d'));
    EXPECT_THROW(m.backward(TensorD(1, 3, 16, 16)), StateError);

    SplitMix64 rng(4);
    const TensorD x = random_tensor<double>({1, 3, 16, 16}, rng, 0, 1);
    const TensorD y = m.forward(x, Mode::Train);
    m.backward(TensorD(y.shape()));
    for (const Param<double>* p : m.params())
        for (double g : p->grad.vec()) ASSERT_EQ(g, 0.0) << p->name;

    const TensorD r = random_tensor<double>(y.shape(), rng);
    m.backward(r);
    std::vector<TensorD> once;
    for (const Param<double>* p : m.params()) once.push_back(p->grad);
    m.backward(r);
    std::size_t i = 0;
    for (const Param<double>* p : m.params()) {
        for (std::size_t j = 0; j < p->grad.size(); ++j)
            ASSERT_NEAR(p->grad[j], 2 * once[i][j], 1e-12 * (1 + std::abs(once[i][j]))) << p->name;
        ++i;
    }
    m.zero_grad();
    for (const Param<double>* p : m.params())
        for (double g : p->grad.vec()) ASSERT_EQ(g, 0.0);
}

TEST(Model, AttentionSitesKeepShapes) {
    SplitMix64 rng(5);
    const TensorF x = random_tensor<float>({1, 3, 16, 32}, rng, 0, 1);
    for (AttentionSite site : {AttentionSite::Skip, AttentionSite::Decoder, AttentionSite::Both})
        for (UpsampleMode up : {UpsampleMode::Bilinear, UpsampleMode::TransposedConv}) {
            ModelConfig c = tiny('d');
            c.attention_site = site;
            c.upsample_mode = up;
            Model<float> m(c);
            EXPECT_EQ(m.forward(x, Mode::Train).shape(), (Shape{1, 3, 16, 32}));
            EXPECT_EQ(m.attention_node_count(), site == AttentionSite::Both ? 4 : 2);
        }
}

TEST(Model, BuffersAreOrderedAndNamed) {
    Model<float> m(tiny());
    const auto bufs = std::as_const(m).buffers();
    ASSERT_FALSE(bufs.empty());
    EXPECT_EQ(bufs.front().name, "enc0.bn1.running_mean");
    // three buffers per BN, two BNs per double conv, 2·depth + 1 double convs
    EXPECT_EQ(bufs.size(), 3u * 2u * 5u);
}
